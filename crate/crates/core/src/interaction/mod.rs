//! Attention factorization into structure and strength, and the exact
//! AND-interaction decomposition of masked-input value functions.

mod attention;
mod harsanyi;

pub use attention::{attention, factorize_attention, BinarizeRule, StructureMask};
pub use harsanyi::{
    harsanyi_and, reconstruct_value, sparsify, FnOracle, HarsanyiTable, MaskedOracle, Subset,
    TableOracle, MAX_VARIABLES,
};
