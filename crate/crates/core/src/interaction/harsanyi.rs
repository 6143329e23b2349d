//! Exact AND-interaction (Harsanyi dividend) decomposition of a set function.
//!
//! For a value function `v` over subsets of `n` input variables, the effect
//! of a subset `S` is `I(S) = Σ_{T ⊆ S} (−1)^{|S|−|T|} v(T)`, and every value
//! is recovered as `v(S) = Σ_{T ⊆ S} I(T)`.

use std::cmp::Ordering;
use std::fmt;
use std::io::Write;

use crate::error::{Error, Result};

/// Largest supported variable count (2¹⁶ oracle calls).
pub const MAX_VARIABLES: usize = 16;

/// A subset of `{1, …, n}` stored as a bitmask (bit `i` ↔ variable `i + 1`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Subset(pub u32);

impl Subset {
    pub const EMPTY: Subset = Subset(0);

    pub fn full(n: usize) -> Self {
        Subset(((1u64 << n) - 1) as u32)
    }

    /// Builds a subset from 1-based variable ids.
    pub fn of(vars: &[usize]) -> Self {
        Subset(vars.iter().fold(0, |m, &v| m | (1 << (v - 1))))
    }

    pub fn contains(self, var: usize) -> bool {
        var >= 1 && self.0 & (1 << (var - 1)) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_subset_of(self, other: Subset) -> bool {
        self.0 & !other.0 == 0
    }

    /// 1-based members in increasing order.
    pub fn elements(self) -> Vec<usize> {
        (0..32).filter(|b| self.0 & (1 << b) != 0).map(|b| b + 1).collect()
    }

    /// All subsets of `self`, starting from `self` and ending at the empty set.
    pub fn submasks(self) -> impl Iterator<Item = Subset> {
        let full = self.0;
        let mut next = Some(full);
        std::iter::from_fn(move || {
            let cur = next?;
            next = if cur == 0 { None } else { Some((cur - 1) & full) };
            Some(Subset(cur))
        })
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.elements().iter().map(usize::to_string).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

/// A deterministic black-box value function over variable subsets. Variables
/// outside the subset are replaced by the oracle's declared baseline.
pub trait MaskedOracle {
    fn variables(&self) -> usize;
    fn value(&self, subset: Subset) -> Result<f64>;
}

/// Oracle backed by a closure.
pub struct FnOracle<F> {
    n: usize,
    f: F,
}

impl<F: Fn(Subset) -> f64> FnOracle<F> {
    pub fn new(n: usize, f: F) -> Self {
        Self { n, f }
    }
}

impl<F: Fn(Subset) -> f64> MaskedOracle for FnOracle<F> {
    fn variables(&self) -> usize {
        self.n
    }

    fn value(&self, subset: Subset) -> Result<f64> {
        Ok((self.f)(subset))
    }
}

/// Oracle given as an explicit table of `2ⁿ` values indexed by bitmask.
#[derive(Clone, Debug)]
pub struct TableOracle {
    n: usize,
    values: Vec<f64>,
}

impl TableOracle {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let len = values.len();
        if len == 0 || !len.is_power_of_two() || len > 1 << MAX_VARIABLES {
            return Err(Error::invalid(format!(
                "oracle table needs 2^n values with n <= {MAX_VARIABLES}, got {len}"
            )));
        }
        Ok(Self {
            n: len.trailing_zeros() as usize,
            values,
        })
    }
}

impl MaskedOracle for TableOracle {
    fn variables(&self) -> usize {
        self.n
    }

    fn value(&self, subset: Subset) -> Result<f64> {
        Ok(self.values[subset.0 as usize])
    }
}

/// Interaction effect for each of the `2ⁿ` subsets.
#[derive(Clone, Debug, PartialEq)]
pub struct HarsanyiTable {
    n: usize,
    effects: Vec<f64>,
}

impl HarsanyiTable {
    pub fn variables(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.effects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.effects.is_empty()
    }

    pub fn effect(&self, s: Subset) -> Option<f64> {
        self.effects.get(s.0 as usize).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Subset, f64)> + '_ {
        self.effects
            .iter()
            .enumerate()
            .map(|(i, &e)| (Subset(i as u32), e))
    }

    /// One line per subset: `S=<bitmask-hex> I=<value>`.
    pub fn write_listing<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let width = self.n.div_ceil(4).max(1);
        for (s, e) in self.iter() {
            writeln!(w, "S={:0width$x} I={e}", s.0)?;
        }
        Ok(())
    }
}

/// Enumerates all `2ⁿ` oracle values and Möbius-inverts them.
pub fn harsanyi_and(oracle: &dyn MaskedOracle) -> Result<HarsanyiTable> {
    let n = oracle.variables();
    if n > MAX_VARIABLES {
        return Err(Error::invalid(format!(
            "{n} variables exceeds the enumeration limit of {MAX_VARIABLES}"
        )));
    }
    let mut f = Vec::with_capacity(1 << n);
    for mask in 0..(1u32 << n) {
        let v = oracle.value(Subset(mask))?;
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("oracle value at {} is {v}", Subset(mask))));
        }
        f.push(v);
    }
    // in-place subset Möbius transform, one variable at a time
    for bit in 0..n {
        let b = 1usize << bit;
        for mask in 0..f.len() {
            if mask & b != 0 {
                f[mask] -= f[mask ^ b];
            }
        }
    }
    Ok(HarsanyiTable { n, effects: f })
}

/// `Σ_{T ⊆ S} I(T)`.
pub fn reconstruct_value(table: &HarsanyiTable, s: Subset) -> Result<f64> {
    if !s.is_subset_of(Subset::full(table.n)) {
        return Err(Error::invalid(format!(
            "subset {s} out of range for {} variables",
            table.n
        )));
    }
    Ok(s.submasks().map(|t| table.effects[t.0 as usize]).sum())
}

/// The `k` subsets with the largest `|I(S)|`, descending. Ties go to the
/// smaller subset, then to the lexicographically smaller member list.
pub fn sparsify(table: &HarsanyiTable, k: usize) -> Vec<(Subset, f64)> {
    let mut all: Vec<(Subset, f64)> = table.iter().collect();
    all.sort_by(|a, b| rank_order(*a, *b));
    all.truncate(k);
    all
}

fn rank_order(a: (Subset, f64), b: (Subset, f64)) -> Ordering {
    b.1.abs()
        .total_cmp(&a.1.abs())
        .then(a.0.len().cmp(&b.0.len()))
        .then_with(|| a.0.elements().cmp(&b.0.elements()))
}
