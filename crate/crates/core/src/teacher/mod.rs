//! Teacher interaction maps: construction, synthetic generation and the TIM
//! interchange format.

mod map;
mod tim;

pub use map::{
    classification_teacher, dense_teacher, mask_teacher, PromptId, Provenance, StrengthRole, StrengthVector,
    TeacherMap, TeacherOutcome,
};
pub use tim::{decode_tim, encode_tim, read_tim, write_tim, TIM_HEADER_LEN, TIM_MAGIC, TIM_VERSION};
