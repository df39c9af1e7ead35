//! Dense arrays and the reverse-mode differentiation engine every trainable
//! component runs on.

mod array;
mod gradcheck;
mod tape;

pub use array::{cosine_similarity, matmul, Array};
pub use gradcheck::finite_diff_check;
pub use tape::{Gradients, Tape, Var, LAYER_NORM_EPS};
