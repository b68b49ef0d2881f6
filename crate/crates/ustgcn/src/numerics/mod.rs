//! Dense/sparse tensor primitives, the reverse-mode tape, Adam, and the
//! finite-difference gradient checker.
//!
//! All operations are pure functions of their inputs; constructed tensors and
//! sparse matrices are immutable and freely shareable across threads. A
//! [`tape::Tape`] or [`adam::AdamState`] belongs to a single training thread.

pub mod adam;
pub mod gradcheck;
pub mod sparse;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamState};
pub use gradcheck::finite_diff_check;
pub use sparse::{CsrBuilder, SparseMatrix};
pub use tape::{Gradients, Tape, ValueId};
pub use tensor::DenseTensor;
