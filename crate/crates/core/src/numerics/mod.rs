//! Dense/sparse linear algebra, a reverse-mode tape, Adam, and a
//! finite-difference gradient checker.

pub mod dense;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod rng;
pub mod sparse;
pub mod tape;

pub use dense::DenseMatrix;
pub use gradcheck::finite_diff_check;
pub use optim::{Adam, AdamConfig, Moments};
pub use params::{ParamId, ParamStore, ParamTensor};
pub use rng::RngStream;
pub use sparse::SparseMatrix;
pub use tape::{Tape, Var};
