//! Dense/sparse tensors, a reverse-mode tape, and the Adam optimiser: just
//! enough machinery to differentiate the recommender end to end.

pub mod adam;
pub mod complex;
pub mod container;
pub mod fft;
pub mod gradcheck;
pub mod init;
pub mod params;
pub mod sparse;
pub mod tape;
pub mod tensor;

pub use adam::{Adam, AdamState};
pub use complex::ComplexTensor;
pub use container::{Container, Payload};
pub use fft::RealFft;
pub use gradcheck::{grad_check, GradCheckReport};
pub use init::xavier_uniform;
pub use params::{ParamId, ParamStore, ParamValue, Parameter};
pub use sparse::SparseMatrix;
pub use tape::{Tape, Var};
pub use tensor::{matmul, matmul_nt, Tensor};
