//! Eigencurve tracing and block-structure inference for 1-parameter matrix flows.
//!
//! A [`MatrixFlow`](flow::MatrixFlow) maps a real parameter `t` to a square
//! complex matrix. The [`tracker`] follows every eigenvalue of the flow over an
//! interval with a Zhang neural network (ZNN) propagator, with a
//! re-diagonalize-and-match path for verification. [`crossing`] turns traces
//! into crossing data (`R1`) and near-approach data (`Rc`), and
//! [`decomposition`] infers a signed label vector `ve` whose distinct labels
//! bound the number of diagonal blocks a uniform similarity can split the flow
//! into. [`session`] persists the whole analysis.

pub mod crossing;
pub mod decomposition;
pub mod error;
pub mod flow;
pub mod formula;
pub mod gallery;
pub mod linalg;
pub mod par;
pub mod session;
pub mod tracker;

pub use error::{Error, Result, TouchError};
pub use flow::{Field, MatrixFlow, Similarity, SimilarityKind, Structure};
pub use par::Execution;

/// Dense complex matrix used throughout the crate.
pub type CMatrix = nalgebra::DMatrix<num_complex::Complex64>;
/// Dense complex column vector.
pub type CVector = nalgebra::DVector<num_complex::Complex64>;
pub use num_complex::Complex64;
