//! Quadratic time-frequency invariant spectral estimation for underspread
//! nonstationary Gaussian processes on a periodic discrete lattice.

pub mod error;
pub mod estimator;
pub mod lattice;
pub mod linalg;
pub mod multiwindow;
pub mod process;
pub mod rng;
pub mod tf;
pub mod validation;

pub use error::{Result, TfError};
pub use tf::{
    hs_inner, kernel_from_spreading, operator_tf_shift, spreading_function, symplectic_dft,
    symplectic_forward, symplectic_inverse, tf_shift, weyl_symbol, AmbiguityField, Direction,
    OperatorKernel, Signal, TfField,
};
pub use estimator::{ErrorReport, PrototypeSpec};
pub use multiwindow::{RankChoice, WindowSet};
pub use process::{CorrelationModel, LtvSystem, SpreadSupport};
pub use validation::{AppendixReport, IsserlisReport, MCReport};
