//! Sensing-bound analysis and joint transmit/RIS design for RIS-aided
//! integrated sensing and communication when part of the RIS is faulty.
//!
//! * [`scenario`] builds configurations, fault realizations and channels.
//! * [`signal`] holds transmit designs and the SINR forms.
//! * [`bounds`] computes pseudo-true parameters, the A/B information blocks,
//!   the misspecified bound and the perfect-model CRB.
//! * [`optimizer`] runs the alternating beamforming/phase design and the
//!   benchmark schemes.

pub mod bounds;
pub mod linalg;
pub mod optimizer;
pub mod scenario;
pub mod signal;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("degenerate design: {0}")]
    DegenerateDesign(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("infeasible scenario: {0}")]
    InfeasibleScenario(String),
    #[error(transparent)]
    Conic(#[from] faultyris_conic::ConicError),
}

pub type Result<T> = std::result::Result<T, Error>;
