//! Optimal sensor placement for Bayesian linear inverse problems whose
//! parameter-to-observable map is an integral kernel.
//!
//! The pipeline: discretize the domains ([`domains`]), build a Chebyshev
//! low-rank surrogate of the kernel matrix ([`chebyshev`]), evaluate A- or
//! D-optimal criteria and their derivatives through a small eigenproblem
//! ([`objective`]), solve the relaxed design with SQP ([`sqp`]) whose
//! subproblems go to a structured interior-point QP solver ([`qp`]), then
//! round with sum-up rounding ([`rounding`]). [`lidar`] provides the
//! advection-diffusion forward model used for beam-direction design.

pub mod chebyshev;
pub mod domains;
pub mod error;
pub mod lidar;
pub mod linalg;
pub mod objective;
pub mod par;
pub mod pipeline;
pub mod qp;
pub mod rounding;
pub mod sqp;

pub use error::{Error, Result};
