//! Risk-aware adaptive robust MPC.
//!
//! A tube-based robust MPC whose constraint tightening is co-designed online
//! by two adaptive loops:
//!
//! * a medium-frequency risk engine that ranks candidate uncertainty
//!   scenarios with a GP-UCB criticality surrogate and rebuilds a learned
//!   prediction-error set (LPES) from the most critical ones, and
//! * a low-frequency regulator that steers a scalar safety margin with a
//!   self-correcting stochastic approximation so the closed loop hits a
//!   target constraint-violation rate.
//!
//! The crate ships the controller itself ([`tube`]), the supporting numerics
//! (dense ADMM QP solver, simplex LP, Riccati/Lyapunov solvers, exact GP
//! regression), the closed-loop simulator with a DC-DC converter benchmark,
//! and a text config front end used by the CLI.

pub mod config;
pub mod criticality;
pub mod error;
pub mod gp;
pub mod lp;
pub mod qp;
pub mod regulator;
pub mod riccati;
pub mod risk_engine;
pub mod simulator;
pub mod system;
pub mod tube;

pub use error::{Error, Result};

/// Dense dynamic matrix used throughout the crate.
pub type Mat = nalgebra::DMatrix<f64>;
/// Dense dynamic vector used throughout the crate.
pub type Vec64 = nalgebra::DVector<f64>;
