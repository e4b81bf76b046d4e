//! Simulation of supercritical super-Brownian motion with a general branching
//! mechanism: the mechanism and its flows, a PDE oracle for Laplace
//! functionals, a branching-particle approximation, the spine construction
//! of the tilted process, and the Monte Carlo checks built on them.

// `!(x > 0.0)` style guards are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod harness;
pub mod measure;
pub mod mechanism;
pub mod numerics;
pub mod particles;
pub mod pde;
pub mod rng;
pub mod spine;

pub use config::{ExperimentConfig, MomentEstimator};
pub use error::{Error, Result};
pub use harness::{NegativeControl, Report, RunMeta};
pub use measure::{AtomicMeasure, TestFunction};
pub use mechanism::{BranchingMechanism, JumpMeasure, TruncatedJumps};
pub use particles::{ParticleCloud, SimParams, Stepper};
pub use pde::{Field, Grid1D};
pub use spine::{SpineParams, SpinePath};
