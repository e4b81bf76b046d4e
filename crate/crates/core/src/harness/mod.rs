//! Monte Carlo orchestration: ensembles, statistics, identity checks and
//! moment curves.

pub mod checks;
pub mod ensemble;
pub mod lp;
pub mod report;
pub mod stats;

pub use checks::{
    duality_test, exp_functional_check, gaussian_moment_check, gaussian_moment_report, martingale_mean_test,
    spine_law_test, spine_structure_test, GaussianCheck,
};
pub use ensemble::{plain_ensemble, run_replicates, spine_ensemble, EnsembleSpec, PlainEnsemble, SpineEnsemble};
pub use lp::{classify, excess_growth_rate, lp_moment_curve, LpOutcome, MomentCurve, Verdict};
pub use report::{CheckRow, Report};
pub use stats::{merge_stats, Estimate, StatAccumulator};

/// Deliberate perturbations that an identity check must reject.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativeControl {
    /// `c_l` inflated by 10% in the martingale normalisation.
    WrongCLambda,
    /// Spine sampled without its drift.
    WrongDrift,
    /// Continuous immigration at half the correct rate.
    WrongImmigration,
    /// PDE oracle solved with `beta` inflated by 20%.
    WrongBranching,
}

impl NegativeControl {
    pub const C_LAMBDA_FACTOR: f64 = 1.1;
    pub const IMMIGRATION_FACTOR: f64 = 0.5;
    pub const BRANCHING_FACTOR: f64 = 1.2;

    pub const ALL: [NegativeControl; 4] = [
        NegativeControl::WrongCLambda,
        NegativeControl::WrongDrift,
        NegativeControl::WrongImmigration,
        NegativeControl::WrongBranching,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NegativeControl::WrongCLambda => "wrong-c-lambda",
            NegativeControl::WrongDrift => "wrong-drift",
            NegativeControl::WrongImmigration => "wrong-immigration",
            NegativeControl::WrongBranching => "wrong-branching",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

/// Identifies the run a report belongs to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunMeta {
    pub config_hash: String,
    pub seed: u64,
}
