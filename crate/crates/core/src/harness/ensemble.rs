//! Replicate ensembles. Each replicate draws from its own stream keyed by
//! `(seed, channel, replicate)`, and results are returned in replicate order,
//! so the worker count changes wall time only.

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::measure::{AtomicMeasure, TestFunction};
use crate::mechanism::BranchingMechanism;
use crate::particles::{evolve_observed, observation_steps, seed_cloud, SimParams, Stepper};
use crate::rng::{label, stream};
use crate::spine::{run_spine_system, ImmigrationKind, SpineParams, ZParts};

/// Runs `task(i)` for `i in 0..n` on a pool of `workers` threads and returns
/// the results in index order.
pub fn run_replicates<T, F>(n: usize, workers: usize, task: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    if workers == 0 {
        return Err(invalid("workers", "need at least one worker"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| invalid("workers", e.to_string()))?;
    pool.install(|| (0..n as u64).into_par_iter().map(&task).collect())
}

/// What every ensemble needs.
#[derive(Debug, Clone)]
pub struct EnsembleSpec<'a> {
    pub mech: &'a BranchingMechanism,
    pub mu: &'a AtomicMeasure,
    pub sim: SimParams,
    pub lam: f64,
    pub horizon: f64,
    pub times: &'a [f64],
    pub replicates: usize,
    pub seed: u64,
    pub workers: usize,
}

/// One plain replicate: per observation time, `log <e^{l.}, X_t>` and
/// `<f, X_t>` for every test function.
#[derive(Debug, Clone, PartialEq)]
pub struct PlainReplicate {
    pub log_exp_moment: Vec<f64>,
    pub functionals: Vec<Vec<f64>>,
    pub mass: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlainEnsemble {
    pub times: Vec<f64>,
    pub lam: f64,
    pub functions: Vec<TestFunction>,
    pub replicates: Vec<PlainReplicate>,
    pub seeding_error: f64,
}

impl PlainEnsemble {
    /// `Z_t(l)` values at observation `k`, using `lambda_c_lambda` for the
    /// time factor (the true value unless a negative control perturbs it).
    pub fn martingale(&self, k: usize, lambda_c_lambda: f64) -> Vec<f64> {
        let t = self.times[k];
        self.replicates
            .iter()
            .map(|r| (lambda_c_lambda * t + r.log_exp_moment[k]).exp())
            .collect()
    }

    pub fn functional(&self, k: usize, f: usize) -> Vec<f64> {
        self.replicates.iter().map(|r| r.functionals[k][f]).collect()
    }

    pub fn mass(&self, k: usize) -> Vec<f64> {
        self.replicates.iter().map(|r| r.mass[k]).collect()
    }
}

pub fn plain_ensemble(spec: &EnsembleSpec<'_>, functions: &[TestFunction]) -> Result<PlainEnsemble> {
    spec.mech.c_lambda(spec.lam)?;
    let stepper = Stepper::new(spec.mech, spec.sim)?;
    let steps = observation_steps(spec.times, spec.sim.dt, spec.horizon)?;
    let seeding_error = seed_cloud(spec.mu, spec.sim.epsilon).rounding_error;
    let replicates = run_replicates(spec.replicates, spec.workers, |i| {
        let mut rng = stream(spec.seed, &[label::PLAIN, i]);
        let mut cloud = seed_cloud(spec.mu, spec.sim.epsilon).cloud;
        let n = steps.len();
        let mut out = PlainReplicate {
            log_exp_moment: Vec::with_capacity(n),
            functionals: Vec::with_capacity(n),
            mass: Vec::with_capacity(n),
        };
        evolve_observed(&mut cloud, &stepper, &steps, &mut rng, |_, c| {
            out.log_exp_moment.push(c.log_exp_moment(spec.lam));
            out.functionals
                .push(functions.iter().map(|f| c.integrate(|x| f.eval(x))).collect());
            out.mass.push(c.total_mass());
        });
        Ok(out)
    })?;
    Ok(PlainEnsemble {
        times: spec.times.to_vec(),
        lam: spec.lam,
        functions: functions.to_vec(),
        replicates,
        seeding_error,
    })
}

/// One spine replicate, per observation time.
#[derive(Debug, Clone, PartialEq)]
pub struct SpineReplicate {
    pub z: Vec<ZParts>,
    /// `<f, Lambda_t>` per test function.
    pub functionals: Vec<Vec<f64>>,
    pub mass: Vec<f64>,
    /// Trapezoid `int_0^t e^{l (xi_s + c_l s)} ds` along the realised spine.
    pub spine_integral: Vec<f64>,
    /// `sum_{s <= t} m_s e^{l (xi_s + c_l s)}` over jump immigrations.
    pub jump_sum: Vec<f64>,
    pub continuous_events: usize,
    pub jump_events: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpineEnsemble {
    pub times: Vec<f64>,
    pub lam: f64,
    pub functions: Vec<TestFunction>,
    pub replicates: Vec<SpineReplicate>,
}

impl SpineEnsemble {
    pub fn z_total(&self, k: usize) -> Vec<f64> {
        self.replicates.iter().map(|r| r.z[k].total).collect()
    }

    pub fn functional(&self, k: usize, f: usize) -> Vec<f64> {
        self.replicates.iter().map(|r| r.functionals[k][f]).collect()
    }
}

pub fn spine_ensemble(
    spec: &EnsembleSpec<'_>,
    params: &SpineParams,
    functions: &[TestFunction],
) -> Result<SpineEnsemble> {
    let stepper = Stepper::new(spec.mech, spec.sim)?;
    let steps = observation_steps(spec.times, spec.sim.dt, spec.horizon)?;
    let lcl = spec.mech.lambda_c_lambda(spec.lam);
    let dt = spec.sim.dt;
    let lam = spec.lam;
    let replicates = run_replicates(spec.replicates, spec.workers, |i| {
        let n = steps.len();
        let mut functionals = Vec::with_capacity(n);
        let mut mass = Vec::with_capacity(n);
        let run = run_spine_system(
            spec.mu,
            lam,
            spec.mech,
            &stepper,
            params,
            spec.horizon,
            spec.times,
            spec.seed,
            i,
            |_, state| {
                functionals.push(functions.iter().map(|f| state.integrate(|x| f.eval(x))).collect());
                mass.push(state.total_mass());
            },
        )?;
        let g: Vec<f64> = run
            .spine
            .positions()
            .iter()
            .enumerate()
            .map(|(k, &x)| (lam * x + lcl * k as f64 * dt).exp())
            .collect();
        let mut spine_integral = Vec::with_capacity(n);
        let mut acc = 0.0;
        let mut done = 0usize;
        for &k in &steps {
            while done < k {
                acc += 0.5 * dt * (g[done] + g[done + 1]);
                done += 1;
            }
            spine_integral.push(acc);
        }
        let jump_sum = steps
            .iter()
            .map(|&k| {
                run.events
                    .iter()
                    .filter(|e| e.kind == ImmigrationKind::Jump && e.step <= k)
                    .map(|e| e.mass * g[e.step])
                    .sum()
            })
            .collect();
        let continuous_events = run.events.iter().filter(|e| e.kind == ImmigrationKind::Continuous).count();
        Ok(SpineReplicate {
            z: run.z,
            functionals,
            mass,
            spine_integral,
            jump_sum,
            continuous_events,
            jump_events: run.events.len() - continuous_events,
        })
    })?;
    Ok(SpineEnsemble {
        times: spec.times.to_vec(),
        lam,
        functions: functions.to_vec(),
        replicates,
    })
}
