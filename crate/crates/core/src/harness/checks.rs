//! Identity checks: each compares a Monte Carlo estimate with an oracle or
//! with an independent estimator, and returns a [`Report`].

use std::time::Instant;

use super::ensemble::{run_replicates, PlainEnsemble, SpineEnsemble};
use super::report::{CheckRow, Report};
use super::stats::{Estimate, StatAccumulator};
use super::{NegativeControl, RunMeta};
use crate::config::PdeSettings;
use crate::error::{invalid, Error, Result};
use crate::measure::{AtomicMeasure, TestFunction};
use crate::mechanism::BranchingMechanism;
use crate::pde::{boundary_error, laplace_functional, Grid1D};
use crate::rng::{label, stream};
use crate::spine::evolve_spine;

/// Fewest replicates a statistical check accepts.
pub const MIN_REPLICATES: usize = 100;
/// z-score bound for the 3-sigma tests.
pub const THREE_SIGMA: f64 = 3.0;

fn need(got: usize) -> Result<()> {
    if got < MIN_REPLICATES {
        Err(Error::InsufficientReplicates {
            got,
            need: MIN_REPLICATES,
        })
    } else {
        Ok(())
    }
}

fn exact_match(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// Pass rule for "the oracle lies in the 95% interval"; a zero-variance
/// estimate must match exactly.
fn covers(est: &Estimate, oracle: f64) -> bool {
    if est.std_error == 0.0 {
        exact_match(est.mean, oracle)
    } else {
        est.covers(oracle)
    }
}

fn within_sigma(est: &Estimate, oracle: f64, k: f64) -> bool {
    if est.std_error == 0.0 {
        exact_match(est.mean, oracle)
    } else {
        ((est.mean - oracle) / est.std_error).abs() <= k
    }
}

/// Paired comparison of two observables measured on the same replicates.
fn paired_row(label: &str, t: f64, a: &[f64], b: &[f64], k: f64) -> CheckRow {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let d = Estimate::of(&diff);
    let lhs = Estimate::of(a);
    let rhs = Estimate::of(b);
    let (z, pass) = if d.std_error > 0.0 {
        let z = d.mean / d.std_error;
        (z, z.abs() <= k)
    } else {
        (0.0, exact_match(d.mean, 0.0))
    };
    CheckRow {
        label: label.into(),
        t,
        lhs,
        rhs,
        z,
        pass,
    }
}

/// `E[Z_t(l)] = <e^{l.}, mu>` at every observation time, 3 sigma.
///
/// With [`NegativeControl::WrongCLambda`] the martingale is formed with
/// `c_l` inflated by 10%, which must make the test fail at later times.
pub fn martingale_mean_test(
    ens: &PlainEnsemble,
    mech: &BranchingMechanism,
    mu: &AtomicMeasure,
    control: Option<NegativeControl>,
    meta: &RunMeta,
) -> Result<Report> {
    let start = Instant::now();
    need(ens.replicates.len())?;
    let lam = ens.lam;
    let mut lcl = mech.lambda_c_lambda(lam);
    if control == Some(NegativeControl::WrongCLambda) {
        lcl *= NegativeControl::C_LAMBDA_FACTOR;
    }
    let target = mu.exp_moment(lam);
    let mut report = Report::new("mean", &meta.config_hash, meta.seed);
    for (k, &t) in ens.times.iter().enumerate() {
        let est = StatAccumulator::from_values("Z", &ens.martingale(k, lcl)).estimate();
        let pass = if t == 0.0 {
            (est.mean - target).abs() <= 1e-12 * target.max(1.0) + ens.seeding_error * target.max(1.0)
        } else {
            within_sigma(&est, target, THREE_SIGMA)
        };
        report
            .rows
            .push(CheckRow::independent("E[Z_t]", t, est, Estimate::exact(target), pass));
    }
    if let Some(c) = control {
        report.notes.push(format!("negative control `{}` active", c.name()));
    }
    report.notes.push(format!("lambda = {lam}, target <e^(lambda x), mu> = {target}"));
    report.runtime_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

/// `E_mu exp(-<f, X_t>)` against the PDE value `exp(-<u_f(., t), mu>)`; the
/// PDE value must lie in the 95% interval.
///
/// With [`NegativeControl::WrongBranching`] the PDE oracle is solved with
/// `beta` inflated by 20%.
pub fn duality_test(
    ens: &PlainEnsemble,
    mech: &BranchingMechanism,
    mu: &AtomicMeasure,
    pde: &PdeSettings,
    control: Option<NegativeControl>,
    meta: &RunMeta,
) -> Result<Report> {
    let start = Instant::now();
    need(ens.replicates.len())?;
    let oracle_mech = if control == Some(NegativeControl::WrongBranching) {
        mech.with_beta(mech.beta() * NegativeControl::BRANCHING_FACTOR)?
    } else {
        mech.clone()
    };
    let mut report = Report::new("duality", &meta.config_hash, meta.seed);
    for (fi, f) in ens.functions.iter().enumerate() {
        if matches!(f, TestFunction::Exp { .. }) {
            report.notes.push(format!("skipped unbounded test function {f}"));
            continue;
        }
        for (k, &t) in ens.times.iter().enumerate() {
            let values: Vec<f64> = ens.functional(k, fi).iter().map(|v| (-v).exp()).collect();
            let est = Estimate::of(&values);
            let rhs = if t == 0.0 || f.is_zero() {
                laplace_functional(&oracle_mech, f, mu, t, &Grid1D::new(0.0, 1.0, 3, 0.1, 1.0)?)?
            } else {
                let grid = Grid1D::with_spacing(pde.x_min, pde.x_max, pde.dx, t)?;
                if !f.is_constant() {
                    let probes: Vec<f64> = mu.atoms().iter().map(|a| a.0).collect();
                    let err = boundary_error(&oracle_mech, f, &grid, &probes, false)?;
                    report
                        .notes
                        .push(format!("{f} t={t}: domain-doubling change at atoms {err:.3e}"));
                }
                laplace_functional(&oracle_mech, f, mu, t, &grid)?
            };
            let pass = covers(&est, rhs);
            report.rows.push(CheckRow::independent(
                format!("E[exp(-<{f},X_t>)]"),
                t,
                est,
                Estimate::exact(rhs),
                pass,
            ));
        }
    }
    if let Some(c) = control {
        report.notes.push(format!("negative control `{}` active", c.name()));
    }
    report.runtime_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Equality in law of the spine system and the tilted process: the spine
/// estimate of `E exp(-<f, Lambda_t>)` against the reweighted plain estimate
/// `E[Z_t exp(-<f, X_t>)] / <e^{l.}, mu>`; 95% intervals must overlap.
pub fn spine_law_test(
    plain: &PlainEnsemble,
    spine: &SpineEnsemble,
    mech: &BranchingMechanism,
    mu: &AtomicMeasure,
    meta: &RunMeta,
) -> Result<Report> {
    let start = Instant::now();
    need(plain.replicates.len())?;
    need(spine.replicates.len())?;
    if plain.times != spine.times || plain.functions != spine.functions || plain.lam != spine.lam {
        return Err(Error::Schema("plain and spine ensembles observe different things".into()));
    }
    let lam = plain.lam;
    let lcl = mech.lambda_c_lambda(lam);
    let norm = mu.exp_moment(lam);
    let mut report = Report::new("spine-law", &meta.config_hash, meta.seed);
    for (fi, f) in plain.functions.iter().enumerate() {
        for (k, &t) in plain.times.iter().enumerate() {
            let lhs = Estimate::of(&spine.functional(k, fi).iter().map(|v| (-v).exp()).collect::<Vec<_>>());
            let z = plain.martingale(k, lcl);
            let weighted: Vec<f64> = z
                .iter()
                .zip(plain.functional(k, fi))
                .map(|(z, v)| z * (-v).exp() / norm)
                .collect();
            let rhs = Estimate::of(&weighted);
            let pass = if lhs.std_error == 0.0 && rhs.std_error == 0.0 {
                exact_match(lhs.mean, rhs.mean)
            } else {
                lhs.overlaps(&rhs)
            };
            report
                .rows
                .push(CheckRow::independent(format!("exp(-<{f},.>)"), t, lhs, rhs, pass));
        }
    }
    report.notes.push(format!(
        "lambda = {lam}; lhs from {} spine systems, rhs from {} reweighted plain paths",
        spine.replicates.len(),
        plain.replicates.len()
    ));
    report.runtime_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Mean structure of the spine form of the martingale, 3 sigma:
///
/// * continuous immigration: `E[Z^n_t] = 2 beta E int_0^t e^{l (xi_s + c_l s)} ds`
///   (paired over the same spines);
/// * jump immigration: `E[Z^m_t] = E sum_{s <= t} m_s e^{l (xi_s + c_l s)}` (paired), and
///   that sum's mean equals `int_{[eps_m, inf)} r^2 nu(dr) * int_0^t E e^{l (xi_s + c_l s)} ds`
///   in closed form.
pub fn spine_structure_test(
    spine: &SpineEnsemble,
    mech: &BranchingMechanism,
    mu: &AtomicMeasure,
    eps_m: f64,
    meta: &RunMeta,
) -> Result<Report> {
    let start = Instant::now();
    need(spine.replicates.len())?;
    let lam = spine.lam;
    let beta = mech.beta();
    let rate = lam * lam - mech.alpha();
    // Tilted start: E e^{l xi_0} = <e^{2l.}, mu> / <e^{l.}, mu>.
    let start_factor = mu.exp_moment(2.0 * lam) / mu.exp_moment(lam);
    let r2 = mech.nu().moment_above(2.0, eps_m);
    let mut report = Report::new("spine-structure", &meta.config_hash, meta.seed);
    for (k, &t) in spine.times.iter().enumerate() {
        if t == 0.0 {
            continue;
        }
        let zn: Vec<f64> = spine.replicates.iter().map(|r| r.z[k].continuous).collect();
        let integral: Vec<f64> = spine
            .replicates
            .iter()
            .map(|r| 2.0 * beta * r.spine_integral[k])
            .collect();
        report
            .rows
            .push(paired_row("Z_n vs 2beta*int", t, &zn, &integral, THREE_SIGMA));
        if !mech.nu().is_zero() {
            let zm: Vec<f64> = spine.replicates.iter().map(|r| r.z[k].jump).collect();
            let js: Vec<f64> = spine.replicates.iter().map(|r| r.jump_sum[k]).collect();
            report.rows.push(paired_row("Z_m vs jump sum", t, &zm, &js, THREE_SIGMA));
            let time_integral = if rate == 0.0 { t } else { (rate * t).exp_m1() / rate };
            let closed = r2 * start_factor * time_integral;
            let est = Estimate::of(&js);
            let pass = within_sigma(&est, closed, THREE_SIGMA);
            report.rows.push(CheckRow::independent(
                "jump sum vs closed form",
                t,
                est,
                Estimate::exact(closed),
                pass,
            ));
        }
    }
    report.runtime_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Outcome of [`gaussian_moment_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianCheck {
    pub analytic: f64,
    pub mc: Estimate,
    pub pass: bool,
}

/// `E exp(q l (xi_s + c_l s)) = exp(q s (p l^2 / 2 + psi'(0+)))` under the
/// drift-`l` spine, `q = p - 1`, 3 sigma over `draws` exact Gaussian draws.
/// [`NegativeControl::WrongDrift`] samples the spine without drift.
pub fn gaussian_moment_check(
    mech: &BranchingMechanism,
    p: f64,
    lam: f64,
    s: f64,
    draws: usize,
    seed: u64,
    control: Option<NegativeControl>,
) -> Result<GaussianCheck> {
    let q = p - 1.0;
    if !(q > 0.0 && q <= 1.0) {
        return Err(invalid("p", "need p in (1, 2]"));
    }
    if s < 0.0 {
        return Err(invalid("s", "must be >= 0"));
    }
    let c = mech.c_lambda(lam)?;
    let analytic = (q * s * (p * lam * lam / 2.0 + mech.psi_prime_zero())).exp();
    if s == 0.0 {
        return Ok(GaussianCheck {
            analytic,
            mc: Estimate::exact(1.0),
            pass: analytic == 1.0,
        });
    }
    need(draws)?;
    let drift = if control == Some(NegativeControl::WrongDrift) { 0.0 } else { lam };
    let mut rng = stream(seed, &[label::GAUSSIAN]);
    let values: Vec<f64> = (0..draws)
        .map(|_| {
            let xi = evolve_spine(0.0, drift, s, s, &mut rng).end();
            (q * lam * (xi + c * s)).exp()
        })
        .collect();
    let mc = Estimate::of(&values);
    Ok(GaussianCheck {
        analytic,
        mc,
        pass: within_sigma(&mc, analytic, THREE_SIGMA),
    })
}

pub fn gaussian_moment_report(
    mech: &BranchingMechanism,
    p: f64,
    lam: f64,
    times: &[f64],
    draws: usize,
    control: Option<NegativeControl>,
    meta: &RunMeta,
) -> Result<Report> {
    let start = Instant::now();
    let mut report = Report::new("gaussian", &meta.config_hash, meta.seed);
    for (i, &s) in times.iter().enumerate() {
        let g = gaussian_moment_check(mech, p, lam, s, draws, meta.seed.wrapping_add(i as u64), control)?;
        report.rows.push(CheckRow::independent(
            format!("E exp(q l (xi_s + c s)) p={p} l={lam}"),
            s,
            g.mc,
            Estimate::exact(g.analytic),
            g.pass,
        ));
    }
    if let Some(c) = control {
        report.notes.push(format!("negative control `{}` active", c.name()));
    }
    report.runtime_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

/// `int_0^{t_max} e^{l (xi_s + c_l s)} ds` by the trapezoid rule on a
/// drift-`drift` path sampled every `dt`.
pub fn truncated_exp_functional(
    mech: &BranchingMechanism,
    lam: f64,
    drift: f64,
    t_max: f64,
    dt: f64,
    rng: &mut impl rand::Rng,
) -> f64 {
    if t_max == 0.0 {
        return 0.0;
    }
    let path = evolve_spine(0.0, drift, dt, t_max, rng);
    let lcl = mech.lambda_c_lambda(lam);
    let g = |k: usize, x: f64| (lam * x + lcl * k as f64 * dt).exp();
    let xs = path.positions();
    let n = xs.len() - 1;
    let mut acc = 0.5 * (g(0, xs[0]) + g(n, xs[n]));
    for (k, &x) in xs.iter().enumerate().take(n).skip(1) {
        acc += g(k, x);
    }
    acc * dt
}

/// Mean of the truncated exponential functional against `1 / (alpha - l^2)`
/// at 3 sigma, plus a check that the truncation tail bound
/// `e^{(l^2 - alpha) t_max} / (alpha - l^2)` is below one standard error.
#[allow(clippy::too_many_arguments)]
pub fn exp_functional_check(
    mech: &BranchingMechanism,
    lam: f64,
    t_max: f64,
    dt: f64,
    paths: usize,
    workers: usize,
    control: Option<NegativeControl>,
    meta: &RunMeta,
) -> Result<Report> {
    let start = Instant::now();
    let alpha = mech.alpha();
    let l2 = lam * lam;
    mech.c_lambda(lam)?;
    if l2 >= 2.0 * alpha {
        return Err(invalid(
            "lambda",
            format!("lambda^2 = {l2} >= 2 alpha = {}: the spine drift l + c_l is not negative and the integral diverges", 2.0 * alpha),
        ));
    }
    if l2 >= alpha {
        return Err(invalid(
            "lambda",
            format!("lambda^2 = {l2} >= alpha = {alpha}: the integral is finite but its mean is infinite"),
        ));
    }
    need(paths)?;
    let drift = if control == Some(NegativeControl::WrongDrift) { 0.0 } else { lam };
    let values = run_replicates(paths, workers, |i| {
        let mut rng = stream(meta.seed, &[label::EXPFUN, i]);
        Ok(truncated_exp_functional(mech, lam, drift, t_max, dt, &mut rng))
    })?;
    let est = Estimate::of(&values);
    let closed = 1.0 / (alpha - l2);
    let tail = ((l2 - alpha) * t_max).exp() / (alpha - l2);
    let mut report = Report::new("expfun", &meta.config_hash, meta.seed);
    report.rows.push(CheckRow::independent(
        "E int e^(l(xi_s+c s)) ds",
        t_max,
        est,
        Estimate::exact(closed),
        within_sigma(&est, closed, THREE_SIGMA),
    ));
    report.rows.push(CheckRow::independent(
        "truncation tail bound < 1 se",
        t_max,
        Estimate::exact(tail),
        Estimate::exact(est.std_error),
        tail < est.std_error,
    ));
    if let Some(c) = control {
        report.notes.push(format!("negative control `{}` active", c.name()));
    }
    report.runtime_secs = start.elapsed().as_secs_f64();
    Ok(report)
}
