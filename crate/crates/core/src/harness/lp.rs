//! Moment curves `t -> E[Z_t(l)^p]` and the bounded/diverging verdict.

use std::io::{self, Write};

use super::ensemble::{plain_ensemble, spine_ensemble, EnsembleSpec};
use super::report::num;
use super::stats::{batch_means_se, StatAccumulator, BATCHES};
use crate::config::{LpSettings, MomentEstimator, VerdictThresholds};
use crate::error::{invalid, Result};
use crate::measure::AtomicMeasure;
use crate::mechanism::BranchingMechanism;
use crate::particles::SimParams;
use crate::spine::SpineParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    BoundedConsistent,
    Diverging,
    Inconclusive,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::BoundedConsistent => "bounded-consistent",
            Verdict::Diverging => "diverging",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentCurve {
    pub lam: f64,
    pub p: f64,
    pub estimator: MomentEstimator,
    pub times: Vec<f64>,
    pub count: Vec<u64>,
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
    pub batch_std_error: Vec<f64>,
    pub heavy_tail: Vec<bool>,
    /// Mean of `(int_0^t e^{l (xi_s + c_l s)} ds)^q` along the spines (spine
    /// estimator only).
    pub bound_integral_term: Option<Vec<f64>>,
}

impl MomentCurve {
    fn from_samples(
        lam: f64,
        p: f64,
        estimator: MomentEstimator,
        times: Vec<f64>,
        samples: Vec<Vec<f64>>,
        heavy_ratio: f64,
    ) -> Self {
        let mut curve = Self {
            lam,
            p,
            estimator,
            times,
            count: Vec::new(),
            mean: Vec::new(),
            std_error: Vec::new(),
            batch_std_error: Vec::new(),
            heavy_tail: Vec::new(),
            bound_integral_term: None,
        };
        for values in &samples {
            let acc = StatAccumulator::from_values("Z^p", values);
            let se = if acc.count() >= 2 { acc.std_error() } else { 0.0 };
            let batch = batch_means_se(values, BATCHES).unwrap_or(se);
            let heavy = se > 0.0 && {
                let r = (batch * batch) / (se * se);
                r > heavy_ratio || r < 1.0 / heavy_ratio
            };
            curve.count.push(acc.count());
            curve.mean.push(acc.mean());
            curve.std_error.push(se);
            curve.batch_std_error.push(batch);
            curve.heavy_tail.push(heavy);
        }
        curve
    }

    /// Error bar used by verdicts: the larger of the naive and batch-means
    /// standard errors.
    pub fn sigma(&self, k: usize) -> f64 {
        self.std_error[k].max(self.batch_std_error[k])
    }

    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|&s| (s - t).abs() <= 1e-9 * t.max(1.0))
    }

    /// `t,mean,stderr,batch_stderr,count,heavy_tail`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "t,mean,stderr,batch_stderr,count,heavy_tail")?;
        for k in 0..self.times.len() {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                num(self.times[k]),
                num(self.mean[k]),
                num(self.std_error[k]),
                num(self.batch_std_error[k]),
                self.count[k],
                self.heavy_tail[k]
            )?;
        }
        Ok(())
    }
}

/// Verdict from the tail of a moment curve, on the log scale: each point is
/// `ln m` with standard error `sigma / m`. Moment curves are positive with
/// multiplicative growth and right-skewed errors, so an exploding curve whose
/// errors grow with its mean would pass a linear-scale plateau test.
///
/// * bounded-consistent: the last three log means lie pairwise within
///   `plateau_sigma` combined standard errors;
/// * diverging: the means on `t >= T/8` increase strictly and the total log
///   rise exceeds `growth_sigma` combined standard errors;
/// * inconclusive otherwise, or when any point used carries a heavy-tail flag.
pub fn classify(curve: &MomentCurve, th: &VerdictThresholds) -> Verdict {
    let n = curve.times.len();
    if n < 3 || curve.mean.iter().any(|&m| !(m > 0.0)) {
        return Verdict::Inconclusive;
    }
    let horizon = curve.times[n - 1];
    let tail: Vec<usize> = (0..n).filter(|&k| curve.times[k] >= horizon / 8.0 * (1.0 - 1e-12)).collect();
    let used = |ks: &[usize]| ks.iter().any(|&k| curve.heavy_tail[k]);
    let log_mean = |k: usize| curve.mean[k].ln();
    let log_sigma = |k: usize| curve.sigma(k) / curve.mean[k];
    let last3 = [n - 3, n - 2, n - 1];
    if used(&last3) {
        return Verdict::Inconclusive;
    }
    let close = |i: usize, j: usize| (log_mean(i) - log_mean(j)).abs() <= th.plateau_sigma * log_sigma(i).hypot(log_sigma(j));
    if close(last3[0], last3[1]) && close(last3[0], last3[2]) && close(last3[1], last3[2]) {
        return Verdict::BoundedConsistent;
    }
    if tail.len() >= 2 && !used(&tail) {
        let increasing = tail.windows(2).all(|w| curve.mean[w[1]] > curve.mean[w[0]]);
        let (a, b) = (tail[0], tail[tail.len() - 1]);
        let rise = (log_mean(b) - log_mean(a)) / log_sigma(a).hypot(log_sigma(b));
        if increasing && rise > th.growth_sigma {
            return Verdict::Diverging;
        }
    }
    Verdict::Inconclusive
}

/// Exponential rate `r` of a curve `m(t) = A + B e^{r t}` from its values at
/// `a`, `2a`, `4a`: `(m(4a) - m(2a)) / (m(2a) - m(a)) = x (x + 1)` with
/// `x = e^{r a}`. `None` when the increments do not fit that shape.
pub fn excess_growth_rate(curve: &MomentCurve, a: f64) -> Option<f64> {
    let (i, j, k) = (curve.index_of(a)?, curve.index_of(2.0 * a)?, curve.index_of(4.0 * a)?);
    let d1 = curve.mean[j] - curve.mean[i];
    let d2 = curve.mean[k] - curve.mean[j];
    if !(d1 > 0.0 && d2 > 0.0) {
        return None;
    }
    let ratio = d2 / d1;
    let x = 0.5 * (-1.0 + (1.0 + 4.0 * ratio).sqrt());
    if x <= 0.0 {
        return None;
    }
    Some(x.ln() / a)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpOutcome {
    pub curve: MomentCurve,
    pub verdict: Verdict,
    pub criterion: bool,
    /// `p l^2` within 10% of `2 alpha`, where an inconclusive verdict is allowed.
    pub boundary: bool,
    pub agreement: bool,
}

/// Snaps the geometric grid to multiples of `dt`.
pub fn lp_times(lp: &LpSettings, dt: f64) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for t in lp.grid() {
        let s = (t / dt).round().max(1.0) * dt;
        if out.last().is_none_or(|&l| s > l * (1.0 + 1e-12)) {
            out.push(s);
        }
    }
    out
}

/// Estimates `E[Z_t(l)^p]` on the geometric grid of `lp` and classifies it.
///
/// The spine estimator uses the change of measure: `E_mu[Z_t^p] =
/// <e^{l.}, mu> E~[(Z^Lambda_t)^{p-1}]`, averaging over spine systems.
#[allow(clippy::too_many_arguments)]
pub fn lp_moment_curve(
    mech: &BranchingMechanism,
    mu: &AtomicMeasure,
    lam: f64,
    p: f64,
    sim: SimParams,
    eta: f64,
    lp: &LpSettings,
    thresholds: &VerdictThresholds,
    seed: u64,
    workers: usize,
) -> Result<LpOutcome> {
    if !(p > 1.0 && p <= 2.0) {
        return Err(invalid("p", "moment curves need p in (1, 2]"));
    }
    let times = lp_times(lp, sim.dt);
    let horizon = *times.last().ok_or_else(|| invalid("lp", "empty time grid"))?;
    let spec = EnsembleSpec {
        mech,
        mu,
        sim,
        lam,
        horizon,
        times: &times,
        replicates: lp.replicates,
        seed,
        workers,
    };
    let q = p - 1.0;
    let norm = mu.exp_moment(lam);
    let mut curve = match lp.estimator {
        MomentEstimator::Spine => {
            let ens = spine_ensemble(&spec, &SpineParams::new(eta), &[])?;
            let samples = (0..times.len())
                .map(|k| ens.z_total(k).iter().map(|z| norm * z.powf(q)).collect())
                .collect();
            let mut c = MomentCurve::from_samples(lam, p, lp.estimator, times.clone(), samples, thresholds.heavy_tail_ratio);
            c.bound_integral_term = Some(
                (0..times.len())
                    .map(|k| {
                        let v: Vec<f64> = ens.replicates.iter().map(|r| r.spine_integral[k].powf(q)).collect();
                        StatAccumulator::from_values("", &v).mean()
                    })
                    .collect(),
            );
            c
        }
        MomentEstimator::Plain => {
            let ens = plain_ensemble(&spec, &[])?;
            let lcl = mech.lambda_c_lambda(lam);
            let samples = (0..times.len())
                .map(|k| ens.martingale(k, lcl).iter().map(|z| z.powf(p)).collect())
                .collect();
            MomentCurve::from_samples(lam, p, lp.estimator, times.clone(), samples, thresholds.heavy_tail_ratio)
        }
    };
    curve.times = times;
    let verdict = classify(&curve, thresholds);
    let criterion = mech.lp_criterion(p, lam);
    let two_alpha = 2.0 * mech.alpha();
    let boundary = (p * lam * lam - two_alpha).abs() <= 0.1 * two_alpha;
    let agreement = match verdict {
        Verdict::BoundedConsistent => criterion,
        Verdict::Diverging => !criterion,
        Verdict::Inconclusive => boundary,
    };
    Ok(LpOutcome {
        curve,
        verdict,
        criterion,
        boundary,
        agreement,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(times: &[f64], mean: &[f64], se: f64) -> MomentCurve {
        MomentCurve {
            lam: 0.5,
            p: 2.0,
            estimator: MomentEstimator::Plain,
            times: times.to_vec(),
            count: vec![1000; times.len()],
            mean: mean.to_vec(),
            std_error: vec![se; times.len()],
            batch_std_error: vec![se; times.len()],
            heavy_tail: vec![false; times.len()],
            bound_integral_term: None,
        }
    }

    #[test]
    fn verdict_rules() {
        let th = VerdictThresholds::default();
        let t = [1.0, 2.0, 4.0, 8.0];
        assert_eq!(classify(&curve(&t, &[2.0, 3.0, 3.6, 3.65], 0.05), &th), Verdict::Diverging);
        assert_eq!(classify(&curve(&t, &[2.0, 3.6, 3.62, 3.65], 0.05), &th), Verdict::BoundedConsistent);
        assert_eq!(classify(&curve(&t, &[1.0, 2.0, 4.0, 8.0], 0.05), &th), Verdict::Diverging);
        assert_eq!(classify(&curve(&t, &[1.0, 2.0, 1.5, 8.0], 0.05), &th), Verdict::Inconclusive);
        let mut heavy = curve(&t, &[1.0, 1.0, 1.0, 1.0], 0.05);
        heavy.heavy_tail[3] = true;
        assert_eq!(classify(&heavy, &th), Verdict::Inconclusive);
        assert_eq!(classify(&curve(&t[..2], &[1.0, 1.0], 0.1), &th), Verdict::Inconclusive);
        assert_eq!(classify(&curve(&t, &[0.0, 1.0, 1.0, 1.0], 0.1), &th), Verdict::Inconclusive);

        // Exploding curve with errors proportional to the mean: pairwise
        // within 2 sigma on the linear scale, clearly apart in logs.
        let mut boom = curve(&t, &[6.0, 647.0, 4747.0, 18019.0], 0.0);
        boom.std_error = vec![0.6, 275.0, 2790.0, 8869.0];
        boom.batch_std_error = boom.std_error.clone();
        assert_eq!(classify(&boom, &th), Verdict::Diverging);
    }

    #[test]
    fn growth_rate_recovers_exponent() {
        let r: f64 = 0.44;
        let t = [1.0, 2.0, 4.0];
        let m: Vec<f64> = t.iter().map(|&t| 1.0 + 2.0 * (r * t).exp_m1() / r).collect();
        let c = curve(&t, &m, 0.01);
        assert!((excess_growth_rate(&c, 1.0).unwrap() - r).abs() < 1e-12);
        assert!(excess_growth_rate(&c, 3.0).is_none());
        assert!(excess_growth_rate(&curve(&t, &[1.0, 1.0, 1.0], 0.1), 1.0).is_none());
    }

    #[test]
    fn grid_snaps_to_steps() {
        let lp = LpSettings {
            horizon: 8.0,
            t_min: 0.125,
            ratio: std::f64::consts::SQRT_2,
            estimator: MomentEstimator::Spine,
            replicates: 10,
        };
        let ts = lp_times(&lp, 0.05);
        assert_eq!(ts.len(), 13);
        assert!(ts.iter().all(|t| ((t / 0.05).round() * 0.05 - t).abs() < 1e-12));
        assert!(ts.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(*ts.last().unwrap(), 8.0);
        assert!(ts.contains(&1.0) && ts.contains(&2.0) && ts.contains(&4.0));
    }

    #[test]
    fn p_near_one_is_flat() {
        let mech = BranchingMechanism::feller(1.0, 1.0).unwrap();
        let lp = LpSettings {
            horizon: 0.4,
            t_min: 0.1,
            ratio: 2.0,
            estimator: MomentEstimator::Spine,
            replicates: 50,
        };
        let sim = SimParams::new(0.05, 0.05, 0.05).unwrap();
        let out = lp_moment_curve(&mech, &AtomicMeasure::dirac(0.0), 0.5, 1.0 + 1e-12, sim, 0.05, &lp, &VerdictThresholds::default(), 1, 1)
            .unwrap();
        assert!(out.curve.mean.iter().all(|m| (m - 1.0).abs() < 1e-9), "{:?}", out.curve.mean);
        assert!(lp_moment_curve(&mech, &AtomicMeasure::dirac(0.0), 0.5, 2.5, sim, 0.05, &lp, &VerdictThresholds::default(), 1, 1).is_err());
    }
}
