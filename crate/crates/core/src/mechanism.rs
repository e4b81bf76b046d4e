//! Branching mechanisms `psi(l) = -alpha*l + beta*l^2 + int (e^{-l r} - 1 + l r) nu(dr)`
//! and the scalar quantities derived from them.

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::numerics::{bisect, dopri5, integrate, integrate_to_infinity};

/// Absolute tolerance used for every jump-measure quadrature.
pub const QUAD_TOL: f64 = 1e-12;

const FLOW_RTOL: f64 = 1e-10;
const FLOW_ATOL: f64 = 1e-15;

/// Lévy measure of the jump part of the mechanism.
#[derive(Debug, Clone, PartialEq)]
pub enum JumpMeasure {
    Zero,
    /// Atoms `(r_i, w_i)`: mass `w_i` at jump size `r_i`.
    FiniteAtomic(Vec<(f64, f64)>),
    /// Density `c * r^(-1-gamma) * exp(-theta * r)` on `(0, inf)`.
    TemperedStable { c: f64, gamma: f64, theta: f64 },
}

impl JumpMeasure {
    pub fn finite_atomic(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Ok(JumpMeasure::Zero);
        }
        for &(r, w) in &atoms {
            if !(r > 0.0 && r.is_finite()) {
                return Err(invalid("nu.atoms", format!("jump size {r} must be positive")));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(invalid("nu.atoms", format!("atom weight {w} must be positive")));
            }
        }
        Ok(JumpMeasure::FiniteAtomic(atoms))
    }

    pub fn tempered_stable(c: f64, gamma: f64, theta: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(invalid("nu.c", "must be positive"));
        }
        if !(gamma > 1.0 && gamma < 2.0) {
            return Err(invalid("nu.gamma", "must lie strictly inside (1, 2)"));
        }
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(invalid("nu.theta", "must be positive"));
        }
        Ok(JumpMeasure::TemperedStable { c, gamma, theta })
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, JumpMeasure::Zero)
    }

    /// `int (e^{-l r} - 1 + l r) nu(dr)` for `l >= 0`.
    pub fn compensated_laplace(&self, lam: f64) -> f64 {
        match self {
            JumpMeasure::Zero => 0.0,
            JumpMeasure::FiniteAtomic(atoms) => atoms.iter().map(|&(r, w)| w * phi(lam * r)).sum(),
            &JumpMeasure::TemperedStable { c, gamma, theta } => {
                if lam == 0.0 {
                    return 0.0;
                }
                c * tempered_compensated_laplace(lam, gamma, theta)
            }
        }
    }

    /// `int_{[lo, inf)} r^k nu(dr)`; `lo = 0` gives the full moment, possibly infinite.
    pub fn moment_above(&self, k: f64, lo: f64) -> f64 {
        match self {
            JumpMeasure::Zero => 0.0,
            JumpMeasure::FiniteAtomic(atoms) => atoms
                .iter()
                .filter(|&&(r, _)| r >= lo)
                .map(|&(r, w)| w * r.powf(k))
                .sum(),
            &JumpMeasure::TemperedStable { c, gamma, theta } => {
                c * tempered_power_integral(k - 1.0 - gamma, theta, lo)
            }
        }
    }

    /// `int_{(0, hi)} r^2 nu(dr)`: the small-jump variance rate dropped by
    /// truncation at `hi`. It enters `psi` as roughly `l^2/2` times this value.
    pub fn discarded_second_moment(&self, hi: f64) -> f64 {
        match self {
            JumpMeasure::Zero => 0.0,
            JumpMeasure::FiniteAtomic(atoms) => {
                atoms.iter().filter(|&&(r, _)| r < hi).map(|&(r, w)| w * r * r).sum()
            }
            &JumpMeasure::TemperedStable { c, gamma, theta } => {
                if hi <= 0.0 {
                    return 0.0;
                }
                let s = 1.0 - gamma;
                c * (tempered_power_integral(s, theta, 0.0) - tempered_power_integral(s, theta, hi))
            }
        }
    }
}

/// `e^{-x} - 1 + x` without cancellation for small `x`.
pub(crate) fn phi(x: f64) -> f64 {
    if x.abs() < 0.1 {
        let mut term = x * x / 2.0;
        let mut sum = term;
        let mut k = 2.0;
        while term.abs() > 1e-18 * sum.abs() {
            k += 1.0;
            term *= -x / k;
            sum += term;
        }
        sum
    } else {
        (-x).exp_m1() + x
    }
}

/// `int_lo^inf r^s e^{-theta r} dr`. Infinite when `lo = 0` and `s <= -1`.
fn tempered_power_integral(s: f64, theta: f64, lo: f64) -> f64 {
    let density = |r: f64| r.powf(s) * (-theta * r).exp();
    if lo <= 0.0 {
        if s <= -1.0 {
            return f64::INFINITY;
        }
        // Series on [0, r0], quadrature beyond.
        let r0 = (1.0 / theta).min(1.0);
        let mut sum = 0.0;
        let mut coeff = 1.0; // (-theta)^j / j!
        for j in 0..200 {
            let e = s + 1.0 + j as f64;
            let term = coeff * r0.powf(e) / e;
            sum += term;
            if term.abs() < 1e-18 * sum.abs().max(1e-300) && j > 2 {
                break;
            }
            coeff *= -theta / (j as f64 + 1.0);
        }
        return sum + tempered_power_integral(s, theta, r0);
    }
    let mut total = 0.0;
    if lo < 1.0 {
        // r = e^u flattens the algebraic factor on [lo, 1].
        total += integrate(|u: f64| density(u.exp()) * u.exp(), lo.ln(), 0.0, QUAD_TOL);
        total += integrate_to_infinity(density, 1.0, QUAD_TOL);
    } else {
        total += integrate_to_infinity(density, lo, QUAD_TOL);
    }
    total
}

/// `int_0^inf phi(l r) r^{-1-gamma} e^{-theta r} dr` (without the factor `c`).
fn tempered_compensated_laplace(lam: f64, gamma: f64, theta: f64) -> f64 {
    // Near zero the integrand is entire times r^{-1-gamma}: expand
    // phi(l r) e^{-theta r} = sum_k a_k r^k and integrate termwise on [0, r0].
    let r0 = (1.0 / (lam + theta)).min(1.0);
    // a_k = [(-(l + theta))^k - (-theta)^k] / k! + l (-theta)^{k-1} / (k-1)!
    let mut series = 0.0;
    let mut p_sum = 1.0; // (-(l + theta))^k / k!
    let mut p_theta = 1.0; // (-theta)^k / k!
    for k in 1..80 {
        let kf = k as f64;
        let p_prev = p_theta; // (-theta)^{k-1} / (k-1)!
        p_sum *= -(lam + theta) / kf;
        p_theta *= -theta / kf;
        if k < 2 {
            continue;
        }
        let a_k = p_sum - p_theta + lam * p_prev;
        let e = kf - gamma;
        let term = a_k * r0.powf(e) / e;
        series += term;
        if term.abs() < 1e-18 * series.abs() && k > 4 {
            break;
        }
    }
    let integrand = |r: f64| phi(lam * r) * r.powf(-1.0 - gamma) * (-theta * r).exp();
    let mut rest = 0.0;
    if r0 < 1.0 {
        rest += integrate(|u: f64| integrand(u.exp()) * u.exp(), r0.ln(), 0.0, QUAD_TOL);
        rest += integrate_to_infinity(integrand, 1.0, QUAD_TOL);
    } else {
        rest += integrate_to_infinity(integrand, r0, QUAD_TOL);
    }
    series + rest
}

/// A supercritical branching mechanism.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchingMechanism {
    alpha: f64,
    beta: f64,
    nu: JumpMeasure,
}

impl BranchingMechanism {
    pub fn new(alpha: f64, beta: f64, nu: JumpMeasure) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(invalid("alpha", "must be positive (supercritical)"));
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(invalid("beta", "must be nonnegative"));
        }
        let unbounded = match &nu {
            JumpMeasure::Zero => beta > 0.0,
            JumpMeasure::FiniteAtomic(atoms) => {
                beta > 0.0 || atoms.iter().map(|&(r, w)| r * w).sum::<f64>() > alpha
            }
            JumpMeasure::TemperedStable { .. } => true,
        };
        if !unbounded {
            return Err(invalid("beta", "psi(inf) must be infinite"));
        }
        Ok(Self { alpha, beta, nu })
    }

    /// Quadratic (Feller) mechanism with no jumps.
    pub fn feller(alpha: f64, beta: f64) -> Result<Self> {
        Self::new(alpha, beta, JumpMeasure::Zero)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn nu(&self) -> &JumpMeasure {
        &self.nu
    }

    /// Copy with `beta` replaced. Used by negative controls.
    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        Self::new(self.alpha, beta, self.nu.clone())
    }

    pub fn psi(&self, lam: f64) -> Result<f64> {
        if !(lam >= 0.0) {
            return Err(invalid("lambda", format!("psi needs lambda >= 0, got {lam}")));
        }
        Ok(self.psi_raw(lam))
    }

    /// `psi` without the domain check. Negative arguments (ODE stage overshoot)
    /// use the quadratic part only.
    pub(crate) fn psi_raw(&self, lam: f64) -> f64 {
        if lam == 0.0 {
            return 0.0;
        }
        let poly = -self.alpha * lam + self.beta * lam * lam;
        if lam < 0.0 {
            return poly;
        }
        poly + self.nu.compensated_laplace(lam)
    }

    pub fn psi_prime_zero(&self) -> f64 {
        -self.alpha
    }

    /// `c_l = psi'(0+)/l - l/2`.
    pub fn c_lambda(&self, lam: f64) -> Result<f64> {
        if lam == 0.0 || !lam.is_finite() {
            return Err(invalid("lambda", "c_lambda is undefined at lambda = 0"));
        }
        Ok(self.psi_prime_zero() / lam - lam / 2.0)
    }

    /// `l * c_l = psi'(0+) - l^2/2`, the exponential rate in `Z_t(l)`.
    pub fn lambda_c_lambda(&self, lam: f64) -> f64 {
        self.psi_prime_zero() - lam * lam / 2.0
    }

    /// `int r^p nu(dr)`, `+inf` when it diverges.
    pub fn nu_moment(&self, p: f64) -> f64 {
        self.nu.moment_above(p, 0.0)
    }

    /// Solution of `u' = -psi(u)`, `u(0) = theta`, at time `t`.
    pub fn u_flow(&self, theta: f64, t: f64) -> Result<f64> {
        if !(theta >= 0.0 && theta.is_finite()) {
            return Err(invalid("theta", "must be finite and nonnegative"));
        }
        if !(t >= 0.0 && t.is_finite()) {
            return Err(invalid("t", "must be finite and nonnegative"));
        }
        if theta == 0.0 {
            return Ok(0.0);
        }
        dopri5(|u| -self.psi_raw(u), theta, t, FLOW_RTOL, FLOW_ATOL).map(|u| u.max(0.0))
    }

    /// `lim_{theta -> inf} u_flow(theta, t)`, the N-measure of paths alive at `t`.
    ///
    /// Integrates `w = 1/u`, which obeys `w' = w^2 psi(1/w)`, from the caps
    /// `1/theta0` and `1/(2 theta0)` and requires the two answers to agree.
    pub fn survival_mass(&self, t: f64) -> Result<f64> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(invalid("t", "survival mass needs t > 0"));
        }
        let rhs = |w: f64| {
            if w <= 0.0 {
                return self.beta;
            }
            w * w * self.psi_raw(1.0 / w)
        };
        let from_cap = |theta0: f64| -> Result<f64> {
            let w = dopri5(rhs, 1.0 / theta0, t, FLOW_RTOL, 1e-300)?;
            Ok(1.0 / w)
        };
        let theta0 = 1e12;
        let v_cap = from_cap(theta0)?;
        let v_doubled = from_cap(2.0 * theta0)?;
        if !(v_cap.is_finite() && v_doubled.is_finite()) || (v_cap - v_doubled).abs() >= 1e-8 {
            return Err(Error::SurvivalNotConverged { v_cap, v_doubled });
        }
        Ok(v_doubled)
    }

    /// Whether `p in (1, 2]`, `int r^p nu(dr) < inf` and `p l^2 < -2 psi'(0+)`.
    pub fn lp_criterion(&self, p: f64, lam: f64) -> bool {
        p > 1.0
            && p <= 2.0
            && self.nu_moment(p).is_finite()
            && p * lam * lam < -2.0 * self.psi_prime_zero()
    }

    /// The strictly positive root of `psi`.
    pub fn largest_root(&self) -> Result<f64> {
        let mut hi = 1.0;
        while self.psi_raw(hi) <= 0.0 {
            hi *= 2.0;
            if hi > 1e15 {
                return Err(Error::Bracket { upper: hi });
            }
        }
        let mut lo = hi / 2.0;
        while self.psi_raw(lo) >= 0.0 {
            hi = lo;
            lo /= 2.0;
            if lo < 1e-300 {
                return Err(Error::Bracket { upper: hi });
            }
        }
        Ok(bisect(|l| self.psi_raw(l), lo, hi))
    }

    /// Per-particle truncated jump quantities used by the particle scheme.
    pub fn truncated_jumps(&self, eps_m: f64) -> Result<TruncatedJumps> {
        TruncatedJumps::new(&self.nu, eps_m)
    }
}

/// The jump measure restricted to `[eps_m, inf)` with samplers for both the
/// normalised restriction and its size-biased (`r nu(dr)`) version.
#[derive(Debug, Clone)]
pub struct TruncatedJumps {
    eps_m: f64,
    /// `nu([eps_m, inf))`.
    pub tail_mass: f64,
    /// `int_{eps_m}^inf r nu(dr)`.
    pub tail_rate: f64,
    /// `int_0^{eps_m} r^2 nu(dr)`, the variance rate discarded by truncation.
    pub discarded_second_moment: f64,
    kind: SamplerKind,
}

#[derive(Debug, Clone)]
enum SamplerKind {
    Empty,
    Atomic {
        sizes: Vec<f64>,
        plain_cdf: Vec<f64>,
        biased_cdf: Vec<f64>,
    },
    Tempered {
        gamma: f64,
        theta: f64,
    },
}

impl TruncatedJumps {
    fn new(nu: &JumpMeasure, eps_m: f64) -> Result<Self> {
        if !(eps_m >= 0.0 && eps_m.is_finite()) {
            return Err(invalid("eps_m", "must be finite and nonnegative"));
        }
        let kind = match nu {
            JumpMeasure::Zero => SamplerKind::Empty,
            JumpMeasure::FiniteAtomic(atoms) => {
                let kept: Vec<(f64, f64)> = atoms.iter().copied().filter(|&(r, _)| r >= eps_m).collect();
                if kept.is_empty() {
                    SamplerKind::Empty
                } else {
                    let cdf = |f: &dyn Fn(f64, f64) -> f64| {
                        let total: f64 = kept.iter().map(|&(r, w)| f(r, w)).sum();
                        let mut acc = 0.0;
                        kept.iter()
                            .map(|&(r, w)| {
                                acc += f(r, w) / total;
                                acc
                            })
                            .collect::<Vec<_>>()
                    };
                    SamplerKind::Atomic {
                        sizes: kept.iter().map(|a| a.0).collect(),
                        plain_cdf: cdf(&|_, w| w),
                        biased_cdf: cdf(&|r, w| r * w),
                    }
                }
            }
            &JumpMeasure::TemperedStable { gamma, theta, .. } => {
                if eps_m == 0.0 {
                    return Err(invalid(
                        "eps_m",
                        "tempered-stable jumps need a positive truncation threshold",
                    ));
                }
                SamplerKind::Tempered { gamma, theta }
            }
        };
        Ok(Self {
            eps_m,
            tail_mass: nu.moment_above(0.0, eps_m.max(f64::MIN_POSITIVE)),
            tail_rate: nu.moment_above(1.0, eps_m.max(f64::MIN_POSITIVE)),
            discarded_second_moment: nu.discarded_second_moment(eps_m),
            kind,
        })
    }

    pub fn eps_m(&self) -> f64 {
        self.eps_m
    }

    pub fn is_empty(&self) -> bool {
        matches!(self.kind, SamplerKind::Empty)
    }

    /// Draw from `nu` restricted to `[eps_m, inf)`, normalised.
    pub fn sample_size<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.kind {
            SamplerKind::Empty => 0.0,
            SamplerKind::Atomic { sizes, plain_cdf, .. } => pick(sizes, plain_cdf, rng),
            &SamplerKind::Tempered { gamma, theta } => {
                sample_pareto_tempered(1.0 + gamma, theta, self.eps_m, rng)
            }
        }
    }

    /// Draw from `r nu(dr) / tail_rate` on `[eps_m, inf)`.
    pub fn sample_biased<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.kind {
            SamplerKind::Empty => 0.0,
            SamplerKind::Atomic { sizes, biased_cdf, .. } => pick(sizes, biased_cdf, rng),
            &SamplerKind::Tempered { gamma, theta } => {
                sample_pareto_tempered(gamma, theta, self.eps_m, rng)
            }
        }
    }
}

fn pick<R: Rng + ?Sized>(sizes: &[f64], cdf: &[f64], rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    let idx = cdf.partition_point(|&c| c <= u).min(sizes.len() - 1);
    sizes[idx]
}

/// Density proportional to `r^{-a} e^{-theta r}` on `[lo, inf)`, `a > 1`:
/// Pareto proposal, accepted with probability `e^{-theta (r - lo)}`.
fn sample_pareto_tempered<R: Rng + ?Sized>(a: f64, theta: f64, lo: f64, rng: &mut R) -> f64 {
    let shape = a - 1.0;
    loop {
        let u: f64 = 1.0 - rng.random::<f64>();
        let r = lo * u.powf(-1.0 / shape);
        let v: f64 = rng.random();
        if v < (-theta * (r - lo)).exp() {
            return r;
        }
    }
}
