//! The spine construction of the tilted process: an immortal Brownian spine
//! with drift `lambda`, an independent copy `X'` of the original process, and
//! two immigration streams along the spine.
//!
//! * continuous immigration: at rate `2 beta / eta` an immigrant of mass `eta`
//!   is issued at the spine position (small-mass approximation of the
//!   N-measure, `eta^{-1} P_{eta delta_x} -> N_x`);
//! * jump immigration: a Poisson point process with intensity `ds x r nu(dr)`
//!   (truncated at `eps_m`) issues immigrants of mass `r`.
//!
//! Every immigrant evolves as an independent particle cloud under the same
//! mechanism with its own random stream. The spine itself carries no mass.

use std::io::{self, Write};

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{invalid, Result};
use crate::measure::AtomicMeasure;
use crate::mechanism::BranchingMechanism;
use crate::particles::{martingale_from_parts, observation_steps, seed_cloud, ParticleCloud, Stepper};
use crate::rng::{label, stream, SimRng};

/// Spine positions on the step grid: `positions[k]` is the value at `k * dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinePath {
    pub start: f64,
    pub dt: f64,
    pub drift: f64,
    positions: Vec<f64>,
}

impl SpinePath {
    /// Testing hook: the spine held at `x0` for `steps` steps.
    pub fn frozen(x0: f64, dt: f64, steps: usize) -> Self {
        Self {
            start: x0,
            dt,
            drift: 0.0,
            positions: vec![x0; steps + 1],
        }
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn steps(&self) -> usize {
        self.positions.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.steps() as f64 * self.dt
    }

    pub fn end(&self) -> f64 {
        *self.positions.last().expect("nonempty path")
    }

    /// `dPi^l/dPi = exp(l (xi_T - x0) - l^2 T / 2)` along this path.
    pub fn girsanov_weight(&self, lam: f64) -> f64 {
        (lam * (self.end() - self.start) - 0.5 * lam * lam * self.horizon()).exp()
    }
}

/// Spine start drawn with probability `e^{l x} mu({x}) / <e^{l .}, mu>`.
pub fn sample_spine_start<R: Rng + ?Sized>(mu: &AtomicMeasure, lam: f64, rng: &mut R) -> Result<f64> {
    let atoms = mu.atoms();
    if atoms.is_empty() {
        return Err(invalid("mu", "spine start needs a measure with positive mass"));
    }
    if atoms.len() == 1 {
        return Ok(atoms[0].0);
    }
    let top = atoms.iter().map(|&(x, _)| lam * x).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = atoms.iter().map(|&(x, w)| w * (lam * x - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (&(x, _), &w) in atoms.iter().zip(&weights) {
        if u < w {
            return Ok(x);
        }
        u -= w;
    }
    Ok(atoms[atoms.len() - 1].0)
}

/// Brownian motion with drift `lam` from `x0`, sampled exactly on the `dt` grid.
pub fn evolve_spine<R: Rng + ?Sized>(x0: f64, lam: f64, dt: f64, horizon: f64, rng: &mut R) -> SpinePath {
    let steps = (horizon / dt).round() as usize;
    let sd = dt.sqrt();
    let mut positions = Vec::with_capacity(steps + 1);
    let mut x = x0;
    positions.push(x);
    for _ in 0..steps {
        let z: f64 = rng.sample(StandardNormal);
        x += lam * dt + sd * z;
        positions.push(x);
    }
    SpinePath {
        start: x0,
        dt,
        drift: lam,
        positions,
    }
}

fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|d| d.sample(rng) as usize).unwrap_or(0)
}

fn sorted_uniform_times<R: Rng + ?Sized>(n: usize, horizon: f64, rng: &mut R) -> Vec<f64> {
    let mut times: Vec<f64> = (0..n).map(|_| horizon * rng.random::<f64>()).collect();
    times.sort_by(f64::total_cmp);
    times
}

/// Jump immigration `(s, m)` on `[0, T]`: intensity `ds x r nu(dr)` on `[eps_m, inf)`.
pub fn sample_jump_immigrations<R: Rng + ?Sized>(
    mech: &BranchingMechanism,
    horizon: f64,
    eps_m: f64,
    rng: &mut R,
) -> Result<Vec<(f64, f64)>> {
    let jumps = mech.truncated_jumps(eps_m)?;
    if jumps.is_empty() {
        return Ok(Vec::new());
    }
    let rate = jumps.tail_rate;
    if !rate.is_finite() {
        return Err(invalid("eps_m", "jump immigration rate is infinite"));
    }
    let n = poisson_count(rate * horizon, rng);
    let times = sorted_uniform_times(n, horizon, rng);
    Ok(times.into_iter().map(|s| (s, jumps.sample_biased(rng))).collect())
}

/// Continuous immigration `(s, eta)` on `[0, T]` at rate `2 beta / eta`.
pub fn sample_continuous_immigrations<R: Rng + ?Sized>(
    mech: &BranchingMechanism,
    horizon: f64,
    eta: f64,
    rng: &mut R,
) -> Result<Vec<(f64, f64)>> {
    scaled_continuous_immigrations(mech, horizon, eta, 1.0, rng)
}

fn scaled_continuous_immigrations<R: Rng + ?Sized>(
    mech: &BranchingMechanism,
    horizon: f64,
    eta: f64,
    scale: f64,
    rng: &mut R,
) -> Result<Vec<(f64, f64)>> {
    if !(eta > 0.0) {
        return Err(invalid("eta", "immigrant mass must be positive"));
    }
    let n = poisson_count(scale * 2.0 * mech.beta() / eta * horizon, rng);
    Ok(sorted_uniform_times(n, horizon, rng)
        .into_iter()
        .map(|s| (s, eta))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImmigrationKind {
    Continuous,
    Jump,
}

impl ImmigrationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ImmigrationKind::Continuous => "continuous",
            ImmigrationKind::Jump => "jump",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImmigrationEvent {
    /// Sampled event time.
    pub time: f64,
    /// Step at which the immigrant is seeded (`ceil(time / dt)`).
    pub step: usize,
    pub kind: ImmigrationKind,
    pub mass: f64,
    /// Spine position at the seeding step.
    pub position: f64,
}

impl ImmigrationEvent {
    pub fn seeded_time(&self, dt: f64) -> f64 {
        self.step as f64 * dt
    }
}

/// Knobs for the spine system beyond the particle discretisation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpineParams {
    /// Continuous immigrant mass.
    pub eta: f64,
    /// Multiplier on the continuous immigration rate (1 for the true law).
    pub continuous_rate_scale: f64,
    /// When set, immigrant sub-seeds are permuted with this key.
    pub subseed_shuffle: Option<u64>,
}

impl SpineParams {
    pub fn new(eta: f64) -> Self {
        Self {
            eta,
            continuous_rate_scale: 1.0,
            subseed_shuffle: None,
        }
    }
}

struct Immigrant {
    event_index: usize,
    cloud: ParticleCloud,
    rng: SimRng,
}

/// `Z^Lambda_t` split by channel, as in the spine form of the martingale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZParts {
    pub t: f64,
    pub total: f64,
    pub base: f64,
    pub continuous: f64,
    pub jump: f64,
}

/// View of the spine system at an observation time.
pub struct SpineState<'a> {
    pub t: f64,
    pub spine_position: f64,
    pub base: &'a ParticleCloud,
    immigrants: &'a [Immigrant],
    events: &'a [ImmigrationEvent],
}

impl SpineState<'_> {
    /// `<f, Lambda_t>`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64 + Copy) -> f64 {
        self.base.integrate(f) + self.immigrants.iter().map(|im| im.cloud.integrate(f)).sum::<f64>()
    }

    pub fn total_mass(&self) -> f64 {
        self.integrate(|_| 1.0)
    }

    /// Clouds of the live immigrants of one channel.
    pub fn immigrant_clouds(&self, kind: ImmigrationKind) -> impl Iterator<Item = &ParticleCloud> {
        self.immigrants
            .iter()
            .filter(move |im| self.events[im.event_index].kind == kind)
            .map(|im| &im.cloud)
    }

    pub fn z_parts(&self, lam: f64, lambda_c_lambda: f64) -> ZParts {
        let w = lambda_c_lambda * self.t;
        let base = martingale_from_parts(self.base, lam, w);
        let mut continuous = 0.0;
        let mut jump = 0.0;
        for im in self.immigrants {
            let z = martingale_from_parts(&im.cloud, lam, w);
            match self.events[im.event_index].kind {
                ImmigrationKind::Continuous => continuous += z,
                ImmigrationKind::Jump => jump += z,
            }
        }
        ZParts {
            t: self.t,
            total: base + continuous + jump,
            base,
            continuous,
            jump,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpineRun {
    pub spine: SpinePath,
    pub events: Vec<ImmigrationEvent>,
    pub z: Vec<ZParts>,
}

/// Event log `replicate,s,kind,mass,position`; `s` is the sampled event time.
pub fn write_event_log<W: Write>(out: &mut W, runs: &[SpineRun]) -> io::Result<()> {
    writeln!(out, "replicate,s,kind,mass,position")?;
    for (i, run) in runs.iter().enumerate() {
        for e in &run.events {
            writeln!(out, "{i},{:?},{},{:?},{:?}", e.time, e.kind.as_str(), e.mass, e.position)?;
        }
    }
    Ok(())
}

/// `replicate,t,Z_total,Z_base,Z_n,Z_m` at each observation time.
pub fn write_z_series<W: Write>(out: &mut W, runs: &[SpineRun]) -> io::Result<()> {
    writeln!(out, "replicate,t,Z_total,Z_base,Z_n,Z_m")?;
    for (i, run) in runs.iter().enumerate() {
        for z in &run.z {
            writeln!(out, "{i},{:?},{:?},{:?},{:?},{:?}", z.t, z.total, z.base, z.continuous, z.jump)?;
        }
    }
    Ok(())
}

fn permutation(n: usize, key: Option<u64>) -> Vec<u64> {
    let mut idx: Vec<u64> = (0..n as u64).collect();
    if let Some(k) = key {
        let mut rng = stream(k, &[label::SHUFFLE, n as u64]);
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            idx.swap(i, j);
        }
    }
    idx
}

/// Simulates `(Lambda, xi)` for one replicate and records `Z^Lambda` by channel.
///
/// Randomness is drawn from streams keyed by `(seed, replicate)`; each
/// immigrant gets its own stream. `observe` sees the full state at each
/// observation time.
#[allow(clippy::too_many_arguments)]
pub fn run_spine_system(
    mu: &AtomicMeasure,
    lam: f64,
    mech: &BranchingMechanism,
    stepper: &Stepper,
    params: &SpineParams,
    horizon: f64,
    observation_times: &[f64],
    seed: u64,
    replicate: u64,
    mut observe: impl FnMut(usize, &SpineState<'_>),
) -> Result<SpineRun> {
    mech.c_lambda(lam)?;
    let sim = *stepper.params();
    let dt = sim.dt;
    let steps = observation_steps(observation_times, dt, horizon)?;
    let last = steps.last().copied().unwrap_or(0);
    let span = last as f64 * dt;

    let mut path_rng = stream(seed, &[label::SPINE_PATH, replicate]);
    let x0 = sample_spine_start(mu, lam, &mut path_rng)?;
    let spine = evolve_spine(x0, lam, dt, span, &mut path_rng);

    let mut cont_rng = stream(seed, &[label::CONTINUOUS, replicate]);
    let continuous = scaled_continuous_immigrations(
        mech,
        span,
        params.eta,
        params.continuous_rate_scale,
        &mut cont_rng,
    )?;
    let mut jump_rng = stream(seed, &[label::JUMP, replicate]);
    let jumps = sample_jump_immigrations(mech, span, sim.eps_m, &mut jump_rng)?;

    let snap = |s: f64| ((s / dt).ceil() as usize).clamp(1, last.max(1));
    let mut events: Vec<ImmigrationEvent> = continuous
        .iter()
        .map(|&(s, m)| (s, m, ImmigrationKind::Continuous))
        .chain(jumps.iter().map(|&(s, m)| (s, m, ImmigrationKind::Jump)))
        .map(|(s, m, kind)| {
            let step = snap(s);
            ImmigrationEvent {
                time: s,
                step,
                kind,
                mass: m,
                position: spine.positions()[step],
            }
        })
        .collect();
    events.sort_by(|a, b| a.step.cmp(&b.step).then(a.time.total_cmp(&b.time)));

    // Sub-seed index per event, within its channel.
    let n_cont = continuous.len();
    let n_jump = jumps.len();
    let perm_cont = permutation(n_cont, params.subseed_shuffle);
    let perm_jump = permutation(n_jump, params.subseed_shuffle.map(|k| k ^ 0x5555));
    let mut seen_cont = 0usize;
    let mut seen_jump = 0usize;
    let subseed: Vec<u64> = events
        .iter()
        .map(|e| match e.kind {
            ImmigrationKind::Continuous => {
                seen_cont += 1;
                perm_cont[seen_cont - 1]
            }
            ImmigrationKind::Jump => {
                seen_jump += 1;
                perm_jump[seen_jump - 1]
            }
        })
        .collect();

    let mut base = seed_cloud(mu, sim.epsilon).cloud;
    let mut base_rng = stream(seed, &[label::BASE, replicate]);
    let mut live: Vec<Immigrant> = Vec::new();
    let mut scratch = Vec::new();
    let mut next_event = 0usize;
    let lcl = mech.lambda_c_lambda(lam);
    let mut z = Vec::with_capacity(steps.len());
    let mut obs = 0usize;

    for k in 0..=last {
        let t = k as f64 * dt;
        while next_event < events.len() && events[next_event].step == k {
            let e = &events[next_event];
            let count = (e.mass / sim.epsilon).round() as usize;
            let channel = match e.kind {
                ImmigrationKind::Continuous => label::CONTINUOUS,
                ImmigrationKind::Jump => label::JUMP,
            };
            let mut cloud = ParticleCloud::at(e.position, count, sim.epsilon);
            cloud.set_time(t);
            live.push(Immigrant {
                event_index: next_event,
                cloud,
                rng: stream(seed, &[channel, replicate, subseed[next_event]]),
            });
            next_event += 1;
        }
        base.set_time(t);
        while obs < steps.len() && steps[obs] == k {
            let state = SpineState {
                t,
                spine_position: spine.positions()[k],
                base: &base,
                immigrants: &live,
                events: &events,
            };
            z.push(state.z_parts(lam, lcl));
            observe(obs, &state);
            obs += 1;
        }
        if k == last {
            break;
        }
        if !base.is_empty() {
            stepper.step(&mut base, &mut scratch, &mut base_rng);
        }
        for im in live.iter_mut() {
            stepper.step(&mut im.cloud, &mut scratch, &mut im.rng);
        }
        live.retain(|im| !im.cloud.is_empty());
    }

    Ok(SpineRun { spine, events, z })
}

/// The two random dominating terms of the `L^p` bound along a spine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundTerms {
    /// `int_0^T e^{l (xi_s + c_l s)} ds` (trapezoid rule on the spine grid).
    pub integral: f64,
    /// `integral^q`, `q = p - 1`.
    pub integral_term: f64,
    /// `sum_{s <= T} m_s^q e^{q l (xi_s + c_l s)}` over jump immigrations.
    pub jump_term: f64,
}

/// Bound terms for a spine path and its jump immigration events.
pub fn bound_terms(
    spine: &SpinePath,
    events: &[ImmigrationEvent],
    mech: &BranchingMechanism,
    lam: f64,
    p: f64,
) -> Result<BoundTerms> {
    if !(p > 1.0 && p <= 2.0) {
        return Err(invalid("p", "bound terms need p in (1, 2]"));
    }
    let q = p - 1.0;
    let lcl = mech.lambda_c_lambda(lam);
    let dt = spine.dt;
    let g = |k: usize| (lam * spine.positions()[k] + lcl * k as f64 * dt).exp();
    let n = spine.steps();
    let mut integral = 0.0;
    if n > 0 {
        integral = 0.5 * (g(0) + g(n));
        for k in 1..n {
            integral += g(k);
        }
        integral *= dt;
    }
    let jump_term = events
        .iter()
        .filter(|e| e.kind == ImmigrationKind::Jump && e.step <= n)
        .map(|e| e.mass.powf(q) * (q * (lam * e.position + lcl * e.seeded_time(dt))).exp())
        .sum();
    Ok(BoundTerms {
        integral,
        integral_term: integral.powf(q),
        jump_term,
    })
}

/// Bound terms along the realised spine of a spine-system run.
pub fn bound_terms_for_run(run: &SpineRun, mech: &BranchingMechanism, lam: f64, p: f64) -> Result<BoundTerms> {
    bound_terms(&run.spine, &run.events, mech, lam, p)
}
