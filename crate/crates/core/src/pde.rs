//! Finite-difference solvers for `u_t = u_xx/2 - psi(u)` and its linearisation
//! `v_t = v_xx/2 - psi'(0+) v` on a bounded interval with zero-flux ends.
//!
//! Each step is Strang-split: half a reaction step (classical RK4, explicit in
//! `psi`), a backward-Euler diffusion step (tridiagonal solve), then another
//! half reaction step. Spatially constant data is preserved exactly by the
//! diffusion step, so it reduces to the ODE flow.

use std::io::{self, Write};

use crate::error::{invalid, Error, Result};
use crate::mechanism::BranchingMechanism;
use crate::measure::{AtomicMeasure, TestFunction};

/// Clamp threshold for small negative values produced by the reaction step.
pub const NEGATIVE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D {
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
    pub dt: f64,
    pub horizon: f64,
}

impl Grid1D {
    pub fn new(x_min: f64, x_max: f64, nx: usize, dt: f64, horizon: f64) -> Result<Self> {
        if !(x_min < x_max) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(invalid("grid", "need finite x_min < x_max"));
        }
        if nx < 3 {
            return Err(invalid("grid", "need at least 3 spatial points"));
        }
        if !(dt > 0.0) || !(horizon > 0.0) {
            return Err(invalid("grid", "dt and horizon must be positive"));
        }
        let grid = Self {
            x_min,
            x_max,
            nx,
            dt,
            horizon,
        };
        let limit = 0.4 * grid.dx() * grid.dx();
        if dt > limit * (1.0 + 1e-12) {
            return Err(Error::Stability { dt, limit });
        }
        Ok(grid)
    }

    /// Largest stable grid for a given spacing: `dt = 0.4 dx^2`, rounded down
    /// so that `horizon` is a whole number of steps.
    pub fn with_spacing(x_min: f64, x_max: f64, dx: f64, horizon: f64) -> Result<Self> {
        let nx = ((x_max - x_min) / dx).round() as usize + 1;
        let dx = (x_max - x_min) / (nx - 1) as f64;
        let steps = (horizon / (0.4 * dx * dx)).ceil().max(1.0);
        Self::new(x_min, x_max, nx, horizon / steps, horizon)
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.nx - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx()
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt - 1e-9).ceil() as usize
    }

    /// Same spacing and step, on an interval twice as wide about the same centre.
    pub fn doubled(&self) -> Result<Self> {
        let centre = 0.5 * (self.x_min + self.x_max);
        let half = self.x_max - self.x_min;
        Self::new(centre - half, centre + half, 2 * self.nx - 1, self.dt, self.horizon)
    }
}

/// Solution values indexed by (time level, space index).
#[derive(Debug, Clone)]
pub struct Field {
    pub grid: Grid1D,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    /// Number of node updates that produced values below `-NEGATIVE_TOL` and were clamped.
    pub clamped: usize,
}

impl Field {
    pub fn level_at(&self, t: f64) -> Result<usize> {
        let k = (t / self.grid.dt).round() as usize;
        if k >= self.times.len() || (self.times[k] - t).abs() > 1e-9 * t.max(1.0) {
            return Err(invalid("t", format!("{t} is not a stored time level")));
        }
        Ok(k)
    }

    pub fn final_values(&self) -> &[f64] {
        self.values.last().expect("at least the initial level")
    }

    /// Linear interpolation of level `k` at position `x`.
    pub fn interpolate(&self, k: usize, x: f64) -> f64 {
        let g = &self.grid;
        let s = ((x - g.x_min) / g.dx()).clamp(0.0, (g.nx - 1) as f64);
        let i = (s.floor() as usize).min(g.nx - 2);
        let frac = s - i as f64;
        let row = &self.values[k];
        row[i] * (1.0 - frac) + row[i + 1] * frac
    }

    /// CSV rows `t,x,value` for every node at the requested times.
    pub fn write_csv<W: Write>(&self, times: &[f64], out: &mut W) -> io::Result<()> {
        writeln!(out, "t,x,value")?;
        for &t in times {
            let k = self
                .level_at(t)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
            for (i, v) in self.values[k].iter().enumerate() {
                writeln!(out, "{},{},{}", self.times[k], self.grid.x(i), v)?;
            }
        }
        Ok(())
    }
}

/// Backward-Euler operator `I - dt/2 D2` with Neumann ends, pre-factorised.
struct ImplicitDiffusion {
    lower: Vec<f64>,
    diag_inv: Vec<f64>,
    upper: Vec<f64>,
}

impl ImplicitDiffusion {
    fn new(grid: &Grid1D) -> Self {
        let n = grid.nx;
        let r = grid.dt / (2.0 * grid.dx() * grid.dx());
        let mut lower = vec![-r; n];
        let mut upper = vec![-r; n];
        let diag = vec![1.0 + 2.0 * r; n];
        lower[0] = 0.0;
        upper[0] = -2.0 * r;
        lower[n - 1] = -2.0 * r;
        upper[n - 1] = 0.0;
        // Thomas forward sweep coefficients.
        let mut diag_inv = vec![0.0; n];
        let mut c_prime = vec![0.0; n];
        diag_inv[0] = 1.0 / diag[0];
        c_prime[0] = upper[0] * diag_inv[0];
        for i in 1..n {
            let d = diag[i] - lower[i] * c_prime[i - 1];
            diag_inv[i] = 1.0 / d;
            c_prime[i] = upper[i] * diag_inv[i];
        }
        Self {
            lower,
            diag_inv,
            upper: c_prime,
        }
    }

    fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        rhs[0] *= self.diag_inv[0];
        for i in 1..n {
            rhs[i] = (rhs[i] - self.lower[i] * rhs[i - 1]) * self.diag_inv[i];
        }
        for i in (0..n - 1).rev() {
            rhs[i] -= self.upper[i] * rhs[i + 1];
        }
    }
}

fn rk4<F: Fn(f64) -> f64>(rate: &F, u: f64, h: f64) -> f64 {
    let k1 = rate(u);
    let k2 = rate(u + 0.5 * h * k1);
    let k3 = rate(u + 0.5 * h * k2);
    let k4 = rate(u + h * k3);
    u + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

fn solve_split<F: Fn(f64) -> f64>(
    initial: impl Fn(f64) -> f64,
    rate: F,
    grid: &Grid1D,
    clamp_negative: bool,
) -> Result<Field> {
    let steps = grid.steps();
    let diffusion = ImplicitDiffusion::new(grid);
    let mut u: Vec<f64> = (0..grid.nx).map(|i| initial(grid.x(i))).collect();
    if u.iter().any(|v| !v.is_finite()) {
        return Err(invalid("f", "initial data must be finite on the grid"));
    }
    let mut times = Vec::with_capacity(steps + 1);
    let mut values = Vec::with_capacity(steps + 1);
    times.push(0.0);
    values.push(u.clone());
    let half = 0.5 * grid.dt;
    let mut clamped = 0;
    let react = |u: &mut [f64], clamped: &mut usize| {
        for v in u.iter_mut() {
            *v = rk4(&rate, *v, half);
            if clamp_negative && *v < 0.0 {
                if *v < -NEGATIVE_TOL {
                    *clamped += 1;
                }
                *v = 0.0;
            }
        }
    };
    for k in 1..=steps {
        react(&mut u, &mut clamped);
        diffusion.solve_in_place(&mut u);
        react(&mut u, &mut clamped);
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration {
                t: k as f64 * grid.dt,
                step: grid.dt,
                steps: k,
                reason: "non-finite PDE values".into(),
            });
        }
        times.push((k as f64 * grid.dt).min(grid.horizon));
        values.push(u.clone());
    }
    Ok(Field {
        grid: *grid,
        times,
        values,
        clamped,
    })
}

/// `u_f` solving `u_t = u_xx/2 - psi(u)`, `u(.,0) = f`.
pub fn solve_semilinear(mech: &BranchingMechanism, f: &TestFunction, grid: &Grid1D) -> Result<Field> {
    if matches!(f, TestFunction::Exp { .. }) {
        return Err(invalid("f", "semilinear solve needs bounded initial data"));
    }
    solve_split(|x| f.eval(x), |u| -mech.psi_raw(u), grid, true)
}

/// `v_g` solving `v_t = v_xx/2 - psi'(0+) v`, `v(.,0) = g`.
pub fn solve_linear_mean(mech: &BranchingMechanism, g: &TestFunction, grid: &Grid1D) -> Result<Field> {
    let growth = -mech.psi_prime_zero();
    solve_split(|x| g.eval(x), move |v| growth * v, grid, false)
}

/// Distance atoms must keep from the boundary for a horizon `t`.
pub fn probe_margin(t: f64) -> f64 {
    4.0 * t.sqrt()
}

/// `exp(-<u_f(., t), mu>)`, the Laplace functional `E_mu exp(-<f, X_t>)`.
pub fn laplace_functional(
    mech: &BranchingMechanism,
    f: &TestFunction,
    mu: &AtomicMeasure,
    t: f64,
    grid: &Grid1D,
) -> Result<f64> {
    if f.is_zero() || t == 0.0 && mu.total_mass() == 0.0 {
        return Ok(1.0);
    }
    if t == 0.0 {
        return Ok((-mu.integrate(|x| f.eval(x))).exp());
    }
    check_support(mu, grid, t)?;
    if (t - grid.horizon).abs() > 1e-12 * t {
        return Err(invalid("t", "grid horizon must equal the requested time"));
    }
    let field = solve_semilinear(mech, f, grid)?;
    let k = field.times.len() - 1;
    Ok((-mu.integrate(|x| field.interpolate(k, x))).exp())
}

pub fn check_support(mu: &AtomicMeasure, grid: &Grid1D, t: f64) -> Result<()> {
    let margin = probe_margin(t);
    for &(x, _) in mu.atoms() {
        if x - grid.x_min < margin || grid.x_max - x < margin {
            return Err(Error::SupportViolation { x, margin });
        }
    }
    Ok(())
}

/// Largest change at `probes` (final time) when the domain is doubled.
pub fn boundary_error(
    mech: &BranchingMechanism,
    f: &TestFunction,
    grid: &Grid1D,
    probes: &[f64],
    linear: bool,
) -> Result<f64> {
    let solve = |g: &Grid1D| {
        if linear {
            solve_linear_mean(mech, f, g)
        } else {
            solve_semilinear(mech, f, g)
        }
    };
    let narrow = solve(grid)?;
    let wide = solve(&grid.doubled()?)?;
    let kn = narrow.times.len() - 1;
    let kw = wide.times.len() - 1;
    Ok(probes
        .iter()
        .map(|&x| (narrow.interpolate(kn, x) - wide.interpolate(kw, x)).abs())
        .fold(0.0, f64::max))
}
