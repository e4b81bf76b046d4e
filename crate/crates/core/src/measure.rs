//! Finite atomic measures and the test-function families used by the
//! Laplace-functional and spine-law checks.

use std::fmt;

use crate::error::{invalid, Result};

/// `sum_i w_i delta_{x_i}` with positive weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicMeasure {
    atoms: Vec<(f64, f64)>,
}

impl AtomicMeasure {
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        for &(x, w) in &atoms {
            if !x.is_finite() {
                return Err(invalid("mu", format!("atom position {x} is not finite")));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(invalid("mu", format!("atom weight {w} must be positive")));
            }
        }
        Ok(Self { atoms })
    }

    pub fn dirac(x: f64) -> Self {
        Self { atoms: vec![(x, 1.0)] }
    }

    pub fn zero() -> Self {
        Self { atoms: Vec::new() }
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.atoms.iter().map(|&(x, w)| w * f(x)).sum()
    }

    /// `<e^{l .}, mu>`.
    pub fn exp_moment(&self, lam: f64) -> f64 {
        self.integrate(|x| (lam * x).exp())
    }
}

/// Test functions `f` for `E exp(-<f, X_t>)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TestFunction {
    Constant(f64),
    /// `amplitude * exp(-(x - center)^2 / (2 width^2))`.
    GaussianBump {
        amplitude: f64,
        center: f64,
        width: f64,
    },
    /// `min(e^{l x}, cap)`.
    CappedExp { lambda: f64, cap: f64 },
    /// `e^{l x}`, unbounded; only meaningful for mean equations.
    Exp { lambda: f64 },
}

impl TestFunction {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            TestFunction::Constant(c) => c,
            TestFunction::GaussianBump {
                amplitude,
                center,
                width,
            } => {
                let z = (x - center) / width;
                amplitude * (-0.5 * z * z).exp()
            }
            TestFunction::CappedExp { lambda, cap } => (lambda * x).exp().min(cap),
            TestFunction::Exp { lambda } => (lambda * x).exp(),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, TestFunction::Constant(_))
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, TestFunction::Constant(c) if *c == 0.0)
    }

    /// Parses `const:2`, `gauss:a,c,w`, `capexp:l,cap`, `exp:l`.
    pub fn parse(spec: &str) -> std::result::Result<Self, String> {
        let (kind, args) = spec.split_once(':').ok_or_else(|| format!("missing ':' in `{spec}`"))?;
        let nums: Vec<f64> = args
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|e| format!("`{s}`: {e}")))
            .collect::<std::result::Result<_, _>>()?;
        let want = |n: usize| {
            if nums.len() == n {
                Ok(())
            } else {
                Err(format!("`{kind}` takes {n} numbers, got {}", nums.len()))
            }
        };
        let f = match kind.trim() {
            "const" => {
                want(1)?;
                TestFunction::Constant(nums[0])
            }
            "gauss" => {
                want(3)?;
                TestFunction::GaussianBump {
                    amplitude: nums[0],
                    center: nums[1],
                    width: nums[2],
                }
            }
            "capexp" => {
                want(2)?;
                TestFunction::CappedExp {
                    lambda: nums[0],
                    cap: nums[1],
                }
            }
            "exp" => {
                want(1)?;
                TestFunction::Exp { lambda: nums[0] }
            }
            other => return Err(format!("unknown function family `{other}`")),
        };
        match f {
            TestFunction::Constant(c) if c < 0.0 => Err("constant must be nonnegative".into()),
            TestFunction::GaussianBump { amplitude, width, .. } if amplitude < 0.0 || width <= 0.0 => {
                Err("gauss needs amplitude >= 0 and width > 0".into())
            }
            TestFunction::CappedExp { cap, .. } if cap <= 0.0 => Err("cap must be positive".into()),
            _ => Ok(f),
        }
    }
}

impl fmt::Display for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            TestFunction::Constant(c) => write!(f, "const:{c}"),
            TestFunction::GaussianBump {
                amplitude,
                center,
                width,
            } => write!(f, "gauss:{amplitude},{center},{width}"),
            TestFunction::CappedExp { lambda, cap } => write!(f, "capexp:{lambda},{cap}"),
            TestFunction::Exp { lambda } => write!(f, "exp:{lambda}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_roundtrip() {
        for s in ["const:2", "gauss:1,0,0.5", "capexp:0.5,10", "exp:0.5"] {
            let f = TestFunction::parse(s).unwrap();
            assert_eq!(f.to_string(), s);
        }
        assert!(TestFunction::parse("const:-1").is_err());
        assert!(TestFunction::parse("wave:1").is_err());
        assert!(TestFunction::parse("gauss:1,2").is_err());
    }

    #[test]
    fn exp_moment_two_atoms() {
        let mu = AtomicMeasure::new(vec![(0.0, 1.0), (1.0, 1.0)]).unwrap();
        assert!((mu.exp_moment(1.0) - (1.0 + std::f64::consts::E)).abs() < 1e-15);
        assert_eq!(mu.total_mass(), 2.0);
        assert!(AtomicMeasure::new(vec![(0.0, 0.0)]).is_err());
    }
}
