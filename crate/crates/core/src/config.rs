//! Experiment configuration: a flat key-value format with section headers.
//!
//! ```text
//! # comment
//! [mechanism]
//! alpha = 1
//! beta = 1
//! nu = atomic: 1, 0.5          # or `zero`, `tempered: c, gamma, theta`
//!
//! [measure]
//! mu = 0:1, 1:0.5              # position:weight atoms
//!
//! [experiment]
//! lambda = 0.5, 1.2
//! p = 2
//! f = const:2; gauss:1,0,0.5   # test functions, `;`-separated
//! horizon = 1
//! times = 0.25, 0.5, 1
//! replicates = 10000
//! seed = 1
//!
//! [discretization]
//! epsilon = 0.001
//! dt = 0.001
//! eps_m = 0.001                # defaults to epsilon
//! eta = 0.001                  # defaults to epsilon
//! ```
//!
//! Further sections: `[pde]` (`x_min`, `x_max`, `dx`), `[lp]` (`horizon`,
//! `t_min`, `ratio`, `estimator`, `replicates`), `[verdict]`
//! (`plateau_sigma`, `growth_sigma`, `heavy_tail_ratio`) and `[output]`
//! (`dir`). Every key is optional. Keys may also be written as
//! `section.key = value` outside any section.
//!
//! The config hash is a SHA-256 digest of the canonical form: all resolved
//! values, defaults included, one `section.key = value` line each in sorted
//! order. The seed and output directory are excluded; they are reported
//! separately.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::measure::{AtomicMeasure, TestFunction};
use crate::mechanism::{BranchingMechanism, JumpMeasure};
use crate::particles::SimParams;

/// Estimator for `E[Z_t^p]` in moment curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentEstimator {
    /// `<e^{l.}, mu> * mean((Z^Lambda_t)^{p-1})` over spine systems.
    Spine,
    /// `mean(Z_t^p)` over plain particle paths.
    Plain,
}

impl MomentEstimator {
    pub fn as_str(self) -> &'static str {
        match self {
            MomentEstimator::Spine => "spine",
            MomentEstimator::Plain => "plain",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdeSettings {
    pub x_min: f64,
    pub x_max: f64,
    pub dx: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSettings {
    pub horizon: f64,
    pub t_min: f64,
    pub ratio: f64,
    pub estimator: MomentEstimator,
    pub replicates: usize,
}

impl LpSettings {
    /// Geometric grid `horizon * ratio^{-k}` down to `t_min`, increasing.
    pub fn grid(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut k = 0i32;
        loop {
            let t = self.horizon * self.ratio.powi(-k);
            if t < self.t_min * (1.0 - 1e-12) {
                break;
            }
            out.push(t);
            k += 1;
        }
        out.reverse();
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerdictThresholds {
    pub plateau_sigma: f64,
    pub growth_sigma: f64,
    pub heavy_tail_ratio: f64,
}

impl Default for VerdictThresholds {
    fn default() -> Self {
        Self {
            plateau_sigma: 2.0,
            growth_sigma: 5.0,
            heavy_tail_ratio: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub alpha: f64,
    pub beta: f64,
    pub nu: JumpMeasure,
    pub mu: AtomicMeasure,
    pub lambdas: Vec<f64>,
    pub ps: Vec<f64>,
    pub test_functions: Vec<TestFunction>,
    pub horizon: f64,
    pub times: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
    pub epsilon: f64,
    pub dt: f64,
    pub eps_m: f64,
    pub eta: f64,
    pub pde: PdeSettings,
    pub lp: LpSettings,
    pub verdict: VerdictThresholds,
    pub output_dir: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::parse("").expect("empty config is valid")
    }
}

fn parse_list(value: &str, sep: char) -> Vec<&str> {
    value.split(sep).map(str::trim).filter(|s| !s.is_empty()).collect()
}

fn parse_f64(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("`{}` is not a number", s.trim()))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{}` is not finite", s.trim()))
    }
}

fn parse_f64_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    parse_list(s, ',').into_iter().map(parse_f64).collect()
}

/// Parses `zero`, `atomic: r1, w1; r2, w2` or `tempered: c, gamma, theta`.
pub fn parse_jump_measure(s: &str) -> std::result::Result<JumpMeasure, String> {
    let s = s.trim();
    if s == "zero" || s == "0" {
        return Ok(JumpMeasure::Zero);
    }
    let (kind, args) = s.split_once(':').ok_or_else(|| format!("unknown jump measure `{s}`"))?;
    match kind.trim() {
        "atomic" => {
            let mut atoms = Vec::new();
            for pair in parse_list(args, ';') {
                let nums = parse_f64_list(pair)?;
                if nums.len() != 2 {
                    return Err(format!("atom `{pair}` needs `size, weight`"));
                }
                atoms.push((nums[0], nums[1]));
            }
            JumpMeasure::finite_atomic(atoms).map_err(|e| e.to_string())
        }
        "tempered" => {
            let nums = parse_f64_list(args)?;
            if nums.len() != 3 {
                return Err("tempered takes `c, gamma, theta`".into());
            }
            JumpMeasure::tempered_stable(nums[0], nums[1], nums[2]).map_err(|e| e.to_string())
        }
        other => Err(format!("unknown jump measure family `{other}`")),
    }
}

pub fn format_jump_measure(nu: &JumpMeasure) -> String {
    match nu {
        JumpMeasure::Zero => "zero".into(),
        JumpMeasure::FiniteAtomic(atoms) => {
            let parts: Vec<String> = atoms.iter().map(|(r, w)| format!("{r:?},{w:?}")).collect();
            format!("atomic:{}", parts.join(";"))
        }
        JumpMeasure::TemperedStable { c, gamma, theta } => format!("tempered:{c:?},{gamma:?},{theta:?}"),
    }
}

/// Parses `x:w, x:w`; a bare `x` means weight 1.
pub fn parse_measure(s: &str) -> std::result::Result<AtomicMeasure, String> {
    let s = s.trim();
    if s == "zero" {
        return Ok(AtomicMeasure::zero());
    }
    let mut atoms = Vec::new();
    for item in parse_list(s, ',') {
        let (x, w) = match item.split_once(':') {
            Some((x, w)) => (parse_f64(x)?, parse_f64(w)?),
            None => (parse_f64(item)?, 1.0),
        };
        atoms.push((x, w));
    }
    AtomicMeasure::new(atoms).map_err(|e| e.to_string())
}

const KEYS: &[&str] = &[
    "mechanism.alpha",
    "mechanism.beta",
    "mechanism.nu",
    "measure.mu",
    "experiment.lambda",
    "experiment.p",
    "experiment.f",
    "experiment.horizon",
    "experiment.times",
    "experiment.replicates",
    "experiment.seed",
    "discretization.epsilon",
    "discretization.dt",
    "discretization.eps_m",
    "discretization.eta",
    "pde.x_min",
    "pde.x_max",
    "pde.dx",
    "lp.horizon",
    "lp.t_min",
    "lp.ratio",
    "lp.estimator",
    "lp.replicates",
    "verdict.plateau_sigma",
    "verdict.growth_sigma",
    "verdict.heavy_tail_ratio",
    "output.dir",
];

struct Raw {
    entries: BTreeMap<String, (usize, String)>,
}

impl Raw {
    fn get(&self, key: &str) -> Option<(usize, &str)> {
        self.entries.get(key).map(|(l, v)| (*l, v.as_str()))
    }

    fn line(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |e| e.0)
    }

    fn err(&self, key: &str, reason: impl Into<String>) -> Error {
        Error::Config {
            line: self.line(key),
            key: key.into(),
            reason: reason.into(),
        }
    }

    fn value<T>(
        &self,
        key: &str,
        default: T,
        parse: impl Fn(&str) -> std::result::Result<T, String>,
    ) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some((_, v)) => parse(v).map_err(|r| self.err(key, r)),
        }
    }

    fn opt<T>(&self, key: &str, parse: impl Fn(&str) -> std::result::Result<T, String>) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some((_, v)) => parse(v).map(Some).map_err(|r| self.err(key, r)),
        }
    }
}

fn lex(text: &str) -> Result<Raw> {
    let mut entries = BTreeMap::new();
    let mut section: Option<String> = None;
    for (i, raw_line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw_line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| Error::Config {
                line: line_no,
                key: line.into(),
                reason: "unterminated section header".into(),
            })?;
            let name = name.trim();
            if !KEYS.iter().any(|k| k.split('.').next() == Some(name)) {
                return Err(Error::Config {
                    line: line_no,
                    key: name.into(),
                    reason: "unknown section".into(),
                });
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
            line: line_no,
            key: line.into(),
            reason: "expected `key = value`".into(),
        })?;
        let key = key.trim();
        let full = match (&section, key.contains('.')) {
            (_, true) => key.to_string(),
            (Some(s), false) => format!("{s}.{key}"),
            (None, false) => {
                return Err(Error::Config {
                    line: line_no,
                    key: key.into(),
                    reason: "key outside any section".into(),
                })
            }
        };
        if !KEYS.contains(&full.as_str()) {
            return Err(Error::Config {
                line: line_no,
                key: full,
                reason: "unknown key".into(),
            });
        }
        if let Some((first, _)) = entries.get(&full) {
            return Err(Error::Config {
                line: line_no,
                key: full,
                reason: format!("duplicate key (first set on line {first})"),
            });
        }
        entries.insert(full, (line_no, value.trim().to_string()));
    }
    Ok(Raw { entries })
}

fn positive(v: f64) -> std::result::Result<f64, String> {
    if v > 0.0 {
        Ok(v)
    } else {
        Err(format!("{v} must be positive"))
    }
}

fn count(s: &str) -> std::result::Result<usize, String> {
    s.trim().parse::<usize>().map_err(|_| format!("`{}` is not a nonnegative integer", s.trim()))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let raw = lex(text)?;
        let pos = |s: &str| parse_f64(s).and_then(positive);

        let alpha = raw.value("mechanism.alpha", 1.0, pos)?;
        let beta = raw.value("mechanism.beta", 1.0, parse_f64)?;
        let nu = raw.value("mechanism.nu", JumpMeasure::Zero, parse_jump_measure)?;
        let mu = raw.value("measure.mu", AtomicMeasure::dirac(0.0), parse_measure)?;
        let lambdas = raw.value("experiment.lambda", vec![0.5], parse_f64_list)?;
        let ps = raw.value("experiment.p", vec![2.0], parse_f64_list)?;
        let test_functions = raw.value("experiment.f", vec![TestFunction::Constant(1.0)], |s| {
            parse_list(s, ';').into_iter().map(TestFunction::parse).collect()
        })?;
        let horizon = raw.value("experiment.horizon", 1.0, |s| {
            parse_f64(s).and_then(|v| if v >= 0.0 { Ok(v) } else { Err("must be >= 0".into()) })
        })?;
        let times = raw.value("experiment.times", vec![horizon], parse_f64_list)?;
        let replicates = raw.value("experiment.replicates", 10_000, count)?;
        let seed = raw.value("experiment.seed", 1u64, |s| {
            s.trim().parse::<u64>().map_err(|_| format!("`{}` is not a u64", s.trim()))
        })?;
        let epsilon = raw.value("discretization.epsilon", 0.01, pos)?;
        let dt = raw.value("discretization.dt", 0.01, pos)?;
        let eps_m = raw.opt("discretization.eps_m", parse_f64)?.unwrap_or(epsilon);
        let eta = raw.opt("discretization.eta", pos)?.unwrap_or(epsilon);
        let pde = PdeSettings {
            x_min: raw.value("pde.x_min", -12.0, parse_f64)?,
            x_max: raw.value("pde.x_max", 12.0, parse_f64)?,
            dx: raw.value("pde.dx", 0.05, pos)?,
        };
        let lp_horizon = raw.opt("lp.horizon", pos)?.unwrap_or(8.0 / alpha);
        let lp = LpSettings {
            horizon: lp_horizon,
            t_min: raw.opt("lp.t_min", pos)?.unwrap_or(lp_horizon / 64.0),
            ratio: raw.value("lp.ratio", std::f64::consts::SQRT_2, |s| {
                parse_f64(s).and_then(|v| if v > 1.0 { Ok(v) } else { Err("must exceed 1".into()) })
            })?,
            estimator: raw.value("lp.estimator", MomentEstimator::Spine, |s| match s.trim() {
                "spine" => Ok(MomentEstimator::Spine),
                "plain" => Ok(MomentEstimator::Plain),
                other => Err(format!("unknown estimator `{other}` (spine, plain)")),
            })?,
            replicates: raw.opt("lp.replicates", count)?.unwrap_or(replicates),
        };
        let verdict = VerdictThresholds {
            plateau_sigma: raw.value("verdict.plateau_sigma", 2.0, pos)?,
            growth_sigma: raw.value("verdict.growth_sigma", 5.0, pos)?,
            heavy_tail_ratio: raw.value("verdict.heavy_tail_ratio", 4.0, |s| {
                parse_f64(s).and_then(|v| if v > 1.0 { Ok(v) } else { Err("must exceed 1".into()) })
            })?,
        };
        let output_dir = raw.get("output.dir").map(|(_, v)| v.to_string());

        let cfg = Self {
            alpha,
            beta,
            nu,
            mu,
            lambdas,
            ps,
            test_functions,
            horizon,
            times,
            replicates,
            seed,
            epsilon,
            dt,
            eps_m,
            eta,
            pde,
            lp,
            verdict,
            output_dir,
        };
        cfg.validate(&raw)?;
        Ok(cfg)
    }

    fn validate(&self, raw: &Raw) -> Result<()> {
        self.mechanism().map_err(|e| raw.err("mechanism.beta", e.to_string()))?;
        if self.lambdas.contains(&0.0) {
            return Err(raw.err("experiment.lambda", "lambda = 0 is not allowed (c_lambda has 1/lambda)"));
        }
        if let Some(p) = self.ps.iter().find(|&&p| !(p > 1.0 && p <= 2.0)) {
            return Err(raw.err("experiment.p", format!("{p} outside (1, 2]")));
        }
        if self.eps_m < 0.0 {
            return Err(raw.err("discretization.eps_m", "must be >= 0"));
        }
        if let Some(t) = self.times.iter().find(|&&t| t < 0.0 || t > self.horizon * (1.0 + 1e-12)) {
            return Err(raw.err("experiment.times", format!("{t} outside [0, horizon]")));
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(raw.err("experiment.times", "must be strictly increasing"));
        }
        if self.pde.x_min >= self.pde.x_max {
            return Err(raw.err("pde.x_max", "must exceed pde.x_min"));
        }
        if self.lp.t_min > self.lp.horizon {
            return Err(raw.err("lp.t_min", "must not exceed lp.horizon"));
        }
        Ok(())
    }

    pub fn mechanism(&self) -> Result<BranchingMechanism> {
        BranchingMechanism::new(self.alpha, self.beta, self.nu.clone())
    }

    pub fn sim_params(&self) -> Result<SimParams> {
        SimParams::new(self.epsilon, self.dt, self.eps_m)
    }

    /// All resolved values except seed and output directory, sorted by key.
    pub fn canonical(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",");
        let mu = self
            .mu
            .atoms()
            .iter()
            .map(|(x, w)| format!("{x:?}:{w:?}"))
            .collect::<Vec<_>>()
            .join(",");
        let fs = self.test_functions.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(";");
        let mut m = BTreeMap::new();
        m.insert("mechanism.alpha", format!("{:?}", self.alpha));
        m.insert("mechanism.beta", format!("{:?}", self.beta));
        m.insert("mechanism.nu", format_jump_measure(&self.nu));
        m.insert("measure.mu", if mu.is_empty() { "zero".into() } else { mu });
        m.insert("experiment.lambda", list(&self.lambdas));
        m.insert("experiment.p", list(&self.ps));
        m.insert("experiment.f", fs);
        m.insert("experiment.horizon", format!("{:?}", self.horizon));
        m.insert("experiment.times", list(&self.times));
        m.insert("experiment.replicates", self.replicates.to_string());
        m.insert("discretization.epsilon", format!("{:?}", self.epsilon));
        m.insert("discretization.dt", format!("{:?}", self.dt));
        m.insert("discretization.eps_m", format!("{:?}", self.eps_m));
        m.insert("discretization.eta", format!("{:?}", self.eta));
        m.insert("pde.x_min", format!("{:?}", self.pde.x_min));
        m.insert("pde.x_max", format!("{:?}", self.pde.x_max));
        m.insert("pde.dx", format!("{:?}", self.pde.dx));
        m.insert("lp.horizon", format!("{:?}", self.lp.horizon));
        m.insert("lp.t_min", format!("{:?}", self.lp.t_min));
        m.insert("lp.ratio", format!("{:?}", self.lp.ratio));
        m.insert("lp.estimator", self.lp.estimator.as_str().into());
        m.insert("lp.replicates", self.lp.replicates.to_string());
        m.insert("verdict.plateau_sigma", format!("{:?}", self.verdict.plateau_sigma));
        m.insert("verdict.growth_sigma", format!("{:?}", self.verdict.growth_sigma));
        m.insert("verdict.heavy_tail_ratio", format!("{:?}", self.verdict.heavy_tail_ratio));
        let mut out = String::new();
        for (k, v) in m {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Hex SHA-256 of [`canonical`](Self::canonical).
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = ExperimentConfig::default();
        assert_eq!(c.alpha, 1.0);
        assert_eq!(c.eps_m, c.epsilon);
        assert_eq!(c.eta, c.epsilon);
        assert_eq!(c.times, vec![1.0]);
        assert_eq!(c.lp.horizon, 8.0);
        let g = c.lp.grid();
        assert_eq!(g.len(), 13);
        assert!((g[0] - 0.125).abs() < 1e-12 && g[12] == 8.0);
        assert!(g.iter().any(|&t| (t - 1.0).abs() < 1e-12));
    }

    #[test]
    fn full_file() {
        let text = "\
# Feller with a jump atom
[mechanism]
alpha = 2
beta = 0.5
nu = atomic: 1, 0.5; 3, 1

[measure]
mu = 0:1, 1.5:0.25

[experiment]
lambda = 0.5, -1.2
p = 1.5, 2
f = const:2; gauss:1,0,0.5
horizon = 2
times = 0.5, 1, 2
replicates = 300
seed = 42

[discretization]
epsilon = 0.001
dt = 0.002
";
        let c = ExperimentConfig::parse(text).unwrap();
        assert_eq!(c.nu, JumpMeasure::FiniteAtomic(vec![(1.0, 0.5), (3.0, 1.0)]));
        assert_eq!(c.mu.atoms(), &[(0.0, 1.0), (1.5, 0.25)]);
        assert_eq!(c.lambdas, vec![0.5, -1.2]);
        assert_eq!(c.test_functions.len(), 2);
        assert_eq!(c.seed, 42);
        assert_eq!(c.eps_m, 0.001);
        assert_eq!(c.lp.horizon, 4.0);
        assert_eq!(c.lp.replicates, 300);
        let reparsed = ExperimentConfig::parse(
            &c.canonical()
                .lines()
                .map(|l| l.to_string())
                .collect::<Vec<_>>()
                .join("\n"),
        )
        .unwrap();
        assert_eq!(reparsed.hash(), c.hash());
    }

    #[test]
    fn hash_ignores_formatting_and_seed() {
        let a = ExperimentConfig::parse("[mechanism]\nalpha = 1\n[experiment]\nseed = 3\n").unwrap();
        let b = ExperimentConfig::parse("# x\nmechanism.alpha=1.0   \nexperiment.seed = 9\n").unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = ExperimentConfig::parse("[mechanism]\nalpha = 1.5\n").unwrap();
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn errors_name_line_and_key() {
        let cases = [
            ("[mechanism]\nalpha = x\n", 2, "mechanism.alpha"),
            ("[mechanism]\n\ngamma = 1\n", 3, "mechanism.gamma"),
            ("[bogus]\n", 1, "bogus"),
            ("alpha = 1\n", 1, "alpha"),
            ("[experiment]\np = 2\np = 1.5\n", 3, "experiment.p"),
            ("[experiment]\np = 2.5\n", 2, "experiment.p"),
            ("[experiment]\nlambda = 0\n", 2, "experiment.lambda"),
            ("[mechanism]\nbeta = 0\n", 2, "mechanism.beta"),
            ("[experiment]\nhorizon = 1\ntimes = 0.5, 0.25\n", 3, "experiment.times"),
            ("[mechanism]\nnu = atomic: -1, 1\n", 2, "mechanism.nu"),
            ("[experiment]\nf = wave:1\n", 2, "experiment.f"),
            ("[lp]\nestimator = magic\n", 2, "lp.estimator"),
            ("[mechanism]\nalpha 1\n", 2, "alpha 1"),
        ];
        for (text, line, key) in cases {
            match ExperimentConfig::parse(text) {
                Err(Error::Config { line: l, key: k, .. }) => {
                    assert_eq!((l, k.as_str()), (line, key), "{text:?}")
                }
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn jump_measure_round_trip() {
        for s in ["zero", "atomic:1.0,2.0;3.0,1.0", "tempered:1.0,1.5,1.0"] {
            assert_eq!(format_jump_measure(&parse_jump_measure(s).unwrap()), s);
        }
        assert!(parse_jump_measure("tempered: 1, 2.5, 1").is_err());
    }

    #[test]
    fn measure_parsing() {
        assert_eq!(parse_measure("0").unwrap(), AtomicMeasure::dirac(0.0));
        assert_eq!(parse_measure("zero").unwrap().total_mass(), 0.0);
        assert!(parse_measure("0:-1").is_err());
    }
}
