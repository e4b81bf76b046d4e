use std::io::Write;
use std::time::Instant;

use spinelab::harness::report::num;
use spinelab::harness::{
    duality_test, exp_functional_check, gaussian_moment_report, lp_moment_curve, martingale_mean_test,
    plain_ensemble, spine_ensemble, spine_law_test, spine_structure_test, EnsembleSpec, Estimate, LpOutcome,
};
use spinelab::particles::{run_path, write_martingale_csv, write_snapshot_csv, PathRun};
use spinelab::pde::{probe_margin, solve_linear_mean, solve_semilinear};
use spinelab::rng::{label, stream};
use spinelab::spine::{run_spine_system, write_event_log, write_z_series, SpineRun};
use spinelab::{BranchingMechanism, Field, Grid1D, NegativeControl, Report, SpineParams, Stepper, TestFunction};

use crate::output::{print_failures, Context, Failure};
use crate::Suite;

const CONSTANT_TOL: f64 = 1e-6;
const FEYNMAN_KAC_TOL: f64 = 1e-3;

fn require_lambdas(ctx: &Context) -> Result<&[f64], Failure> {
    if ctx.cfg.lambdas.is_empty() {
        return Err(Failure::Config("experiment.lambda: the lambda list is empty".into()));
    }
    Ok(&ctx.cfg.lambdas)
}

fn allow_control(ctx: &Context, what: &str, allowed: &[NegativeControl]) -> Result<(), Failure> {
    match ctx.control {
        Some(c) if !allowed.contains(&c) => Err(Failure::Config(format!(
            "negative control `{}` does not apply to {what}",
            c.name()
        ))),
        _ => Ok(()),
    }
}

fn spec<'a>(ctx: &'a Context, mech: &'a BranchingMechanism, lam: f64) -> Result<EnsembleSpec<'a>, Failure> {
    Ok(EnsembleSpec {
        mech,
        mu: &ctx.cfg.mu,
        sim: ctx.cfg.sim_params()?,
        lam,
        horizon: ctx.cfg.horizon,
        times: &ctx.cfg.times,
        replicates: ctx.cfg.replicates,
        seed: ctx.seed,
        workers: ctx.workers,
    })
}

fn spine_params(ctx: &Context) -> SpineParams {
    let mut params = SpineParams::new(ctx.cfg.eta);
    if ctx.control == Some(NegativeControl::WrongImmigration) {
        params.continuous_rate_scale = NegativeControl::IMMIGRATION_FACTOR;
    }
    params
}

fn summary_row(w: &mut dyn Write, t: f64, stat: &str, values: &[f64]) -> std::io::Result<()> {
    let e = Estimate::of(values);
    writeln!(w, "{},{stat},{},{},{}", num(t), num(e.mean), num(e.std_error), e.count)
}

/// Level of `field` nearest to `t`.
fn nearest_level(field: &Field, t: f64) -> usize {
    ((t / field.grid.dt).round() as usize).min(field.times.len() - 1)
}

fn write_field(w: &mut dyn Write, field: &Field, times: &[f64]) -> std::io::Result<()> {
    writeln!(w, "t,x,value")?;
    for &t in times {
        let k = nearest_level(field, t);
        for (i, v) in field.values[k].iter().enumerate() {
            writeln!(w, "{},{},{}", num(field.times[k]), num(field.grid.x(i)), num(*v))?;
        }
    }
    Ok(())
}

struct PdeCheck {
    check: &'static str,
    f: String,
    t: f64,
    error: f64,
    tolerance: f64,
}

impl PdeCheck {
    fn pass(&self) -> bool {
        self.error <= self.tolerance
    }
}

pub fn pde(ctx: &Context) -> Result<bool, Failure> {
    allow_control(ctx, "pde", &[])?;
    let cfg = &ctx.cfg;
    let mech = cfg.mechanism()?;
    let grid = Grid1D::with_spacing(cfg.pde.x_min, cfg.pde.x_max, cfg.pde.dx, cfg.horizon)?;
    let mut checks = Vec::new();
    let mut notes = Vec::new();
    for (i, f) in cfg.test_functions.iter().enumerate() {
        let fdesc = [("f", f.to_string())];
        if let TestFunction::Exp { lambda } = *f {
            let field = solve_linear_mean(&mech, f, &grid)?;
            ctx.write(&format!("pde_mean_{i}.csv"), &fdesc, |w| write_field(w, &field, &cfg.times))?;
            let lcl = mech.lambda_c_lambda(lambda);
            for &t in cfg.times.iter().filter(|&&t| t > 0.0) {
                let k = nearest_level(&field, t);
                let tk = field.times[k];
                let lo = (cfg.pde.x_min + probe_margin(tk)).max(-2.0);
                let hi = (cfg.pde.x_max - probe_margin(tk)).min(2.0);
                if lo > hi {
                    notes.push(format!("{f}: no probe points inside the domain at t={tk}"));
                    continue;
                }
                let mut worst: f64 = 0.0;
                for j in 0..=20 {
                    let x = lo + (hi - lo) * j as f64 / 20.0;
                    let lhs = (lcl * tk).exp() * field.interpolate(k, x);
                    worst = worst.max((lhs / (lambda * x).exp() - 1.0).abs());
                }
                checks.push(PdeCheck {
                    check: "feynman-kac-relative",
                    f: f.to_string(),
                    t: tk,
                    error: worst,
                    tolerance: FEYNMAN_KAC_TOL,
                });
            }
            continue;
        }
        let field = solve_semilinear(&mech, f, &grid)?;
        if field.clamped > 0 {
            notes.push(format!("{f}: {} negative node values clamped", field.clamped));
        }
        ctx.write(&format!("pde_u_{i}.csv"), &fdesc, |w| write_field(w, &field, &cfg.times))?;
        if let TestFunction::Constant(c) = *f {
            for &t in &cfg.times {
                let k = nearest_level(&field, t);
                let tk = field.times[k];
                let u = mech.u_flow(c, tk)?;
                let error = field.values[k].iter().map(|v| (v - u).abs()).fold(0.0, f64::max);
                checks.push(PdeCheck {
                    check: "constant-vs-ode",
                    f: f.to_string(),
                    t: tk,
                    error,
                    tolerance: CONSTANT_TOL,
                });
            }
        } else {
            notes.push(format!("{f}: no closed-form cross-check"));
        }
    }
    let pass = checks.iter().all(PdeCheck::pass);
    ctx.write("pde_checks.csv", &[], |w| {
        writeln!(w, "check,f,t,max_error,tolerance,pass")?;
        for c in &checks {
            writeln!(w, "{},{},{},{},{},{}", c.check, c.f, num(c.t), num(c.error), num(c.tolerance), c.pass())?;
        }
        Ok(())
    })?;
    let grid_info = [("grid", format!("nx={} dx={} dt={}", grid.nx, grid.dx(), grid.dt))];
    ctx.write("pde_report.txt", &grid_info, |w| {
        writeln!(w, "result: {}", if pass { "PASS" } else { "FAIL" })?;
        for c in &checks {
            writeln!(
                w,
                "  [{}] {} f={} t={} max error {:.3e} (tolerance {:.0e})",
                if c.pass() { "pass" } else { "FAIL" },
                c.check,
                c.f,
                c.t,
                c.error,
                c.tolerance
            )?;
        }
        for n in &notes {
            writeln!(w, "  note: {n}")?;
        }
        Ok(())
    })?;
    for c in checks.iter().filter(|c| !c.pass()) {
        eprintln!("FAIL pde {} f={} t={}: error {:.3e}", c.check, c.f, c.t, c.error);
    }
    Ok(pass)
}

pub fn simulate(ctx: &Context, dump: usize) -> Result<bool, Failure> {
    allow_control(ctx, "simulate", &[NegativeControl::WrongCLambda])?;
    let mech = ctx.cfg.mechanism()?;
    let fs = &ctx.cfg.test_functions;
    for &lam in require_lambdas(ctx)? {
        let ens = plain_ensemble(&spec(ctx, &mech, lam)?, fs)?;
        let mut lcl = mech.lambda_c_lambda(lam);
        if ctx.control == Some(NegativeControl::WrongCLambda) {
            lcl *= NegativeControl::C_LAMBDA_FACTOR;
        }
        let extra = [("lambda", num(lam)), ("replicates", ens.replicates.len().to_string())];
        ctx.write(&format!("simulate_lambda_{lam:?}.csv"), &extra, |w| {
            writeln!(w, "t,statistic,mean,stderr,count")?;
            for (k, &t) in ens.times.iter().enumerate() {
                summary_row(w, t, "Z", &ens.martingale(k, lcl))?;
                summary_row(w, t, "mass", &ens.mass(k))?;
                for (fi, f) in fs.iter().enumerate() {
                    let v = ens.functional(k, fi);
                    summary_row(w, t, &format!("<{f}>"), &v)?;
                    let lap: Vec<f64> = v.iter().map(|x| (-x).exp()).collect();
                    summary_row(w, t, &format!("exp(-<{f}>)"), &lap)?;
                }
            }
            Ok(())
        })?;
        if dump > 0 {
            // Same streams as the ensemble, so these are its first replicates.
            let stepper = Stepper::new(&mech, ctx.cfg.sim_params()?)?;
            let runs = (0..dump.min(ctx.cfg.replicates) as u64)
                .map(|i| {
                    let mut rng = stream(ctx.seed, &[label::PLAIN, i]);
                    run_path(&ctx.cfg.mu, &mech, lam, &stepper, ctx.cfg.horizon, &ctx.cfg.times, true, &mut rng)
                })
                .collect::<Result<Vec<PathRun>, _>>()?;
            let extra = [("lambda", num(lam))];
            ctx.write(&format!("simulate_snapshots_lambda_{lam:?}.csv"), &extra, |mut w| {
                write_snapshot_csv(&mut w, &runs)
            })?;
            ctx.write(&format!("simulate_martingale_lambda_{lam:?}.csv"), &extra, |mut w| {
                write_martingale_csv(&mut w, &runs)
            })?;
        }
    }
    Ok(true)
}

pub fn spine(ctx: &Context, dump: usize) -> Result<bool, Failure> {
    allow_control(ctx, "spine", &[NegativeControl::WrongImmigration])?;
    let mech = ctx.cfg.mechanism()?;
    let fs = &ctx.cfg.test_functions;
    let params = spine_params(ctx);
    let mut report = Report::new("spine", &ctx.hash, ctx.seed);
    for &lam in require_lambdas(ctx)? {
        let ens = spine_ensemble(&spec(ctx, &mech, lam)?, &params, fs)?;
        let extra = [
            ("lambda", num(lam)),
            ("eta", num(params.eta)),
            ("replicates", ens.replicates.len().to_string()),
        ];
        ctx.write(&format!("spine_lambda_{lam:?}.csv"), &extra, |w| {
            writeln!(w, "t,statistic,mean,stderr,count")?;
            for (k, &t) in ens.times.iter().enumerate() {
                let col = |g: &dyn Fn(&spinelab::harness::ensemble::SpineReplicate) -> f64| -> Vec<f64> {
                    ens.replicates.iter().map(g).collect()
                };
                summary_row(w, t, "Z", &col(&|r| r.z[k].total))?;
                summary_row(w, t, "Z_base", &col(&|r| r.z[k].base))?;
                summary_row(w, t, "Z_continuous", &col(&|r| r.z[k].continuous))?;
                summary_row(w, t, "Z_jump", &col(&|r| r.z[k].jump))?;
                summary_row(w, t, "mass", &col(&|r| r.mass[k]))?;
                summary_row(w, t, "spine_integral", &col(&|r| r.spine_integral[k]))?;
                summary_row(w, t, "jump_sum", &col(&|r| r.jump_sum[k]))?;
                for (fi, f) in fs.iter().enumerate() {
                    summary_row(w, t, &format!("<{f}>"), &ens.functional(k, fi))?;
                }
            }
            Ok(())
        })?;
        report.absorb(spine_structure_test(&ens, &mech, &ctx.cfg.mu, ctx.cfg.eps_m, &ctx.meta())?);
        if dump > 0 {
            let stepper = Stepper::new(&mech, ctx.cfg.sim_params()?)?;
            let runs = (0..dump.min(ctx.cfg.replicates) as u64)
                .map(|i| {
                    let cfg = &ctx.cfg;
                    run_spine_system(&cfg.mu, lam, &mech, &stepper, &params, cfg.horizon, &cfg.times, ctx.seed, i, |_, _| {})
                })
                .collect::<Result<Vec<SpineRun>, _>>()?;
            let extra = [("lambda", num(lam))];
            ctx.write(&format!("spine_events_lambda_{lam:?}.csv"), &extra, |mut w| write_event_log(&mut w, &runs))?;
            ctx.write(&format!("spine_z_lambda_{lam:?}.csv"), &extra, |mut w| write_z_series(&mut w, &runs))?;
        }
    }
    ctx.write_report("spine_structure", &report)?;
    print_failures(&report);
    Ok(report.passed())
}

pub fn verify(ctx: &Context, suite: Suite) -> Result<bool, Failure> {
    use NegativeControl::*;
    let start = Instant::now();
    let cfg = &ctx.cfg;
    let mech = cfg.mechanism()?;
    let meta = ctx.meta();
    let lambdas = require_lambdas(ctx)?;
    let what = format!("suite {}", suite.name());
    let mut report = Report::new(suite.name(), &ctx.hash, ctx.seed);
    match suite {
        Suite::Mean => {
            allow_control(ctx, &what, &[WrongCLambda])?;
            for &lam in lambdas {
                let ens = plain_ensemble(&spec(ctx, &mech, lam)?, &[])?;
                report.absorb(martingale_mean_test(&ens, &mech, &cfg.mu, ctx.control, &meta)?);
            }
        }
        Suite::Duality => {
            allow_control(ctx, &what, &[WrongBranching])?;
            let ens = plain_ensemble(&spec(ctx, &mech, lambdas[0])?, &cfg.test_functions)?;
            report.absorb(duality_test(&ens, &mech, &cfg.mu, &cfg.pde, ctx.control, &meta)?);
        }
        Suite::SpineLaw => {
            allow_control(ctx, &what, &[WrongImmigration])?;
            let params = spine_params(ctx);
            for &lam in lambdas {
                let s = spec(ctx, &mech, lam)?;
                let plain = plain_ensemble(&s, &cfg.test_functions)?;
                let spine = spine_ensemble(&s, &params, &cfg.test_functions)?;
                report.absorb(spine_law_test(&plain, &spine, &mech, &cfg.mu, &meta)?);
                report.absorb(spine_structure_test(&spine, &mech, &cfg.mu, cfg.eps_m, &meta)?);
            }
        }
        Suite::Gaussian => {
            allow_control(ctx, &what, &[WrongDrift])?;
            let times: Vec<f64> = cfg.times.iter().copied().filter(|&t| t > 0.0).collect();
            for &lam in lambdas {
                for &p in &cfg.ps {
                    report.absorb(gaussian_moment_report(&mech, p, lam, &times, cfg.replicates, ctx.control, &meta)?);
                }
            }
        }
        Suite::Expfun => {
            allow_control(ctx, &what, &[WrongDrift])?;
            for &lam in lambdas {
                report.absorb(exp_functional_check(
                    &mech,
                    lam,
                    cfg.horizon,
                    cfg.dt,
                    cfg.replicates,
                    ctx.workers,
                    ctx.control,
                    &meta,
                )?);
            }
        }
    }
    if let Some(c) = ctx.control {
        report.notes.push(format!("negative control `{}` active", c.name()));
        report.notes.dedup();
    }
    report.runtime_secs = start.elapsed().as_secs_f64();
    ctx.write_report(&format!("verify_{}", suite.name()), &report)?;
    print_failures(&report);
    println!(
        "verify {}: {} ({} rows)",
        suite.name(),
        if report.passed() { "PASS" } else { "FAIL" },
        report.rows.len()
    );
    Ok(report.passed())
}

fn gnuplot_block(w: &mut dyn Write, o: &LpOutcome) -> std::io::Result<()> {
    let c = &o.curve;
    writeln!(w, "# lambda={} p={} verdict={}", num(c.lam), num(c.p), o.verdict.as_str())?;
    writeln!(w, "# t mean stderr")?;
    for k in 0..c.times.len() {
        writeln!(w, "{} {} {}", num(c.times[k]), num(c.mean[k]), num(c.sigma(k)))?;
    }
    writeln!(w)?;
    writeln!(w)
}

pub fn lp_scan(ctx: &Context) -> Result<bool, Failure> {
    allow_control(ctx, "lp-scan", &[])?;
    let cfg = &ctx.cfg;
    let lambdas = require_lambdas(ctx)?;
    if cfg.ps.is_empty() {
        return Err(Failure::Config("experiment.p: the p list is empty".into()));
    }
    let mech = cfg.mechanism()?;
    let sim = cfg.sim_params()?;
    let mut outcomes = Vec::new();
    for &lam in lambdas {
        for &p in &cfg.ps {
            let o = lp_moment_curve(
                &mech,
                &cfg.mu,
                lam,
                p,
                sim,
                cfg.eta,
                &cfg.lp,
                &cfg.verdict,
                ctx.seed,
                ctx.workers,
            )?;
            let extra = [
                ("lambda", num(lam)),
                ("p", num(p)),
                ("estimator", o.curve.estimator.as_str().to_string()),
                ("verdict", o.verdict.as_str().to_string()),
            ];
            ctx.write(&format!("lp_curve_lambda_{lam:?}_p_{p:?}.csv"), &extra, |mut w| o.curve.write_csv(&mut w))?;
            println!(
                "lambda={lam} p={p}: criterion={} verdict={} agreement={}",
                o.criterion,
                o.verdict.as_str(),
                o.agreement
            );
            outcomes.push(o);
        }
    }
    ctx.write("lp_matrix.csv", &[], |w| {
        writeln!(w, "lambda,p,criterion,boundary,verdict,agreement")?;
        for o in &outcomes {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                num(o.curve.lam),
                num(o.curve.p),
                o.criterion,
                o.boundary,
                o.verdict.as_str(),
                o.agreement
            )?;
        }
        Ok(())
    })?;
    ctx.write("lp_curves.dat", &[("format", "gnuplot, one index per (lambda, p)".into())], |w| {
        for o in &outcomes {
            gnuplot_block(w, o)?;
        }
        Ok(())
    })?;
    Ok(outcomes.iter().all(|o| o.agreement))
}
