//! `spinelab`: run super-Brownian motion experiments from a config file.
//!
//! Exit codes: 0 success, 1 a check failed, 2 configuration error, 3 solver
//! or I/O failure.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use spinelab::{ExperimentConfig, NegativeControl};

use output::{Context, Failure, OUT_ENV};

#[derive(Parser, Debug)]
#[command(name = "spinelab", version, about = "Particle, spine and PDE experiments for supercritical super-Brownian motion")]
struct Cli {
    /// Experiment config file; defaults apply to every missing key.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed, overriding `experiment.seed`.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Worker threads; affects wall time only.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,

    /// Output directory (overrides $SPINELAB_OUT and `output.dir`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Deliberately perturb the run: wrong-c-lambda, wrong-drift,
    /// wrong-immigration or wrong-branching.
    #[arg(long, global = true, value_name = "NAME")]
    negative_control: Option<String>,

    /// Also write per-replicate CSVs (particle snapshots, martingale series,
    /// spine event logs) for the first N replicates of `simulate` / `spine`.
    #[arg(long, global = true, value_name = "N", default_value_t = 0)]
    dump: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the semilinear PDE for each test function and cross-check it.
    Pde,
    /// Plain particle ensembles: martingale and functional summaries.
    Simulate,
    /// Spine-system ensembles: channel decomposition and mean structure.
    Spine,
    /// Run one identity suite; exit 1 if any check fails.
    Verify {
        #[arg(value_enum)]
        suite: Suite,
    },
    /// Moment curves and verdicts over the lambda x p matrix.
    LpScan,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Mean,
    Duality,
    SpineLaw,
    Gaussian,
    Expfun,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Mean => "mean",
            Suite::Duality => "duality",
            Suite::SpineLaw => "spine-law",
            Suite::Gaussian => "gaussian",
            Suite::Expfun => "expfun",
        }
    }
}

fn context(cli: &Cli) -> Result<Context, Failure> {
    let (text, source) = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
            (text, path.display().to_string())
        }
        None => (String::new(), "(defaults)".to_string()),
    };
    let cfg = ExperimentConfig::parse(&text).map_err(|e| Failure::Config(format!("{source}: {e}")))?;
    let seed = cli.seed.unwrap_or(cfg.seed);
    let workers = match cli.workers {
        Some(0) => return Err(Failure::Config("--workers must be at least 1".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let control = match &cli.negative_control {
        None => None,
        Some(name) => Some(NegativeControl::parse(name).ok_or_else(|| {
            let known: Vec<_> = NegativeControl::ALL.iter().map(|c| c.name()).collect();
            Failure::Config(format!("unknown negative control `{name}` (known: {})", known.join(", ")))
        })?),
    };
    let env_out = std::env::var_os(OUT_ENV).filter(|v| !v.is_empty());
    let (out, out_source) = if let Some(dir) = &cli.out {
        (dir.clone(), "--out".to_string())
    } else if let Some(dir) = env_out {
        (PathBuf::from(dir), format!("${OUT_ENV}"))
    } else if let Some(dir) = &cfg.output_dir {
        (PathBuf::from(dir), "output.dir".to_string())
    } else {
        (PathBuf::from("spinelab-out"), "default".to_string())
    };
    Ok(Context {
        hash: cfg.hash(),
        cfg,
        config_source: source,
        seed,
        workers,
        out,
        out_source,
        control,
    })
}

fn run(cli: &Cli) -> Result<bool, Failure> {
    let ctx = context(cli)?;
    std::fs::create_dir_all(&ctx.out)
        .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", ctx.out.display())))?;
    match &cli.command {
        Command::Pde => commands::pde(&ctx),
        Command::Simulate => commands::simulate(&ctx, cli.dump),
        Command::Spine => commands::spine(&ctx, cli.dump),
        Command::Verify { suite } => commands::verify(&ctx, *suite),
        Command::LpScan => commands::lp_scan(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn global_flags_after_subcommand() {
        let cli = Cli::try_parse_from(["spinelab", "verify", "spine-law", "--seed", "9", "--workers", "2"]).unwrap();
        assert!(matches!(cli.command, Command::Verify { suite: Suite::SpineLaw }));
        assert_eq!(cli.seed, Some(9));
        assert_eq!(cli.workers, Some(2));
        assert_eq!(cli.dump, 0);
    }

    #[test]
    fn suite_names_match_value_enum() {
        for s in Suite::value_variants() {
            let parsed = Suite::from_str(s.name(), false).unwrap();
            assert_eq!(parsed, *s);
        }
        let err = Cli::try_parse_from(["spinelab", "verify", "bogus"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn context_rejects_bad_flags() {
        let cli = Cli::try_parse_from(["spinelab", "pde", "--workers", "0"]).unwrap();
        assert!(matches!(context(&cli), Err(Failure::Config(_))));
        let cli = Cli::try_parse_from(["spinelab", "pde", "--negative-control", "wrong"]).unwrap();
        assert!(matches!(context(&cli), Err(Failure::Config(_))));
        let cli = Cli::try_parse_from(["spinelab", "pde", "--out", "x", "--seed", "3"]).unwrap();
        let ctx = context(&cli).unwrap();
        assert_eq!((ctx.seed, ctx.out_source.as_str()), (3, "--out"));
        assert_eq!(ctx.hash, ExperimentConfig::parse("").unwrap().hash());
    }
}
