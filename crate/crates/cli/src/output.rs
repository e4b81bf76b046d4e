use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use spinelab::harness::report::write_comment_header;
use spinelab::{Error, ExperimentConfig, NegativeControl, Report, RunMeta};

pub const OUT_ENV: &str = "SPINELAB_OUT";
pub const TOOL: &str = concat!("spinelab ", env!("CARGO_PKG_VERSION"));

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration: {m}"),
            Failure::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::InvalidParameter { .. } | Error::InsufficientReplicates { .. } => {
                Failure::Config(e.to_string())
            }
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

pub struct Context {
    pub cfg: ExperimentConfig,
    pub hash: String,
    pub config_source: String,
    pub seed: u64,
    pub workers: usize,
    pub out: PathBuf,
    pub out_source: String,
    pub control: Option<NegativeControl>,
}

impl Context {
    pub fn meta(&self) -> RunMeta {
        RunMeta {
            config_hash: self.hash.clone(),
            seed: self.seed,
        }
    }

    fn header(&self) -> Vec<(&'static str, String)> {
        vec![
            ("tool", TOOL.to_string()),
            ("config_hash", self.hash.clone()),
            ("seed", self.seed.to_string()),
        ]
    }

    /// Writes a file under the output directory, prefixed by the standard
    /// comment header plus `extra` lines.
    pub fn write(
        &self,
        name: &str,
        extra: &[(&str, String)],
        body: impl FnOnce(&mut dyn Write) -> io::Result<()>,
    ) -> Result<PathBuf, Failure> {
        let path = self.out.join(name);
        let io_err = |e: io::Error| Failure::Runtime(format!("writing {}: {e}", path.display()));
        let mut w = BufWriter::new(File::create(&path).map_err(io_err)?);
        let mut fields = self.header();
        fields.extend(extra.iter().map(|(k, v)| (*k, v.clone())));
        write_comment_header(&mut w, &fields).map_err(io_err)?;
        body(&mut w).map_err(io_err)?;
        w.flush().map_err(io_err)?;
        println!("wrote {}", path.display());
        Ok(path)
    }

    /// Report as `<stem>.csv` (deterministic) and `<stem>.txt` (with run
    /// details and timings).
    pub fn write_report(&self, stem: &str, report: &Report) -> Result<(), Failure> {
        self.write(&format!("{stem}.csv"), &[], |mut w| report.write_csv(&mut w))?;
        let details = [
            ("config", self.config_source.clone()),
            ("output_dir", format!("{} (from {})", self.out.display(), self.out_source)),
            ("workers", self.workers.to_string()),
            (
                "negative_control",
                self.control.map_or("none".to_string(), |c| c.name().to_string()),
            ),
        ];
        self.write(&format!("{stem}.txt"), &details, |mut w| report.write_text(&mut w))?;
        Ok(())
    }
}

/// Prints failing rows with their z-scores.
pub fn print_failures(report: &Report) {
    for r in report.failures() {
        eprintln!(
            "FAIL {} {} t={}: lhs={:.6} rhs={:.6} z={:.3}",
            report.experiment, r.label, r.t, r.lhs.mean, r.rhs.mean, r.z
        );
    }
}
