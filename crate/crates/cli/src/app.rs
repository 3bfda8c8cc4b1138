//! Argument handling, exit codes and error reporting.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use dfalgebra::report::TableFormat;
use dfalgebra::Error;

use crate::config::{load_config, ConfigFile, Experiment, DESK_SCALE};
use crate::experiments::{run_experiment, ResultDocument, RunContext, Seeds};
use crate::manifest::{config_hash, describe_outputs, Manifest, VERSION};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "dfalgebra",
    version,
    about = "Learn decoherence-free algebra structures from measurement records"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct RunFlags {
    /// JSON experiment config; built-in defaults are used when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, env = "DFALGEBRA_SEED")]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true, env = "DFALGEBRA_OUT")]
    pub out: Option<PathBuf>,
    /// Multiplier on full-scale chain counts (default 0.1).
    #[arg(long, global = true)]
    pub scale: Option<f64>,
    /// Full-scale run: scale 1 and, for the built-in waveguide config, all 11 structures.
    #[arg(long, global = true)]
    pub full: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample train/test measurement chains to JSONL.
    GenData(RunArgs),
    /// List algebra structures of dimension n.
    Enumerate(RunArgs),
    /// Build the embedding hierarchy (JSON and DOT).
    Hierarchy(RunArgs),
    /// Fit one structure to data.
    Train(RunArgs),
    /// Fit every candidate structure and check hierarchy consistency.
    Scan(RunArgs),
    /// Chain length vs chain count at a fixed product N·S.
    Tradeoff(RunArgs),
    /// Train on restricted accessible algebras and cross-evaluate.
    Restricted(RunArgs),
    /// Structure scan on the chiral waveguide model.
    Waveguide(RunArgs),
    /// Run the numerical property suite.
    Verify(RunArgs),
    /// Render a result JSON file as a table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub flags: RunFlags,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// A train/scan/tradeoff/restricted/waveguide result JSON.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "text")]
    pub format: String,
}

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl Failure {
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "error": { "kind": self.kind, "message": self.message, "exit_code": self.code }
        })
        .to_string()
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            Error::NonFinite { .. } => (EXIT_NUMERICAL, "non_finite"),
            Error::ZeroProbabilityBranch { .. } => (EXIT_NUMERICAL, "zero_probability_branch"),
            Error::TrainingFailed(_) => (EXIT_NUMERICAL, "training_failed"),
            Error::NotRepresentable(_) => (EXIT_NUMERICAL, "not_representable"),
            Error::InvalidArgument(_) => (EXIT_CONFIG, "invalid_argument"),
            Error::DimensionMismatch { .. } => (EXIT_CONFIG, "dimension_mismatch"),
            Error::NotUnital(_) => (EXIT_CONFIG, "not_unital"),
            Error::UnknownStructure(_) => (EXIT_CONFIG, "unknown_structure"),
            Error::Format(_) => (EXIT_CONFIG, "format"),
            Error::Io(_) => (EXIT_CONFIG, "io"),
            Error::Json(_) => (EXIT_CONFIG, "json"),
        };
        Self {
            code,
            kind,
            message: e.to_string(),
        }
    }
}

fn kind_of(cmd: &Command) -> &'static str {
    match cmd {
        Command::GenData(_) => "gen_data",
        Command::Enumerate(_) => "enumerate",
        Command::Hierarchy(_) => "hierarchy",
        Command::Train(_) => "train",
        Command::Scan(_) => "scan",
        Command::Tradeoff(_) => "tradeoff",
        Command::Restricted(_) => "restricted",
        Command::Waveguide(_) => "waveguide",
        Command::Verify(_) => "verify",
        Command::Report(_) => "report",
    }
}

fn default_config(kind: &str, full: bool) -> dfalgebra::Result<Experiment> {
    let mut e = Experiment::default_for(kind)?;
    if let (true, Experiment::Waveguide(c)) = (full, &mut e) {
        c.candidates = Experiment::waveguide_full_candidates();
        c.chains = 100;
        c.train.epochs = 1500;
        c.train.eval_every = 1;
    }
    Ok(e)
}

/// Runs one command; on success returns the text for stdout.
pub fn execute(cli: Cli) -> Result<(String, bool), Failure> {
    let kind = kind_of(&cli.command);
    let args = match cli.command {
        Command::Report(r) => return report(&r).map(|t| (t, true)),
        Command::GenData(a)
        | Command::Enumerate(a)
        | Command::Hierarchy(a)
        | Command::Train(a)
        | Command::Scan(a)
        | Command::Tradeoff(a)
        | Command::Restricted(a)
        | Command::Waveguide(a)
        | Command::Verify(a) => a.flags,
    };
    let file = match &args.config {
        Some(p) => load_config(p)?,
        None => ConfigFile {
            seed: None,
            scale: None,
            experiment: default_config(kind, args.full)?,
        },
    };
    if file.experiment.kind() != kind {
        return Err(Error::InvalidArgument(format!(
            "config describes a `{}` experiment but the subcommand is `{kind}`",
            file.experiment.kind()
        ))
        .into());
    }
    let scale = if args.full {
        1.0
    } else {
        args.scale.or(file.scale).unwrap_or(DESK_SCALE)
    };
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("scale must be positive, got {scale}")).into());
    }
    if let Some(j) = args.jobs {
        if j == 0 {
            return Err(Error::InvalidArgument("jobs must be at least 1".into()).into());
        }
        // Fails only if a pool already exists, which keeps its size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let resolved = ConfigFile {
        seed: Some(seed),
        scale: Some(scale),
        experiment: file.experiment,
    };
    resolved.experiment.validate()?;
    let out_dir = args.out.unwrap_or_else(|| PathBuf::from("results").join(kind));
    let ctx = RunContext {
        seeds: Seeds::derive(seed),
        scale,
        out_dir: out_dir.clone(),
    };
    let outcome = run_experiment(&resolved.experiment, &ctx)?;
    let manifest = Manifest {
        tool: "dfalgebra".into(),
        version: VERSION.into(),
        command: kind.into(),
        config_sha256: config_hash(&resolved),
        config: resolved,
        seeds: ctx.seeds,
        scale,
        jobs: args.jobs,
        outputs: describe_outputs(&out_dir, &outcome.files).map_err(Error::from)?,
        passed: outcome.passed,
        summary: outcome.summary.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(Error::from)? + "\n";
    std::fs::write(out_dir.join("manifest.json"), &text).map_err(Error::from)?;
    let stdout = serde_json::to_string_pretty(&serde_json::json!({
        "command": kind,
        "out": out_dir,
        "passed": outcome.passed,
        "summary": outcome.summary,
    }))
    .map_err(Error::from)?;
    Ok((stdout, outcome.passed))
}

fn report(r: &ReportArgs) -> Result<String, Failure> {
    let format: TableFormat = r.format.parse()?;
    let text = std::fs::read_to_string(&r.input)
        .map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", r.input.display())))?;
    let doc: ResultDocument = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidArgument(format!("{} is not a result file: {e}", r.input.display())))?;
    Ok(doc.table()?.render(format)?)
}

/// Parses `args`, runs, prints, and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return EXIT_OK;
        }
        Err(e) => {
            let f = Failure {
                code: EXIT_CONFIG,
                kind: "usage",
                message: e.to_string(),
            };
            eprintln!("{}", f.to_json());
            return f.code;
        }
    };
    match execute(cli) {
        Ok((out, passed)) => {
            println!("{out}");
            if passed {
                EXIT_OK
            } else {
                let f = Failure {
                    code: EXIT_NUMERICAL,
                    kind: "check_failed",
                    message: "one or more property checks failed; see verify.json".into(),
                };
                eprintln!("{}", f.to_json());
                f.code
            }
        }
        Err(f) => {
            eprintln!("{}", f.to_json());
            f.code
        }
    }
}
