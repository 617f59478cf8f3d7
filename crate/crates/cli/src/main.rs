//! Command line driver: geometry selection, decomposition, certification,
//! fattening, extension and norm reports.
//!
//! Exit codes: 0 success, 2 contract violation, 3 configuration error. On
//! failure a JSON object `{"error", "message", "exit_code"}` goes to stderr.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fracext::geometry::GeometryConfig;
use fracext::pipeline::{self, RunConfig};
use fracext::Error;
use serde_json::{json, Value};

#[derive(Debug, Parser)]
#[command(name = "fracext", version, about = "Fattening and extension pipeline for fractional Sobolev functions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Overrides,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Whitney decomposition of the complement of cl(N) and its invariants.
    Decompose,
    /// Interior thickness of O at points of N (Monte Carlo).
    CheckItc,
    /// Degenerate thickness check next to plain ITC in N.
    CheckDegenerate,
    /// Fattened domain: Σ cubes, pair separation, ITC of the fattened domain.
    Fatten,
    /// Seminorm, L^p and Hardy norms of one corpus function.
    Norms,
    /// Zero extension followed by the Whitney extension of one corpus function.
    Extend,
    /// Full run: certification, fattening and the corpus at levels L-1 and L.
    Report,
}

/// Flags override the config file, which overrides the built-in defaults.
#[derive(Debug, Args)]
struct Overrides {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in geometry [default: cusp_touching_halfplane].
    #[arg(long, global = true)]
    geometry: Option<String>,
    /// Resolution level L (grid spacing 2^-L) [default: 8].
    #[arg(long, global = true)]
    level: Option<u32>,
    /// Smoothness s in (0, 1) [default: 0.5].
    #[arg(long, global = true)]
    s: Option<f64>,
    /// Integrability p > 0 [default: 2].
    #[arg(long, global = true)]
    p: Option<f64>,
    /// Seed of every random stream [default: 0].
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte-Carlo points per ball [default: 10000].
    #[arg(long, global = true)]
    mc_samples: Option<usize>,
    /// ITC pass threshold [default: 0.05].
    #[arg(long, global = true)]
    threshold: Option<f64>,
    /// Corpus family for norms/extend: hardy_power, smooth_bump, random_trig,
    /// indicator_negative_control [default: hardy_power].
    #[arg(long, global = true)]
    family: Option<String>,
    /// Fail with exit code 2 when a certification does not pass.
    #[arg(long, global = true)]
    expect_pass: bool,
    /// Output directory [default: out].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads [default: all cores].
    #[arg(long, global = true)]
    threads: Option<usize>,
}

impl Overrides {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(name) = &self.geometry {
            if name != &cfg.geometry.name {
                cfg.geometry = GeometryConfig::builtin(name, cfg.geometry.resolution_level);
            }
        }
        if let Some(l) = self.level {
            cfg.geometry.resolution_level = l;
        }
        macro_rules! set {
            ($($field:ident <- $flag:ident),*) => {$(
                if let Some(v) = self.$flag.clone() {
                    cfg.$field = v;
                }
            )*};
        }
        set!(s <- s, p <- p, seed <- seed, mc_samples <- mc_samples, threshold <- threshold, family <- family, output_dir <- out);
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
        cfg.expect_pass |= self.expect_pass;
        Ok(cfg)
    }
}

fn run(cli: &Cli) -> Result<Value, Error> {
    let cfg = cli.opts.resolve()?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let mut doc = match cli.command {
        Command::Decompose => pipeline::cmd_decompose(&cfg)?,
        Command::CheckItc => pipeline::cmd_check_itc(&cfg)?,
        Command::CheckDegenerate => pipeline::cmd_check_degenerate(&cfg)?,
        Command::Fatten => pipeline::cmd_fatten(&cfg)?,
        Command::Norms => pipeline::cmd_norms(&cfg)?,
        Command::Extend => pipeline::cmd_extend(&cfg)?,
        Command::Report => pipeline::cmd_report(&cfg)?,
    };
    // per-function rows stay in the written artifacts
    if let Value::Object(m) = &mut doc {
        m.remove("corpus");
    }
    Ok(doc)
}

fn fail(kind: &str, message: String, code: u8) -> ExitCode {
    eprintln!("{}", json!({ "error": kind, "message": message, "exit_code": code }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("config", e.to_string(), 3),
    };
    match run(&cli) {
        Ok(doc) => {
            // a closed pipe is not an error of the run
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&doc).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.kind(), e.to_string(), e.exit_code() as u8),
    }
}
