use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use deki_core::experiment::{self, ExperimentConfig, Slopes};
use serde_json::{json, Map, Value};

#[derive(Parser)]
#[command(
    name = "deki",
    version,
    about = "Dynamic ensemble Kalman inversion experiments on Darcy flow"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one stream kind for every configured seed.
    Run(ConfigArgs),
    /// Run the i.i.d., periodic and ergodic streams with shared seeds.
    Compare(ConfigArgs),
    /// Report the convergence-theory conditions for the first seed.
    Validate(ConfigArgs),
    /// Recompute a run from its replay log and compare with records.csv.
    Verify {
        /// Run directory containing metadata.json and replay.bin.
        dir: PathBuf,
    },
    /// Print a preset as JSON.
    Preset {
        #[arg(default_value = "desk")]
        name: String,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON configuration file, possibly partial.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base preset (desk or paper).
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    ensemble_size: Option<usize>,
    /// iid, periodic or ergodic.
    #[arg(long)]
    stream: Option<String>,
    #[arg(long)]
    output: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let file = match &self.config {
            Some(path) => Some(read_json(path)?),
            None => None,
        };
        let mut over = Map::new();
        if let Some(s) = self.seed {
            over.insert("seed".into(), json!(s));
        }
        if let Some(r) = self.replicates {
            over.insert("replicates".into(), json!(r));
        }
        if let Some(t) = self.horizon {
            over.insert("horizon".into(), json!(t));
        }
        if let Some(j) = self.ensemble_size {
            over.insert("ensemble".into(), json!({ "size": j }));
        }
        if let Some(k) = &self.stream {
            over.insert("stream".into(), json!({ "kind": k }));
        }
        if let Some(o) = &self.output {
            over.insert("output".into(), json!(o));
        }
        Ok(ExperimentConfig::layered(
            self.preset.as_deref(),
            file,
            Value::Object(over),
        )?)
    }
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn slope(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |s| format!("{s:.3}"))
}

fn print_slopes(label: &str, s: &Slopes) {
    println!(
        "{label:<10} err_ref {:>8}  err_truth {:>8}  loss_gap {:>8}  E_t {:>8}",
        slope(s.err_ref),
        slope(s.err_truth),
        slope(s.loss_gap),
        slope(s.spread_energy)
    );
}

fn run(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Run(args) => {
            let cfg = args.load()?;
            let out = experiment::run_experiment(&cfg)?;
            for r in &out.summary.runs {
                for w in &r.warnings {
                    eprintln!("warning (seed {}): {w}", r.seed);
                }
            }
            println!(
                "wrote {} run(s) under {}",
                out.summary.runs.len(),
                cfg.output.display()
            );
            print_slopes("mean", &out.summary.mean_slopes);
            Ok(true)
        }
        Command::Compare(args) => {
            let cfg = args.load()?;
            let summary = experiment::compare_streams(&cfg)?;
            println!("wrote {}", cfg.output.join("combined.csv").display());
            for s in &summary.streams {
                print_slopes(s.stream.name(), &s.mean_slopes);
            }
            Ok(true)
        }
        Command::Validate(args) => {
            let cfg = args.load()?;
            let report = experiment::validate_config(&cfg)?;
            let t = &report.theory;
            let verdict = |ok: bool| if ok { "pass" } else { "fail" };
            println!(
                "E_0 = {}, lambda_min(C_0) = {}, A_max = {}",
                t.e0, t.lambda_min_c0, t.a_max
            );
            println!(
                "h_max = {}, h = {:?}, sigma_l = {:?}, lambda = {:?}",
                t.h_max, t.h, t.sigma_l, t.lambda
            );
            println!("full rank (J > d):      {}", verdict(t.full_rank));
            println!("step size <= h_max:     {}", verdict(t.step_ok));
            println!("lambda in (0, 1):       {}", verdict(t.lambda_ok));
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(true)
        }
        Command::Verify { dir } => {
            let same = experiment::verify_run(&dir)?;
            println!(
                "{}: {}",
                dir.display(),
                if same { "identical" } else { "DIFFERENT" }
            );
            Ok(same)
        }
        Command::Preset { name } => {
            println!(
                "{}",
                serde_json::to_string_pretty(&ExperimentConfig::preset(&name)?)?
            );
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
