use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use privsim::experiment::{self, Design, ExperimentConfig, ReportFormat, RunSummary, Runner};
use privsim::{synthetic, Error, Result, SurveyDataset};

#[derive(Parser)]
#[command(name = "privsim", version, about = "Persona optimization and simulation-fidelity experiments")]
struct Cli {
    /// Directory holding run directories; overrides `output_dir` from configs.
    #[arg(long, global = true)]
    runs_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a survey dataset and print its shape.
    Ingest { file: PathBuf },
    /// Run an in-study, theory, attitude/behavior or sweep experiment.
    Optimize {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score a finished run and rewrite its summary.
    Evaluate {
        #[arg(long)]
        run: String,
    },
    /// Run a cross-study transfer experiment.
    CrossStudy {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write tables and/or plots for a run.
    Report {
        #[arg(long)]
        run: String,
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Re-execute a run from its call log and compare artifacts.
    Replay {
        #[arg(long)]
        run: String,
    },
    /// Write a rule-generated synthetic dataset, for trying things offline.
    Synthesize {
        #[arg(long, default_value_t = 20)]
        respondents: usize,
        #[arg(long, default_value_t = 30)]
        questions: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Plot,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(out) => {
            let text = serde_json::to_string_pretty(&out).expect("json output");
            // A closed pipe (`| head`) is not an error worth a panic.
            let _ = writeln!(std::io::stdout(), "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let record = json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}

fn runs_dir(cli: &Option<PathBuf>) -> PathBuf {
    cli.clone().unwrap_or_else(|| PathBuf::from("runs"))
}

/// `--run` accepts a run id under the runs directory or a path to a run.
fn run_path(runs: &Option<PathBuf>, run: &str) -> Result<PathBuf> {
    let direct = Path::new(run);
    let p = if direct.join("config.json").exists() {
        direct.to_path_buf()
    } else {
        runs_dir(runs).join(run)
    };
    if !p.join("config.json").exists() {
        return Err(Error::Config(format!("no run found at {}", p.display())));
    }
    Ok(p)
}

fn load_config(path: &Path, runs: &Option<PathBuf>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(r) = runs {
        cfg.output_dir = r.clone();
    }
    Ok(cfg)
}

fn brief(summary: &RunSummary, run_dir: &Path) -> Value {
    let reports: Vec<Value> = summary
        .reports
        .iter()
        .map(|r| {
            json!({
                "label": r.label,
                "acc_s": r.macro_metrics.acc_s,
                "tv_complement_s": r.macro_metrics.tv_complement_s,
                "mee_s": r.macro_metrics.mee_s,
                "wd_s": r.macro_metrics.wd_s,
            })
        })
        .collect();
    json!({
        "run_id": summary.run_id,
        "run_dir": run_dir,
        "design": summary.design,
        "reports": reports,
        "skipped": summary.skipped,
    })
}

fn execute(cfg: ExperimentConfig) -> Result<Value> {
    let runner = Runner::new(cfg)?;
    let summary = runner.execute()?;
    Ok(brief(&summary, runner.run_dir()))
}

fn run(cli: Cli) -> Result<Value> {
    let runs = &cli.runs_dir;
    match cli.command {
        Command::Ingest { file } => {
            let loaded = SurveyDataset::load(&file)?;
            let ds = &loaded.dataset;
            let domains: Vec<Value> = ds
                .partition_by_domain()
                .into_iter()
                .map(|(d, ids)| json!({ "domain": d.as_str(), "questions": ids.len() }))
                .collect();
            Ok(json!({
                "name": ds.name,
                "questions": ds.questions.len(),
                "respondents": ds.respondents.len(),
                "domains": domains,
                "digest": ds.digest(),
                "warnings": loaded.warnings,
            }))
        }
        Command::Optimize { config } => {
            let cfg = load_config(&config, runs)?;
            if cfg.design == Design::CrossStudy {
                return Err(Error::Config("cross_study configs run with the `cross-study` command".into()));
            }
            execute(cfg)
        }
        Command::CrossStudy { config } => {
            let cfg = load_config(&config, runs)?;
            if cfg.design != Design::CrossStudy {
                return Err(Error::Config(format!(
                    "`cross-study` needs design = \"cross_study\", got \"{}\"",
                    cfg.design.as_str()
                )));
            }
            execute(cfg)
        }
        Command::Evaluate { run } => {
            let dir = run_path(runs, &run)?;
            let summary = experiment::evaluate_run(&dir)?;
            Ok(brief(&summary, &dir))
        }
        Command::Report { run, format } => {
            let dir = run_path(runs, &run)?;
            let summary_path = dir.join("summary.json");
            let summary: RunSummary = if summary_path.exists() {
                privsim::records::read_json(&summary_path)?
            } else {
                experiment::evaluate_run(&dir)?
            };
            let format = match format {
                Some(Format::Table) => ReportFormat::Table,
                Some(Format::Plot) => ReportFormat::Plot,
                None => ReportFormat::Both,
            };
            experiment::emit_report(&summary, &dir, format)?;
            Ok(json!({ "run_id": summary.run_id, "tables": dir.join("tables"), "plots": dir.join("plots") }))
        }
        Command::Replay { run } => {
            let dir = run_path(runs, &run)?;
            let outcome = experiment::replay_run(&dir)?;
            if !outcome.is_identical() {
                return Err(Error::Schema(format!(
                    "replay differs: mismatched {:?}, missing {:?}",
                    outcome.mismatched, outcome.missing
                )));
            }
            Ok(json!({
                "replay_dir": outcome.replay_dir,
                "identical": true,
                "matched": outcome.matched,
            }))
        }
        Command::Synthesize {
            respondents,
            questions,
            seed,
            out,
        } => {
            let name = out.file_stem().map_or("synthetic".into(), |s| s.to_string_lossy().into_owned());
            let ds = synthetic::rule_dataset(&name, respondents, questions, seed);
            privsim::records::write_atomic(&out, ds.to_json_string()?.as_bytes())?;
            Ok(json!({ "written": out, "respondents": respondents, "questions": questions }))
        }
    }
}
