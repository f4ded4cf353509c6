//! `priochain` command line: scenarios, datasets, training and the trust
//! experiments. Exit status is 0 on success, 1 on usage, config or I/O
//! errors and 2 when a trace audit finds a violation.

use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use priochain::election::gbdt::{accuracy, logloss, train_with_eval};
use priochain::election::{generate_dataset, Dataset, TrainParams};
use priochain::engine::LedgerEvent;
use priochain::numfmt::float;
use priochain::peer_prediction::Thresholds;
use priochain::sim::metrics::read_trace;
use priochain::sim::{
    audit_trace, run_attack, run_fig7, run_fig8, run_scenario, Attack, AttackSummary, Fig7Config,
    Fig8Config, ScenarioConfig,
};

/// Overrides the default output directory.
const OUT_ENV: &str = "PRIOCHAIN_OUT";
const DEFAULT_OUT: &str = "out";

#[derive(Parser)]
#[command(name = "priochain", version, about = "Prioritized consortium-chain simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write metrics and the trace.
    Run {
        config: PathBuf,
        /// Replaces the seed from the file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a labeled election dataset as CSV.
    Dataset {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the election classifier on a dataset CSV and report held-out metrics.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_metrics: PathBuf,
        /// Seed of the train/test split.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.6)]
        test_fraction: f64,
    },
    /// Trust trajectories of honest and malicious reviewers.
    Fig7 {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        flip_prob: Option<f64>,
    },
    /// Trust against promptness and history weight.
    Fig8 {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a canned attack scenario.
    Attacks {
        #[arg(long)]
        scenario: Attack,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Audit a recorded trace against the scenario it came from.
    Audit {
        trace: PathBuf,
        /// Scenario file supplying capacity and thresholds; defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

enum Failure {
    /// Usage, configuration or I/O problem.
    Input(String),
    /// The trace audit found violations.
    Audit(Vec<String>),
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

fn input<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Input(e.to_string())
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn audit(trace: &[LedgerEvent], cfg: &ScenarioConfig) -> Result<usize, Failure> {
    let thresholds = Thresholds::new(cfg.d_min, cfg.d_max).map_err(input)?;
    let report = audit_trace(trace, cfg.m, &thresholds);
    if report.is_clean() {
        Ok(report.transitions_replayed)
    } else {
        Err(Failure::Audit(report.violations))
    }
}

fn create(path: &Path) -> Result<io::BufWriter<fs::File>, Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let f = fs::File::create(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    Ok(io::BufWriter::new(f))
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { config, seed, out } => {
            let mut cfg = ScenarioConfig::from_file(&config).map_err(input)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let (metrics, trace) = run_scenario(&cfg).map_err(input)?;
            let dir = out_dir(out);
            metrics.write_dir(&dir, &trace)?;
            for (k, v) in metrics.summary() {
                println!("{k} = {v}");
            }
            let replayed = audit(&trace, &cfg)?;
            println!("audit: clean ({replayed} transitions replayed)");
            println!("wrote {}", dir.display());
        }
        Command::Dataset { n, seed, out } => {
            let data = generate_dataset(n, seed).map_err(input)?;
            match out {
                Some(path) => {
                    let mut w = create(&path)?;
                    data.write_csv(&mut w)?;
                    w.flush()?;
                }
                None => data.write_csv(io::stdout().lock())?,
            }
        }
        Command::Train {
            data,
            out_metrics,
            seed,
            test_fraction,
        } => {
            if !(test_fraction > 0.0 && test_fraction < 1.0) {
                return Err(Failure::Input("--test-fraction must lie in (0, 1)".into()));
            }
            let file = fs::File::open(&data).map_err(|e| Failure::Input(format!("{}: {e}", data.display())))?;
            let dataset = Dataset::read_csv(BufReader::new(file)).map_err(input)?;
            let (test, train) = dataset.split(test_fraction, seed);
            let params = TrainParams::default();
            let (model, history) = train_with_eval(&train.rows, &test.rows, &params).map_err(input)?;
            let labels: Vec<bool> = test.rows.iter().map(|r| r.1).collect();
            let probs: Vec<f64> = test.rows.iter().map(|r| model.predict_proba(&r.0)).collect();
            let preds: Vec<bool> = probs.iter().map(|&p| p >= 0.5).collect();
            let acc = accuracy(&preds, &labels)
                .ok_or_else(|| Failure::Input("test split is empty".into()))?;
            let rows = [
                ("train_rows", train.len().to_string()),
                ("test_rows", test.len().to_string()),
                ("rounds", params.rounds.to_string()),
                ("accuracy", float(acc)),
                ("logloss", float(logloss(&probs, &labels))),
                (
                    "final_train_logloss",
                    float(history.train_logloss.last().copied().unwrap_or(f64::NAN)),
                ),
            ];
            let mut w = create(&out_metrics)?;
            writeln!(w, "metric,value")?;
            for (k, v) in &rows {
                writeln!(w, "{k},{v}")?;
                println!("{k} = {v}");
            }
            w.flush()?;
        }
        Command::Fig7 { out, seed, flip_prob } => {
            let mut cfg = Fig7Config {
                seed,
                ..Fig7Config::default()
            };
            if let Some(p) = flip_prob {
                cfg.flip_prob = p;
            }
            let result = run_fig7(&cfg).map_err(input)?;
            let path = out_dir(out).join("fig7.csv");
            let mut w = create(&path)?;
            result.write_csv(&mut w)?;
            w.flush()?;
            let last = result.iterations();
            println!(
                "honest mean {} malicious mean {} after {last} rounds",
                float(result.honest_mean(last)),
                float(result.malicious_mean(last))
            );
            println!("wrote {}", path.display());
        }
        Command::Fig8 { out } => {
            let result = run_fig8(&Fig8Config::default()).map_err(input)?;
            let path = out_dir(out).join("fig8.csv");
            let mut w = create(&path)?;
            result.write_csv(&mut w)?;
            w.flush()?;
            println!("wrote {}", path.display());
        }
        Command::Attacks { scenario, seed, out } => {
            let (summary, metrics, trace) = run_attack(scenario, seed).map_err(input)?;
            let dir = out_dir(out);
            metrics.write_dir(&dir, &trace)?;
            let mut w = create(&dir.join("attack.csv"))?;
            AttackSummary::write_csv(std::slice::from_ref(&summary), &mut w)?;
            w.flush()?;
            println!(
                "{scenario}: attacker accepted {} voted out {} verdicts changed {}/{}",
                summary.attacker_accepted,
                summary.attacker_voted_out,
                summary.verdicts_changed,
                summary.verdicts
            );
            let cfg = priochain::sim::attack_config(scenario, seed);
            audit(&trace, &cfg)?;
            println!("wrote {}", dir.display());
        }
        Command::Audit { trace, config } => {
            let cfg = match config {
                Some(path) => ScenarioConfig::from_file(&path).map_err(input)?,
                None => ScenarioConfig::honest(10, 0, 1.0),
            };
            let events = read_trace(&trace).map_err(Failure::Input)?;
            let replayed = audit(&events, &cfg)?;
            println!("audit: clean ({replayed} transitions replayed)");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Audit(violations)) => {
            for v in &violations {
                eprintln!("audit: {v}");
            }
            eprintln!("audit: {} violation(s)", violations.len());
            ExitCode::from(2)
        }
    }
}

