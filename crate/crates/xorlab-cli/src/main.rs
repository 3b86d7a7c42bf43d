//! `xorlab` command-line harness.

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use xorlab::baseline::{self, LAMBDAS};
use xorlab::config::TrainConfig;
use xorlab::harness::{self, SweepSpec};
use xorlab::plot::{self, PlotKind};
use xorlab::Error;

#[derive(Parser, Debug)]
#[command(name = "xorlab", version, about = "Two-layer ReLU dynamics on Boolean XOR data")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Config file (`key = value`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the worker count.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Replace existing outputs.
    #[arg(long, global = true)]
    overwrite: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train with the config's monitors; writes trajectory.csv, monitors.jsonl, checkpoints and eval.json.
    Train,
    /// Closed form vs enumeration vs Monte Carlo vs Gaussian on random neurons.
    OracleCheck {
        #[arg(long, value_delimiter = ',', default_value = "6,8,10,12")]
        ds: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
    /// Train with every lemma monitor enabled and summarize pass counts.
    LemmaAudit,
    /// Samples-to-target-error sweep over dimensions with a log-log slope fit.
    Sweep {
        /// Overrides the config's dimension list.
        #[arg(long, value_delimiter = ',')]
        ds: Option<Vec<usize>>,
    },
    /// Kernel ridge regression with the arc-cosine kernel.
    GramBaseline {
        #[arg(long, default_value_t = 512)]
        d: usize,
        /// Training sizes; defaults to `d`.
        #[arg(long, value_delimiter = ',')]
        n: Option<Vec<usize>>,
        #[arg(long, default_value_t = 10_000)]
        n_test: usize,
    },
    /// Ratio, margin and monitor plots from a trajectory CSV.
    Plot {
        csv: PathBuf,
        /// ratio, margins, monitors or all.
        #[arg(long, default_value = "all")]
        kind: String,
    },
}

fn load_train_config(g: &Global) -> Result<TrainConfig> {
    let path = g.config.as_ref().ok_or_else(|| Error::config("config", "this command needs --config <file>"))?;
    let mut c = TrainConfig::load(path).with_context(|| format!("reading {}", path.display()))?;
    if let Some(s) = g.seed {
        c.seed = s;
    }
    if let Some(w) = g.workers {
        c.workers = w;
    }
    c.validate()?;
    Ok(c)
}

fn print_table<T: serde::Serialize>(rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(std::io::stdout());
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Train => {
            let c = load_train_config(g)?;
            let (_, s) = harness::run_train(&c, &g.out, g.overwrite)?;
            println!("{}", serde_json::to_string_pretty(&s)?);
        }
        Command::OracleCheck { ds, trials } => {
            let rows = harness::oracle_check(&ds, trials, g.seed.unwrap_or(0))?;
            harness::prepare_output(&g.out, &["oracle.csv"], g.overwrite)?;
            harness::write_csv(&g.out.join("oracle.csv"), &rows)?;
            print_table(&rows)?;
        }
        Command::LemmaAudit => {
            let c = load_train_config(g)?;
            let rows = harness::run_lemma_audit(&c, &g.out, g.overwrite)?;
            print_table(&rows)?;
        }
        Command::Sweep { ds } => {
            let mut spec = match &g.config {
                Some(p) => SweepSpec::parse(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
                None => SweepSpec::default(),
            };
            if let Some(ds) = ds {
                spec.ds = ds;
            }
            if let Some(s) = g.seed {
                spec.seeds = vec![s];
            }
            if let Some(w) = g.workers {
                spec.workers = w;
            }
            harness::prepare_output(&g.out, &["sweep.csv", "slope.json"], g.overwrite)?;
            let rows = harness::sweep(&spec)?;
            harness::write_csv(&g.out.join("sweep.csv"), &rows)?;
            let fit = harness::fit_slope(&rows);
            std::fs::write(g.out.join("slope.json"), serde_json::to_string_pretty(&fit)?)?;
            print_table(&rows)?;
            match fit {
                Some(f) => println!("slope {:.3} (95% band {:.3} .. {:.3}, {} points)", f.slope, f.ci_low, f.ci_high, f.points),
                None => println!("slope: not enough successful grid points"),
            }
        }
        Command::GramBaseline { d, n, n_test } => {
            let ns = n.unwrap_or_else(|| vec![d]);
            let reports = baseline::gram_curve(d, &ns, n_test, &LAMBDAS, g.seed.unwrap_or(0))?;
            let rows = harness::gram_rows(&reports);
            harness::prepare_output(&g.out, &["gram.csv"], g.overwrite)?;
            harness::write_csv(&g.out.join("gram.csv"), &rows)?;
            print_table(&rows)?;
        }
        Command::Plot { csv, kind } => {
            let k = PlotKind::parse(&kind).ok_or_else(|| Error::config("kind", format!("unknown plot kind `{kind}`")))?;
            if !csv.exists() {
                return Err(anyhow!(Error::Io(std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("{} not found", csv.display())
                ))));
            }
            for p in plot::plot(&csv, k, &g.out, g.overwrite)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

/// 2 for bad input (config, schema, missing file, refused overwrite, capacity), 1 otherwise.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::InvalidConfig { .. })
        | Some(Error::Schema { .. })
        | Some(Error::WouldClobber(_))
        | Some(Error::EnumerationTooLarge { .. })
        | Some(Error::InvalidDimension(_))
        | Some(Error::InvalidArgument(_)) => 2,
        Some(Error::Io(io)) if io.kind() == std::io::ErrorKind::NotFound => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
