use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use mgmc_cli::config::{self, ExperimentSpec, RunFile};
use mgmc_cli::report::{check_report, oracle_gaps};
use mgmc_cli::sweep::{aggregate, run_sweep, write_csv};
use mgmc_core::ccp::{first_subproblem, solve_instance, SolveReport};
use mgmc_core::oracle::DEFAULT_RESTARTS;
use mgmc_core::system::{ChannelSet, SystemConfig};

#[derive(Parser)]
#[command(name = "mgmc", version, about = "Joint grouping, scheduling and precoding for multigroup multicast")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides MGMC_OUT and the file).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed (overrides MGMC_SEED and the file).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one instance; writes report.json and trace.csv.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Also write the first conic subproblem to this JSON file.
        #[arg(long)]
        dump_cone: Option<PathBuf>,
    },
    /// Monte-Carlo sweep; writes raw.csv and aggregate.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Worker threads (0 = one per core).
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Heuristic against exhaustive search on a tiny instance; writes oracle.json.
    Oracle {
        #[command(flatten)]
        common: Common,
        /// Worker threads (0 = one per core).
        #[arg(long, default_value_t = 0)]
        workers: usize,
        /// Random restarts per fixed-assignment solve.
        #[arg(long, default_value_t = DEFAULT_RESTARTS)]
        restarts: usize,
    },
    /// Draw channels for the config and seed; writes channels.json.
    GenChannels {
        #[command(flatten)]
        common: Common,
    },
    /// Re-verify a saved report against the config it came from.
    Check {
        #[command(flatten)]
        common: Common,
        report: PathBuf,
    },
}

struct Loaded {
    file: RunFile,
    cfg: SystemConfig,
    h: ChannelSet,
    seed: u64,
}

fn load_run(c: &Common) -> Result<Loaded> {
    let file: RunFile = config::load(&c.config)?;
    let cfg = file.system.build()?;
    let seed = config::resolve_seed(c.seed, file.seed)?;
    let base = c.config.parent().unwrap_or(Path::new("."));
    let h = file.channels(&cfg, seed, base)?;
    Ok(Loaded { file, cfg, h, seed })
}

fn out_dir(c: &Common, file: Option<PathBuf>) -> Result<PathBuf> {
    let dir = config::resolve_out(c.out.clone(), file, "out");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn execute(cmd: Command) -> Result<u8> {
    match cmd {
        Command::Solve { common, dump_cone } => {
            let run = load_run(&common)?;
            let dir = out_dir(&common, None)?;
            if let Some(p) = dump_cone {
                write_json(&p, &first_subproblem(&run.cfg, &run.h, &run.file.ccp, run.seed)?)?;
            }
            let r = solve_instance(&run.cfg, &run.h, &run.file.ccp, run.seed)?;
            write_json(&dir.join("report.json"), &r)?;
            fs::write(dir.join("trace.csv"), r.trace_csv())?;
            println!(
                "{:?} after {} iterations: {} users in {} groups, mee {:.6}, feasible {}",
                r.status,
                r.iterations,
                r.metrics.scheduled_users,
                r.metrics.scheduled_groups,
                r.metrics.mee,
                r.feasibility.passed
            );
            Ok(r.status.exit_code() as u8)
        }
        Command::Sweep { common, workers } => {
            let mut spec: ExperimentSpec = config::load(&common.config)?;
            spec.seed = config::resolve_seed(common.seed, spec.seed)?;
            let dir = out_dir(&common, spec.out.clone())?;
            let rows = run_sweep(&spec, workers)?;
            let agg = aggregate(&rows);
            write_csv(&dir.join("raw.csv"), &rows)?;
            write_csv(&dir.join("aggregate.csv"), &agg)?;
            let failures = rows.iter().filter(|r| r.failed()).count();
            println!("{} runs ({} failed), {} aggregate rows in {}", rows.len(), failures, agg.len(), dir.display());
            Ok(0)
        }
        Command::Oracle {
            common,
            workers,
            restarts,
        } => {
            let run = load_run(&common)?;
            let dir = out_dir(&common, None)?;
            let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
            let rep = pool.install(|| oracle_gaps(&run.cfg, &run.h, &run.file.ccp, run.seed, restarts))?;
            write_json(&dir.join("oracle.json"), &rep)?;
            for e in &rep.entries {
                println!(
                    "{}: heuristic {:.6} oracle {:.6} gap {:.3e}",
                    e.criterion.name(),
                    e.heuristic_score,
                    e.oracle_score,
                    e.gap
                );
            }
            Ok(0)
        }
        Command::GenChannels { common } => {
            let run = load_run(&common)?;
            let dir = out_dir(&common, None)?;
            write_json(&dir.join("channels.json"), &run.h)?;
            Ok(0)
        }
        Command::Check { common, report } => {
            let run = load_run(&common)?;
            let text = fs::read_to_string(&report).with_context(|| format!("reading {}", report.display()))?;
            let r: SolveReport =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", report.display()))?;
            let problems = check_report(&run.cfg, &run.h, &r);
            if !problems.is_empty() {
                for p in &problems {
                    eprintln!("check: {p}");
                }
                bail!("{} check(s) failed on {}", problems.len(), report.display());
            }
            println!("{}: all checks passed", report.display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
