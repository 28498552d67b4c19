use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use hipdream_core::{
    evaluate, harness, plot, trace_omega, train_with_progress, write_trace_csv, OutputDir,
    TrainConfig, Variant,
};
use hipdream_envs::Task;

#[derive(Parser, Debug)]
#[command(name = "hipdream", version, about = "Hidden-parameter world-model agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train an agent and write metrics.csv, config.txt and checkpoint.json.
    Train {
        #[arg(long)]
        task: Option<Task>,
        /// dreamer, decoder, decoder-cond or privileged
        #[arg(long)]
        model: Option<Variant>,
        #[arg(long)]
        seed: Option<u64>,
        /// Total environment steps.
        #[arg(long)]
        steps: Option<usize>,
        /// `key = value` config file; command-line flags take precedence.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "runs/latest")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint with the deterministic policy.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fix omega instead of sampling it per episode (comma separated).
        #[arg(long, value_delimiter = ',')]
        omega: Option<Vec<f64>>,
    },
    /// Write per-step omega estimates of evaluation episodes at a fixed omega.
    TraceOmega {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        omega: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render learning and omega-error curves from metrics CSVs to SVG.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            task,
            model,
            seed,
            steps,
            config,
            out,
        } => {
            let mut cfg = match &config {
                Some(path) => {
                    let text = std::fs::read_to_string(path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    TrainConfig::from_text(&text)?
                }
                None => TrainConfig::new(Task::Pendulum, Variant::Dreamer),
            };
            if let Some(t) = task {
                cfg.task = t;
            }
            if let Some(m) = model {
                cfg.model = m;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(s) = steps {
                cfg.steps = s;
            }
            cfg.validate()?;
            let dir = OutputDir::new(&out)?;
            let outcome = train_with_progress(&cfg, Some(&dir), |row| {
                println!(
                    "steps {:>7}  eval {:>9.3} ± {:<8.3} loss {:>9.4}  omega_mse {}",
                    row.env_steps,
                    row.eval_mean,
                    row.eval_std,
                    row.loss.total,
                    hipdream_core::metrics::fmt_f64(row.omega_mse)
                );
            })?;
            println!(
                "trained {} env steps, {} updates; wrote {}",
                outcome.env_steps,
                outcome.agent.updates,
                dir.dir.display()
            );
        }
        Command::Eval {
            ckpt,
            episodes,
            seed,
            omega,
        } => {
            let ck = harness::load_checkpoint(&ckpt, None)?;
            check_omega(&ck.agent.config, omega.as_deref())?;
            let s = evaluate(&ck.agent, episodes, seed, omega.as_deref())?;
            println!(
                "{} {} after {} steps: mean {:.4} std {:.4} over {} episodes",
                ck.agent.config.task, ck.agent.config.model, ck.env_steps, s.mean, s.std, episodes
            );
            if let Some(m) = s.omega_mse {
                println!("omega mse {m:.6}");
            }
        }
        Command::TraceOmega {
            ckpt,
            omega,
            episodes,
            seed,
            out,
        } => {
            let ck = harness::load_checkpoint(&ckpt, None)?;
            check_omega(&ck.agent.config, Some(&omega))?;
            let rows = trace_omega(&ck.agent, &omega, episodes, seed)?;
            let dim = ck.agent.config.task.omega_dim();
            match out {
                Some(path) => {
                    let f = File::create(&path)
                        .with_context(|| format!("creating {}", path.display()))?;
                    write_trace_csv(BufWriter::new(f), &rows, dim)?;
                }
                None => {
                    let stdout = std::io::stdout();
                    let mut lock = stdout.lock();
                    write_trace_csv(&mut lock, &rows, dim)?;
                    lock.flush()?;
                }
            }
        }
        Command::Plot { input, out } => {
            let n = plot::plot_dir(&input, &out)?;
            println!("plotted {n} run(s) to {}", out.display());
        }
    }
    Ok(())
}

fn check_omega(cfg: &TrainConfig, omega: Option<&[f64]>) -> Result<()> {
    if let Some(w) = omega {
        let range = cfg.task.omega_range();
        if w.len() != range.dim() || !range.contains(w) {
            bail!(
                "omega {w:?} must have {} values within {:?}..={:?}",
                range.dim(),
                range.lo,
                range.hi
            );
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
