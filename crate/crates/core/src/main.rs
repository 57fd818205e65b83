use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use amodal_pursuit::harness::{
    evaluate, held_out_suite, load_suite, run_table, save_logs, train_policy, ExperimentConfig,
    HarnessError, Policy, PolicyChoice, RunConfig,
};
use amodal_pursuit::percept::{parse_layer_stack, receptive_fields};
use amodal_pursuit::policy::gradcheck::{policy_grad_check, GradCheckConfig};
use amodal_pursuit::policy::train::thread_cap;
use amodal_pursuit::policy::{load_checkpoint, save_checkpoint, write_curve_csv, Preset};
use amodal_pursuit::world::generate_suite;

#[derive(Parser)]
#[command(
    version,
    about = "Occlusion-aware pursuit: scenario generation, training, evaluation and audits"
)]
struct Cli {
    /// Master seed for training and generation.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// JSON file overlaid on the preset defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Preset::Desk)]
    preset: Preset,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scenario suite (suite.json).
    Gen {
        #[arg(long)]
        count: Option<usize>,
        /// Generator seed of the first scenario; defaults to the held-out range.
        #[arg(long)]
        first_seed: Option<u64>,
    },
    /// Train the pursuit policy (policy.ckpt, curve.csv).
    Train {
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Evaluate one policy (metrics.csv, report.json, episodes.jsonl).
    Eval {
        #[arg(long, value_enum, default_value_t = PolicyChoice::Passive)]
        policy: PolicyChoice,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        suite: Option<PathBuf>,
    },
    /// Compare baselines, plus a learned policy when a checkpoint is given.
    Table {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        suite: Option<PathBuf>,
    },
    /// Print the receptive field after each layer of a `stride kernel` list.
    RfAudit {
        layers: PathBuf,
        /// Receptive field of the input.
        #[arg(long, default_value_t = 1)]
        rf_in: u64,
    },
    /// Compare network gradients with finite differences.
    GradCheck {
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, default_value_t = 200)]
        coordinates: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| {
        HarnessError::Config(format!(
            "cannot create output directory {}: {e}",
            dir.display()
        ))
    })
}

fn write(path: &Path, text: &str) -> Result<(), HarnessError> {
    std::fs::write(path, text)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    if let Some(n) = thread_cap() {
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let mut cfg = ExperimentConfig::load(cli.preset, cli.config.as_deref())?;
    let out = cli.out;
    match cli.command {
        Command::Gen { count, first_seed } => {
            ensure_dir(&out)?;
            let suite = generate_suite(
                &cfg.generator,
                first_seed.unwrap_or(cfg.eval.first_seed),
                count.unwrap_or(cfg.eval.suite_size),
            )?;
            let path = out.join("suite.json");
            suite.save(&path)?;
            println!(
                "wrote {} scenarios to {}",
                suite.scenarios.len(),
                path.display()
            );
        }
        Command::Train { iterations } => {
            ensure_dir(&out)?;
            if let Some(n) = iterations {
                cfg.train.iterations = n;
            }
            if cfg.train.checkpoint_every > 0 && cfg.train.checkpoint_dir.is_none() {
                let dir = out.join("checkpoints");
                ensure_dir(&dir)?;
                cfg.train.checkpoint_dir = Some(dir);
            }
            let (params, stats) = train_policy(&cfg, cli.seed, |s, _| {
                eprintln!(
                    "iteration {:>4}  return {:>8.3}  collisions {:.3}  delta_conf {}",
                    s.iteration,
                    s.mean_return,
                    s.collision_rate,
                    s.mean_delta_confidence
                        .map_or("-".into(), |d| format!("{d:.4}"))
                );
                Ok(())
            })?;
            save_checkpoint(&params, &out.join("policy.ckpt"))?;
            write_curve_csv(&stats, &out.join("curve.csv"))?;
            println!(
                "wrote {} and {}",
                out.join("policy.ckpt").display(),
                out.join("curve.csv").display()
            );
        }
        Command::Eval {
            policy,
            checkpoint,
            suite,
        } => {
            let run = RunConfig {
                policy,
                checkpoint,
                suite,
                experiment: cfg,
            };
            run.validate()?;
            ensure_dir(&out)?;
            let result = evaluate(&run)?;
            let table = amodal_pursuit::harness::Table {
                horizons: run.experiment.horizons.iter().map(|h| h.label).collect(),
                rows: vec![amodal_pursuit::harness::TableRow {
                    policy: format!("{policy:?}").to_lowercase(),
                    report: result.report.clone(),
                }],
            };
            write(&out.join("metrics.csv"), &table.to_csv())?;
            let json = serde_json::to_string_pretty(&result.report)
                .map_err(|e| HarnessError::Runtime(e.to_string()))?;
            write(&out.join("report.json"), &json)?;
            save_logs(&result.logs, &out.join("episodes.jsonl"))?;
            print!("{}", table.to_text());
        }
        Command::Table { checkpoint, suite } => {
            let run = RunConfig {
                policy: PolicyChoice::Passive,
                checkpoint: None,
                suite,
                experiment: cfg,
            };
            run.validate()?;
            let suite = if run.suite.is_some() {
                load_suite(&run)?
            } else {
                held_out_suite(&run.experiment)?
            };
            let mut policies = vec![Policy::Passive, Policy::Random, Policy::Shortest];
            if let Some(path) = checkpoint {
                if !path.is_file() {
                    return Err(HarnessError::Config(format!(
                        "checkpoint {} does not exist",
                        path.display()
                    )));
                }
                policies.push(Policy::Learned(load_checkpoint(
                    &path,
                    Some(&run.experiment.network),
                )?));
            }
            ensure_dir(&out)?;
            let table = run_table(&policies, &suite, &run.experiment)?;
            write(&out.join("table.csv"), &table.to_csv())?;
            write(&out.join("table.txt"), &table.to_text())?;
            print!("{}", table.to_text());
        }
        Command::RfAudit { layers, rf_in } => {
            if rf_in == 0 {
                return Err(HarnessError::Config("--rf-in must be at least 1".into()));
            }
            let text = std::fs::read_to_string(&layers).map_err(|e| {
                HarnessError::Config(format!("cannot read layer stack {}: {e}", layers.display()))
            })?;
            let stack =
                parse_layer_stack(&text).map_err(|e| HarnessError::Format(e.to_string()))?;
            println!("layer  stride  kernel  rf");
            for (i, (l, rf)) in stack
                .iter()
                .zip(receptive_fields(&stack, rf_in))
                .enumerate()
            {
                println!("{i:>5}  {:>6}  {:>6}  {rf}", l.stride, l.kernel);
            }
        }
        Command::GradCheck {
            seeds,
            coordinates,
            tolerance,
        } => {
            let gc = GradCheckConfig {
                coordinates,
                ..GradCheckConfig::default()
            };
            let mut worst: f64 = 0.0;
            for s in 0..seeds {
                let r = policy_grad_check(&cfg.network, cli.seed.wrapping_add(s), &gc)?;
                println!(
                    "seed {:>3}  checked {:>4}  skipped {:>3}  max_rel_err {:.3e}",
                    cli.seed + s,
                    r.checked,
                    r.skipped,
                    r.max_rel_err
                );
                worst = worst.max(r.max_rel_err);
            }
            if worst > tolerance {
                return Err(HarnessError::Runtime(format!(
                    "max relative error {worst:.3e} exceeds {tolerance:.1e}"
                )));
            }
            println!("ok: max relative error {worst:.3e}");
        }
    }
    Ok(())
}
