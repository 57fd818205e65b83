//! Evaluation runs, comparison tables, training entry point and episode logs.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::metrics::{compute_metrics, MetricsReport};
use super::HarnessError;
use crate::planner::{PassiveController, RandomController, ShortestPathController};
use crate::policy::env::{
    rollout, EpisodeLog, FirstDetection, LearnedController, LoggedDetection, PursuitEnv,
    TerminalCause, TickRecord,
};
use crate::policy::train::{stream_seed, train, IterationStats};
use crate::policy::{load_checkpoint, ActionSpace, PolicyError, PolicyParams};
use crate::world::{generate_scenario, generate_suite, ScenarioSuite};

/// Training scenarios always have this generator-seed bit set, which keeps
/// them apart from held-out suites built from small seeds.
pub const TRAIN_SCENARIO_BIT: u64 = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PolicyChoice {
    Passive,
    Random,
    Shortest,
    Learned,
}

/// What to evaluate and where its inputs live.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub policy: PolicyChoice,
    pub checkpoint: Option<PathBuf>,
    /// Scenario suite file; without one the held-out suite is generated.
    pub suite: Option<PathBuf>,
    pub experiment: ExperimentConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        self.experiment.validate()?;
        if let Some(s) = &self.suite {
            if !s.is_file() {
                return Err(HarnessError::Config(format!(
                    "scenario suite {} does not exist",
                    s.display()
                )));
            }
        }
        match (&self.policy, &self.checkpoint) {
            (PolicyChoice::Learned, None) => Err(HarnessError::Config(
                "the learned policy needs a checkpoint".into(),
            )),
            (PolicyChoice::Learned, Some(c)) if !c.is_file() => Err(HarnessError::Config(format!(
                "checkpoint {} does not exist",
                c.display()
            ))),
            _ => Ok(()),
        }
    }
}

/// A policy ready to run.
#[derive(Debug, Clone)]
pub enum Policy {
    Passive,
    Random,
    Shortest,
    Learned(PolicyParams),
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Passive => "passive",
            Policy::Random => "random",
            Policy::Shortest => "shortest",
            Policy::Learned(_) => "learned",
        }
    }
}

/// Loads the suite named by the run, or generates the held-out suite.
pub fn load_suite(run: &RunConfig) -> Result<ScenarioSuite, HarnessError> {
    match &run.suite {
        Some(path) => Ok(ScenarioSuite::load(path)?),
        None => held_out_suite(&run.experiment),
    }
}

pub fn held_out_suite(cfg: &ExperimentConfig) -> Result<ScenarioSuite, HarnessError> {
    Ok(generate_suite(
        &cfg.generator,
        cfg.eval.first_seed,
        cfg.eval.suite_size,
    )?)
}

pub fn load_policy(run: &RunConfig) -> Result<Policy, HarnessError> {
    Ok(match run.policy {
        PolicyChoice::Passive => Policy::Passive,
        PolicyChoice::Random => Policy::Random,
        PolicyChoice::Shortest => Policy::Shortest,
        PolicyChoice::Learned => {
            let path = run.checkpoint.as_ref().ok_or_else(|| {
                HarnessError::Config("the learned policy needs a checkpoint".into())
            })?;
            if !path.is_file() {
                return Err(HarnessError::Config(format!(
                    "checkpoint {} does not exist",
                    path.display()
                )));
            }
            Policy::Learned(load_checkpoint(path, Some(&run.experiment.network))?)
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutput {
    pub report: MetricsReport,
    /// Ordered by seed, then scenario.
    pub logs: Vec<EpisodeLog>,
}

/// Runs `policy` on every (seed, scenario) pair and scores the logs.
pub fn evaluate_policy(
    policy: &Policy,
    suite: &ScenarioSuite,
    cfg: &ExperimentConfig,
) -> Result<EvalOutput, HarnessError> {
    let actions = ActionSpace::default();
    let jobs: Vec<(u64, usize)> = cfg
        .eval
        .seeds
        .iter()
        .flat_map(|&s| (0..suite.scenarios.len()).map(move |i| (s, i)))
        .collect();
    let logs = jobs
        .par_iter()
        .map(|&(seed, i)| {
            let scenario = &suite.scenarios[i];
            let ep_seed = stream_seed(seed, i as u64, 0);
            let env = &cfg.env;
            match policy {
                Policy::Passive => {
                    rollout(scenario, &mut PassiveController, env, &actions, ep_seed)
                }
                Policy::Random => rollout(scenario, &mut RandomController, env, &actions, ep_seed),
                Policy::Shortest => rollout(
                    scenario,
                    &mut ShortestPathController::new(cfg.planner),
                    env,
                    &actions,
                    ep_seed,
                ),
                Policy::Learned(p) => rollout(
                    scenario,
                    &mut LearnedController {
                        params: p,
                        greedy: cfg.eval.greedy,
                    },
                    env,
                    &actions,
                    ep_seed,
                ),
            }
        })
        .collect::<Result<Vec<_>, PolicyError>>()?;
    Ok(EvalOutput {
        report: compute_metrics(&logs, &cfg.horizons),
        logs,
    })
}

pub fn evaluate(run: &RunConfig) -> Result<EvalOutput, HarnessError> {
    run.validate()?;
    let policy = load_policy(run)?;
    let suite = load_suite(run)?;
    evaluate_policy(&policy, &suite, &run.experiment)
}

/// Trains a fresh network on generated occlusion scenarios.
pub fn train_policy<C>(
    cfg: &ExperimentConfig,
    seed: u64,
    on_iteration: C,
) -> Result<(PolicyParams, Vec<IterationStats>), HarnessError>
where
    C: FnMut(&IterationStats, &PolicyParams) -> Result<(), PolicyError>,
{
    use rand::SeedableRng;
    cfg.validate()?;
    let mut params = PolicyParams::init(
        &cfg.network,
        &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed),
    )?;
    let train_cfg = crate::policy::TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let actions = ActionSpace::default();
    let make = |_: usize, _: usize, s: u64| {
        let scenario = generate_scenario(&cfg.generator, s | TRAIN_SCENARIO_BIT)?;
        PursuitEnv::new(&scenario, cfg.env.clone(), actions.clone(), s)
    };
    let stats = train(&mut params, make, &train_cfg, on_iteration)?;
    Ok((params, stats))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub policy: String,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub horizons: Vec<u32>,
    pub rows: Vec<TableRow>,
}

/// Evaluates every policy on the same suite and seeds.
pub fn run_table(
    policies: &[Policy],
    suite: &ScenarioSuite,
    cfg: &ExperimentConfig,
) -> Result<Table, HarnessError> {
    if policies.len() < 2 {
        return Err(HarnessError::Config(
            "a comparison table needs at least two policies".into(),
        ));
    }
    let mut rows = Vec::new();
    for p in policies {
        let out = evaluate_policy(p, suite, cfg)?;
        rows.push(TableRow {
            policy: p.name().into(),
            report: out.report,
        });
    }
    Ok(Table {
        horizons: cfg.horizons.iter().map(|h| h.label).collect(),
        rows,
    })
}

impl Table {
    /// Cell values in column order. The passive row has no pursuit-accuracy
    /// entries, shown as `-`.
    fn cells(&self, row: &TableRow) -> Vec<String> {
        let r = &row.report;
        let mut c = vec![
            row.policy.clone(),
            fmt(r.acc_cls),
            fmt(r.miou),
            fmt(r.acc_tr),
        ];
        for h in &self.horizons {
            c.push(match (row.policy.as_str(), r.delta_acc.get(h)) {
                ("passive", _) | (_, None) => "-".into(),
                (_, Some(v)) => fmt(*v),
            });
        }
        c.push(fmt(r.collision_rate));
        c.push(r.episodes.to_string());
        c
    }

    fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["policy", "acc_cls", "miou", "acc_tr"]
            .map(String::from)
            .to_vec();
        h.extend(self.horizons.iter().map(|l| format!("dacc_{l}")));
        h.push("collision_rate".into());
        h.push("episodes".into());
        h
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header().join(",") + "\n";
        for r in &self.rows {
            s += &(self.cells(r).join(",") + "\n");
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut lines = vec![self.header()];
        lines.extend(self.rows.iter().map(|r| self.cells(r)));
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for l in &lines {
            let row: Vec<String> = l
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (v, &w))| {
                    if i == 0 {
                        format!("{v:<w$}")
                    } else {
                        format!("{v:>w$}")
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", row.join("  ").trim_end());
        }
        out
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.4}")
}

/// One line of a JSONL episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LogLine {
    Start {
        episode: usize,
        scenario_seed: u64,
        policy: String,
        initial_detections: Vec<LoggedDetection>,
    },
    Tick {
        episode: usize,
        record: TickRecord,
    },
    End {
        episode: usize,
        first_detections: Vec<FirstDetection>,
        terminal: Option<TerminalCause>,
    },
}

/// Writes episodes as JSONL: a `start` line, one `tick` line per tick and an
/// `end` line per episode.
pub fn write_logs_jsonl<W: Write>(logs: &[EpisodeLog], out: &mut W) -> Result<(), HarnessError> {
    let mut line = |l: &LogLine| -> Result<(), HarnessError> {
        serde_json::to_writer(&mut *out, l).map_err(|e| HarnessError::Runtime(e.to_string()))?;
        out.write_all(b"\n")?;
        Ok(())
    };
    for (episode, log) in logs.iter().enumerate() {
        line(&LogLine::Start {
            episode,
            scenario_seed: log.scenario_seed,
            policy: log.policy.clone(),
            initial_detections: log.initial_detections.clone(),
        })?;
        for t in &log.ticks {
            line(&LogLine::Tick {
                episode,
                record: t.clone(),
            })?;
        }
        line(&LogLine::End {
            episode,
            first_detections: log.first_detections.clone(),
            terminal: log.terminal,
        })?;
    }
    Ok(())
}

pub fn read_logs_jsonl<R: BufRead>(input: R) -> Result<Vec<EpisodeLog>, HarnessError> {
    let mut logs: Vec<EpisodeLog> = Vec::new();
    let mut open = false;
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| HarnessError::Format(format!("log line {}: {m}", n + 1));
        let parsed: LogLine = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        match parsed {
            LogLine::Start {
                episode,
                scenario_seed,
                policy,
                initial_detections,
            } => {
                if open || episode != logs.len() {
                    return Err(bad(format!("unexpected start of episode {episode}")));
                }
                logs.push(EpisodeLog {
                    scenario_seed,
                    policy,
                    initial_detections,
                    ticks: Vec::new(),
                    first_detections: Vec::new(),
                    terminal: None,
                });
                open = true;
            }
            LogLine::Tick { episode, record } => {
                if !open || episode + 1 != logs.len() {
                    return Err(bad(format!(
                        "tick for episode {episode} outside that episode"
                    )));
                }
                logs.last_mut().expect("episode is open").ticks.push(record);
            }
            LogLine::End {
                episode,
                first_detections,
                terminal,
            } => {
                if !open || episode + 1 != logs.len() {
                    return Err(bad(format!("end of episode {episode} without its start")));
                }
                let log = logs.last_mut().expect("episode is open");
                log.first_detections = first_detections;
                log.terminal = terminal;
                open = false;
            }
        }
    }
    if open {
        return Err(HarnessError::Format("log ends inside an episode".into()));
    }
    Ok(logs)
}

pub fn save_logs(logs: &[EpisodeLog], path: &Path) -> Result<(), HarnessError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_logs_jsonl(logs, &mut f)?;
    f.flush()?;
    Ok(())
}

pub fn load_logs(path: &Path) -> Result<Vec<EpisodeLog>, HarnessError> {
    read_logs_jsonl(std::io::BufReader::new(std::fs::File::open(path)?))
}
