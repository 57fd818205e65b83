//! Advantage actor-critic training with RMSProp.
//!
//! Every iteration runs a batch of episodes in parallel against a frozen
//! snapshot of the parameters. Each episode accumulates its own gradient
//! online: a tick's tape is kept only until its n-step target is known.
//! Batch gradients are then summed in episode order, so results do not
//! depend on the thread count.

use std::collections::VecDeque;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::save_checkpoint;
use super::env::Environment;
use super::network::{forward, sample_action, PolicyParams};
use super::tape::{log_softmax, Tape, Tensor};
use super::PolicyError;

/// Environment variable that caps worker threads.
pub const THREADS_ENV: &str = "SEEKNET_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub lr: f64,
    /// Decay of the squared-gradient average.
    pub rho: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 4e-5,
            rho: 0.99,
            eps: 5e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub episodes_per_iteration: usize,
    pub gamma: f64,
    /// Rewards summed before bootstrapping from the critic; 1 gives TD(0).
    pub n_step: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    /// Global gradient-norm ceiling; non-positive disables clipping.
    pub max_grad_norm: f64,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    /// Save a checkpoint every this many iterations (0 disables).
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            episodes_per_iteration: 8,
            gamma: 0.99,
            n_step: 1,
            value_coef: 0.5,
            entropy_coef: 0.1,
            max_grad_norm: 5.0,
            optimizer: OptimizerConfig::default(),
            seed: 0,
            checkpoint_every: 0,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |m: &str| Err(PolicyError::Config(m.into()));
        if self.episodes_per_iteration == 0 {
            return bad("episodes_per_iteration must be at least 1");
        }
        if self.n_step == 0 {
            return bad("n_step must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.eps > 0.0 && (0.0..1.0).contains(&o.rho)) {
            return bad("optimizer needs lr > 0, eps > 0 and rho in [0, 1)");
        }
        if self.checkpoint_every > 0 && self.checkpoint_dir.is_none() {
            return bad("checkpoint_every is set but checkpoint_dir is not");
        }
        Ok(())
    }
}

/// RMSProp with the running average kept per parameter element.
#[derive(Debug, Clone)]
pub struct RmsProp {
    pub config: OptimizerConfig,
    square: Vec<Tensor>,
}

impl RmsProp {
    pub fn new(config: OptimizerConfig, params: &PolicyParams) -> Self {
        Self {
            config,
            square: params.zero_grads(),
        }
    }

    /// Applies one update, then rounds every parameter to `f32` so the
    /// in-memory network equals what a checkpoint stores.
    pub fn step(&mut self, params: &mut PolicyParams, grads: &[Tensor]) {
        let OptimizerConfig { lr, rho, eps } = self.config;
        for ((p, g), s) in params.tensors.iter_mut().zip(grads).zip(&mut self.square) {
            for ((p, &g), s) in p.data.iter_mut().zip(&g.data).zip(&mut s.data) {
                *s = rho * *s + (1.0 - rho) * g * g;
                *p = (*p - lr * g / (s.sqrt() + eps)) as f32 as f64;
            }
        }
    }
}

/// Summary of one training iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub mean_return: f64,
    pub collision_rate: f64,
    /// Mean per-tick change of the pursued target's confidence, over the
    /// episodes where it is defined.
    pub mean_delta_confidence: Option<f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub grad_norm: f64,
}

/// Gradient and bookkeeping from one episode.
#[derive(Debug, Clone)]
pub struct EpisodeGradient {
    pub grads: Vec<Tensor>,
    pub steps: usize,
    pub episode_return: f64,
    pub collided: bool,
    pub delta_confidence: Option<f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

struct Pending<'p> {
    tape: Tape<'p>,
    logits: super::tape::Var,
    value_var: super::tape::Var,
    log_probs: Vec<f64>,
    action: usize,
    value: f64,
    reward: f64,
}

/// Runs one episode with actions sampled from `params` and returns the
/// summed (not yet averaged) actor-critic gradient.
pub fn episode_gradient<E: Environment>(
    params: &PolicyParams,
    env: &mut E,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodeGradient, PolicyError> {
    let mut out = EpisodeGradient {
        grads: params.zero_grads(),
        steps: 0,
        episode_return: 0.0,
        collided: false,
        delta_confidence: None,
        policy_loss: 0.0,
        value_loss: 0.0,
        entropy: 0.0,
    };
    let mut queue: VecDeque<Pending> = VecDeque::with_capacity(cfg.n_step + 1);
    loop {
        let obs = env.observe();
        let mut tape = Tape::new(&params.tensors);
        let heads = forward(&mut tape, params, &obs)?;
        let log_probs = log_softmax(&tape.value(heads.logits).data);
        let value = tape.value(heads.value).data[0];
        if !value.is_finite() || log_probs.iter().any(|v| v.is_nan()) {
            return Err(PolicyError::Numeric(
                "non-finite network output during rollout".into(),
            ));
        }
        if queue.len() == cfg.n_step {
            finish_front(&mut queue, value, cfg, &mut out);
        }
        let probs: Vec<f64> = log_probs.iter().map(|l| l.exp()).collect();
        let action = sample_action(&probs, rng);
        let step = env.step(action)?;
        out.episode_return += step.reward;
        out.collided |= step.collided;
        queue.push_back(Pending {
            tape,
            logits: heads.logits,
            value_var: heads.value,
            log_probs,
            action,
            value,
            reward: step.reward,
        });
        if step.done {
            while !queue.is_empty() {
                finish_front(&mut queue, 0.0, cfg, &mut out);
            }
            break;
        }
    }
    out.delta_confidence = env.mean_delta_confidence();
    Ok(out)
}

/// Pops the oldest pending tick, forms its n-step target from the queued
/// rewards plus the discounted `bootstrap`, and backpropagates its loss.
fn finish_front(
    queue: &mut VecDeque<Pending>,
    bootstrap: f64,
    cfg: &TrainConfig,
    out: &mut EpisodeGradient,
) {
    let mut target = 0.0;
    let mut discount = 1.0;
    for p in queue.iter() {
        target += discount * p.reward;
        discount *= cfg.gamma;
    }
    target += discount * bootstrap;
    let p = queue.pop_front().expect("queue is non-empty");
    let advantage = target - p.value;
    let probs: Vec<f64> = p.log_probs.iter().map(|l| l.exp()).collect();
    let entropy: f64 = -probs
        .iter()
        .zip(&p.log_probs)
        .map(|(&q, &l)| if q > 0.0 { q * l } else { 0.0 })
        .sum::<f64>();
    // d/dz of  -A log p_a  -  xi H
    let dlogits: Vec<f64> = probs
        .iter()
        .zip(&p.log_probs)
        .enumerate()
        .map(|(j, (&q, &l))| {
            let onehot = if j == p.action { 1.0 } else { 0.0 };
            let ent = if q > 0.0 { q * (l + entropy) } else { 0.0 };
            -advantage * (onehot - q) + cfg.entropy_coef * ent
        })
        .collect();
    let dvalue = [2.0 * cfg.value_coef * (p.value - target)];
    p.tape.backward(
        &[(p.logits, &dlogits), (p.value_var, &dvalue)],
        &mut out.grads,
    );
    out.steps += 1;
    out.policy_loss += -advantage * p.log_probs[p.action];
    out.value_loss += (p.value - target).powi(2);
    out.entropy += entropy;
}

/// Independent stream seed for (global seed, a, b).
pub fn stream_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    mix(mix(mix(seed) ^ a) ^ b.rotate_left(32))
}

/// Worker count from the thread-cap variable, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// A rayon pool honouring the thread cap.
pub fn thread_pool() -> Result<rayon::ThreadPool, PolicyError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap() {
        b = b.num_threads(n);
    }
    b.build()
        .map_err(|e| PolicyError::Config(format!("cannot start worker threads: {e}")))
}

/// Trains `params` in place on the current rayon pool (see [`thread_pool`]). `make_env(iteration, episode, seed)` builds the
/// environment for one episode; `on_iteration` sees every iteration's stats
/// and the updated parameters.
pub fn train<E, F, C>(
    params: &mut PolicyParams,
    make_env: F,
    cfg: &TrainConfig,
    mut on_iteration: C,
) -> Result<Vec<IterationStats>, PolicyError>
where
    E: Environment,
    F: Fn(usize, usize, u64) -> Result<E, PolicyError> + Sync,
    C: FnMut(&IterationStats, &PolicyParams) -> Result<(), PolicyError>,
{
    cfg.validate()?;
    let mut opt = RmsProp::new(cfg.optimizer, params);
    let mut history = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let snapshot: &PolicyParams = params;
        let episodes: Vec<Result<EpisodeGradient, PolicyError>> = (0..cfg.episodes_per_iteration)
            .into_par_iter()
            .map(|ep| {
                let seed = stream_seed(cfg.seed, it as u64, ep as u64);
                let mut env = make_env(it, ep, seed)?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5851_f42d_4c95_7f2d);
                episode_gradient(snapshot, &mut env, cfg, &mut rng)
            })
            .collect();
        let episodes: Vec<EpisodeGradient> = episodes.into_iter().collect::<Result<_, _>>()?;

        let mut grads = params.zero_grads();
        let steps: usize = episodes.iter().map(|e| e.steps).sum();
        for e in &episodes {
            for (g, eg) in grads.iter_mut().zip(&e.grads) {
                g.data.iter_mut().zip(&eg.data).for_each(|(a, b)| *a += b);
            }
        }
        let scale = 1.0 / steps.max(1) as f64;
        grads
            .iter_mut()
            .for_each(|g| g.data.iter_mut().for_each(|v| *v *= scale));
        let norm = grads
            .iter()
            .flat_map(|g| &g.data)
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        if !norm.is_finite() {
            return Err(PolicyError::Numeric(format!(
                "non-finite gradient at iteration {it}; training aborted"
            )));
        }
        if cfg.max_grad_norm > 0.0 && norm > cfg.max_grad_norm {
            let s = cfg.max_grad_norm / norm;
            grads
                .iter_mut()
                .for_each(|g| g.data.iter_mut().for_each(|v| *v *= s));
        }

        let n = episodes.len() as f64;
        let deltas: Vec<f64> = episodes.iter().filter_map(|e| e.delta_confidence).collect();
        let stats = IterationStats {
            iteration: it,
            mean_return: episodes.iter().map(|e| e.episode_return).sum::<f64>() / n,
            collision_rate: episodes.iter().filter(|e| e.collided).count() as f64 / n,
            mean_delta_confidence: (!deltas.is_empty())
                .then(|| deltas.iter().sum::<f64>() / deltas.len() as f64),
            policy_loss: episodes.iter().map(|e| e.policy_loss).sum::<f64>() * scale,
            value_loss: episodes.iter().map(|e| e.value_loss).sum::<f64>() * scale,
            entropy: episodes.iter().map(|e| e.entropy).sum::<f64>() * scale,
            grad_norm: norm,
        };
        if !(stats.policy_loss.is_finite() && stats.value_loss.is_finite()) {
            return Err(PolicyError::Numeric(format!(
                "non-finite loss at iteration {it} (policy {}, value {}); training aborted",
                stats.policy_loss, stats.value_loss
            )));
        }

        opt.step(params, &grads);
        if !params.is_finite() {
            return Err(PolicyError::Numeric(format!(
                "parameters diverged at iteration {it}; training aborted"
            )));
        }
        if cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 {
            if let Some(dir) = &cfg.checkpoint_dir {
                save_checkpoint(params, &dir.join(format!("iter_{:05}.ckpt", it + 1)))?;
            }
        }
        on_iteration(&stats, params)?;
        history.push(stats);
    }
    Ok(history)
}

/// Writes the learning curve as CSV. An undefined confidence change is an
/// empty field.
pub fn write_curve_csv(stats: &[IterationStats], path: &Path) -> Result<(), PolicyError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        f,
        "iteration,mean_return,collision_rate,mean_delta_confidence"
    )?;
    for s in stats {
        let d = s
            .mean_delta_confidence
            .map(|d| d.to_string())
            .unwrap_or_default();
        writeln!(
            f,
            "{},{},{},{}",
            s.iteration, s.mean_return, s.collision_rate, d
        )?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::action::ActionSpace;
    use crate::policy::env::Step;
    use crate::policy::network::{evaluate, NetworkConfig, Observation};
    use crate::world::Velocity;

    fn tiny(actions: usize) -> NetworkConfig {
        NetworkConfig {
            mask_resolution: 16,
            mask_history: 1,
            conv_channels: [1, 1, 1, 1],
            embed_dim: 2,
            lidar_beams: 4,
            lidar_depth: 1,
            lidar_conv_channels: [1, 1],
            lidar_fc: 2,
            hidden: 8,
            actions,
            ..NetworkConfig::desk()
        }
    }

    struct Bandit {
        net: NetworkConfig,
        actions: ActionSpace,
    }

    impl Environment for Bandit {
        fn observe(&self) -> Observation {
            Observation {
                masks: Tensor::zeros(&[1, 16, 16]),
                lidar: Tensor::zeros(&[1, self.net.lidar_beams]),
                v_prev: Velocity::ZERO,
                goal: None,
            }
        }
        fn action_space(&self) -> &ActionSpace {
            &self.actions
        }
        fn step(&mut self, action: usize) -> Result<Step, PolicyError> {
            Ok(Step {
                reward: if action == 0 { 1.0 } else { -1.0 },
                done: true,
                collided: false,
            })
        }
    }

    fn bandit_probability(seed: u64) -> f64 {
        let net = tiny(2);
        let mut params = PolicyParams::init(&net, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let cfg = TrainConfig {
            iterations: 500,
            episodes_per_iteration: 1,
            optimizer: OptimizerConfig {
                lr: 1e-2,
                ..OptimizerConfig::default()
            },
            seed,
            ..TrainConfig::default()
        };
        let make = |_, _, _| {
            Ok(Bandit {
                net: net.clone(),
                actions: ActionSpace::uniform(2, 1),
            })
        };
        train(&mut params, make, &cfg, |_, _| Ok(())).unwrap();
        let env = make(0, 0, 0).unwrap();
        evaluate(&params, &env.observe()).unwrap().0[0]
    }

    #[test]
    fn bandit_prefers_the_rewarded_arm() {
        let wins = (0..10).filter(|&s| bandit_probability(s) > 0.9).count();
        assert!(wins >= 9, "only {wins}/10 seeds exceeded 0.9");
    }

    #[test]
    fn defaults_match_published_optimizer() {
        let o = OptimizerConfig::default();
        assert_eq!(o.lr, 0.00004);
        assert_eq!(o.eps, 0.00005);
        assert_eq!(TrainConfig::default().gamma, 0.99);
    }

    #[test]
    fn rmsprop_first_step_matches_hand_computation() {
        let net = tiny(2);
        let mut params = PolicyParams::zeros(&net);
        let mut grads = params.zero_grads();
        grads[0].data[0] = 0.5;
        let mut opt = RmsProp::new(
            OptimizerConfig {
                lr: 0.1,
                rho: 0.9,
                eps: 1e-3,
            },
            &params,
        );
        opt.step(&mut params, &grads);
        let s: f64 = 0.1 * 0.25;
        let expected = (-0.1 * 0.5 / (s.sqrt() + 1e-3)) as f32 as f64;
        assert_eq!(params.tensors[0].data[0], expected);
        assert_eq!(params.tensors[0].data[1], 0.0);
    }

    #[test]
    fn training_is_independent_of_thread_count() {
        let net = tiny(2);
        let run = |threads: usize| {
            let mut params = PolicyParams::init(&net, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
            let cfg = TrainConfig {
                iterations: 5,
                episodes_per_iteration: 4,
                seed: 3,
                ..TrainConfig::default()
            };
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            let make = |_, _, _| {
                Ok(Bandit {
                    net: net.clone(),
                    actions: ActionSpace::uniform(2, 1),
                })
            };
            pool.install(|| train(&mut params, make, &cfg, |_, _| Ok(())))
                .unwrap();
            params
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn diverging_rewards_abort_training() {
        struct Broken(ActionSpace);
        impl Environment for Broken {
            fn observe(&self) -> Observation {
                Observation {
                    masks: Tensor::zeros(&[1, 16, 16]),
                    lidar: Tensor::zeros(&[1, 4]),
                    v_prev: Velocity::ZERO,
                    goal: None,
                }
            }
            fn action_space(&self) -> &ActionSpace {
                &self.0
            }
            fn step(&mut self, _: usize) -> Result<Step, PolicyError> {
                Ok(Step {
                    reward: f64::NAN,
                    done: true,
                    collided: false,
                })
            }
        }
        let net = tiny(2);
        let mut params = PolicyParams::init(&net, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let err = train(
            &mut params,
            |_, _, _| Ok(Broken(ActionSpace::uniform(2, 1))),
            &TrainConfig::default(),
            |_, _| Ok(()),
        )
        .unwrap_err();
        assert!(matches!(err, PolicyError::Numeric(_)), "{err}");
    }

    #[test]
    fn curve_csv_has_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.csv");
        let s = IterationStats {
            iteration: 0,
            mean_return: 1.5,
            collision_rate: 0.25,
            mean_delta_confidence: None,
            policy_loss: 0.0,
            value_loss: 0.0,
            entropy: 0.0,
            grad_norm: 0.0,
        };
        write_curve_csv(&[s], &path).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(
            text,
            "iteration,mean_return,collision_rate,mean_delta_confidence\n0,1.5,0.25,\n"
        );
    }
}
