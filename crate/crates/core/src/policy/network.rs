//! The pursuit policy network: a convolutional encoder for the target's mask
//! history, a pointwise-convolution encoder for the lidar stack, and a fused
//! head producing action logits and a state value.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tape::{softmax, Tape, Tensor, Var};
use super::PolicyError;
use crate::world::Velocity;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub preset: Preset,
    pub mask_resolution: usize,
    pub mask_history: usize,
    pub conv_channels: [usize; 4],
    pub kernel: usize,
    pub embed_dim: usize,
    pub lidar_beams: usize,
    pub lidar_depth: usize,
    pub lidar_conv_channels: [usize; 2],
    pub lidar_fc: usize,
    pub hidden: usize,
    pub actions: usize,
    /// Distance that maps to 1.0 in the goal features.
    pub goal_scale: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Number of goal features: presence flag, scaled distance, cos and sin of
/// the bearing.
pub const GOAL_FEATURES: usize = 4;

impl NetworkConfig {
    pub fn desk() -> Self {
        Self {
            preset: Preset::Desk,
            mask_resolution: 61,
            mask_history: 3,
            conv_channels: [4, 8, 8, 8],
            kernel: 5,
            embed_dim: 32,
            lidar_beams: 180,
            lidar_depth: 3,
            lidar_conv_channels: [4, 4],
            lidar_fc: 64,
            hidden: 128,
            actions: 25,
            goal_scale: 8.0,
        }
    }

    pub fn paper() -> Self {
        Self {
            preset: Preset::Paper,
            mask_resolution: 244,
            conv_channels: [8, 16, 32, 32],
            embed_dim: 128,
            lidar_conv_channels: [8, 8],
            lidar_fc: 256,
            ..Self::desk()
        }
    }

    pub fn for_preset(preset: Preset) -> Self {
        match preset {
            Preset::Desk => Self::desk(),
            Preset::Paper => Self::paper(),
        }
    }

    /// Spatial side after the four conv/pool stages.
    pub fn feature_side(&self) -> usize {
        (0..4).fold(self.mask_resolution, |s, _| s / 2)
    }

    pub fn act_input(&self) -> usize {
        self.embed_dim + self.lidar_fc + 2 + GOAL_FEATURES
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.feature_side() == 0 {
            return Err(PolicyError::Config(format!(
                "mask resolution {} is too small for four pooling stages",
                self.mask_resolution
            )));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(PolicyError::Config("kernel size must be odd".into()));
        }
        if self.mask_history == 0
            || self.lidar_depth == 0
            || self.lidar_beams == 0
            || self.actions == 0
        {
            return Err(PolicyError::Config(
                "history, depth, beams and actions must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Policy input for one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// `[history, res, res]` target masks, oldest first.
    pub masks: Tensor,
    /// `[depth, beams]` normalized ranges, oldest first.
    pub lidar: Tensor,
    pub v_prev: Velocity,
    /// Pursuit goal in the robot frame as (distance, bearing).
    pub goal: Option<(f64, f64)>,
}

impl Observation {
    pub fn goal_features(&self, scale: f64) -> [f64; GOAL_FEATURES] {
        match self.goal {
            Some((d, b)) => [1.0, d / scale, b.cos(), b.sin()],
            None => [0.0; GOAL_FEATURES],
        }
    }
}

/// Named, shaped parameter tensors with the layer layout of one
/// [`NetworkConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub config: NetworkConfig,
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl PolicyParams {
    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index(name).map(|i| &self.tensors[i])
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.tensors
            .iter()
            .map(|t| Tensor::zeros(&t.shape))
            .collect()
    }

    /// Expected (name, shape) layout for a configuration, in storage order.
    pub fn layout(cfg: &NetworkConfig) -> Vec<(String, Vec<usize>)> {
        let mut l = Vec::new();
        let mut c_in = cfg.mask_history;
        for (i, &c) in cfg.conv_channels.iter().enumerate() {
            l.push((
                format!("human.conv{i}.weight"),
                vec![c, c_in, cfg.kernel, cfg.kernel],
            ));
            l.push((format!("human.conv{i}.bias"), vec![c]));
            l.push((format!("human.norm{i}.gamma"), vec![c]));
            l.push((format!("human.norm{i}.beta"), vec![c]));
            c_in = c;
        }
        let side = cfg.feature_side();
        l.push((
            "human.fc.weight".into(),
            vec![cfg.embed_dim, c_in * side * side],
        ));
        l.push(("human.fc.bias".into(), vec![cfg.embed_dim]));
        let mut c_in = cfg.lidar_depth;
        for (i, &c) in cfg.lidar_conv_channels.iter().enumerate() {
            l.push((format!("lidar.conv{i}.weight"), vec![c, c_in]));
            l.push((format!("lidar.conv{i}.bias"), vec![c]));
            c_in = c;
        }
        l.push((
            "lidar.fc.weight".into(),
            vec![cfg.lidar_fc, c_in * cfg.lidar_beams],
        ));
        l.push(("lidar.fc.bias".into(), vec![cfg.lidar_fc]));
        l.push((
            "act.hidden.weight".into(),
            vec![cfg.hidden, cfg.act_input()],
        ));
        l.push(("act.hidden.bias".into(), vec![cfg.hidden]));
        l.push(("act.out.weight".into(), vec![cfg.actions, cfg.hidden]));
        l.push(("act.out.bias".into(), vec![cfg.actions]));
        l.push(("value.weight".into(), vec![1, cfg.hidden]));
        l.push(("value.bias".into(), vec![1]));
        l
    }

    /// He-style initialization; the action and value outputs start small so
    /// the initial policy is close to uniform.
    pub fn init<R: Rng + ?Sized>(cfg: &NetworkConfig, rng: &mut R) -> Result<Self, PolicyError> {
        cfg.validate()?;
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape) in Self::layout(cfg) {
            let n: usize = shape.iter().product();
            let t = if name.ends_with(".gamma") {
                Tensor::from_vec(&shape, vec![1.0; n])
            } else if name.ends_with(".bias") || name.ends_with(".beta") {
                Tensor::zeros(&shape)
            } else {
                let fan_in: usize = shape[1..].iter().product();
                let mut std = (2.0 / fan_in as f64).sqrt();
                if name.starts_with("act.out") || name.starts_with("value") {
                    std *= 0.01;
                }
                let normal = Normal::new(0.0, std).expect("positive std");
                Tensor::from_vec(&shape, (0..n).map(|_| normal.sample(rng)).collect())
            };
            names.push(name);
            tensors.push(t);
        }
        Ok(Self {
            config: cfg.clone(),
            names,
            tensors,
        })
    }

    /// All-zero parameters (useful for linearity checks).
    pub fn zeros(cfg: &NetworkConfig) -> Self {
        let (names, tensors) = Self::layout(cfg)
            .into_iter()
            .map(|(n, s)| (n, Tensor::zeros(&s)))
            .unzip();
        Self {
            config: cfg.clone(),
            names,
            tensors,
        }
    }

    fn var(&self, name: &str) -> Var {
        Var::Param(
            self.index(name)
                .unwrap_or_else(|| panic!("missing parameter {name}")),
        )
    }
}

/// Output of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Heads {
    pub logits: Var,
    pub value: Var,
    pub z_img: Var,
    pub z_lidar: Var,
}

fn tape_err(e: super::tape::TapeError) -> PolicyError {
    PolicyError::Shape(e.to_string())
}

pub fn encode_human(
    tape: &mut Tape,
    params: &PolicyParams,
    masks: &Tensor,
) -> Result<Var, PolicyError> {
    let cfg = &params.config;
    let want = [cfg.mask_history, cfg.mask_resolution, cfg.mask_resolution];
    if masks.shape != want {
        return Err(PolicyError::Shape(format!(
            "mask stack {:?}, expected {:?}",
            masks.shape, want
        )));
    }
    let mut h = tape.input(masks.clone());
    for i in 0..4 {
        h = tape
            .conv2d(
                h,
                params.var(&format!("human.conv{i}.weight")),
                params.var(&format!("human.conv{i}.bias")),
            )
            .map_err(tape_err)?;
        h = tape
            .channel_norm(
                h,
                params.var(&format!("human.norm{i}.gamma")),
                params.var(&format!("human.norm{i}.beta")),
            )
            .map_err(tape_err)?;
        h = tape.relu(h);
        h = tape.maxpool2(h).map_err(tape_err)?;
    }
    let z = tape
        .linear(
            h,
            params.var("human.fc.weight"),
            params.var("human.fc.bias"),
        )
        .map_err(tape_err)?;
    Ok(tape.relu(z))
}

pub fn encode_lidar(
    tape: &mut Tape,
    params: &PolicyParams,
    stack: &Tensor,
) -> Result<Var, PolicyError> {
    let cfg = &params.config;
    let want = [cfg.lidar_depth, cfg.lidar_beams];
    if stack.shape != want {
        return Err(PolicyError::Shape(format!(
            "lidar stack {:?}, expected {:?}",
            stack.shape, want
        )));
    }
    let mut h = tape.input(stack.clone());
    for i in 0..2 {
        h = tape
            .conv1x1(
                h,
                params.var(&format!("lidar.conv{i}.weight")),
                params.var(&format!("lidar.conv{i}.bias")),
            )
            .map_err(tape_err)?;
        h = tape.relu(h);
    }
    let z = tape
        .linear(
            h,
            params.var("lidar.fc.weight"),
            params.var("lidar.fc.bias"),
        )
        .map_err(tape_err)?;
    Ok(tape.relu(z))
}

/// Fuses both embeddings with the previous velocity and the goal features.
/// Returns (logits, value).
pub fn act(
    tape: &mut Tape,
    params: &PolicyParams,
    z_img: Var,
    z_lidar: Var,
    v_prev: Velocity,
    goal: [f64; GOAL_FEATURES],
) -> Result<(Var, Var), PolicyError> {
    let extra = tape.input(Tensor::from_vec(
        &[2 + GOAL_FEATURES],
        [v_prev.v, v_prev.w].into_iter().chain(goal).collect(),
    ));
    let x = tape.concat(&[z_img, z_lidar, extra]);
    let h = tape
        .linear(
            x,
            params.var("act.hidden.weight"),
            params.var("act.hidden.bias"),
        )
        .map_err(tape_err)?;
    let h = tape.relu(h);
    let logits = tape
        .linear(h, params.var("act.out.weight"), params.var("act.out.bias"))
        .map_err(tape_err)?;
    let value = tape
        .linear(h, params.var("value.weight"), params.var("value.bias"))
        .map_err(tape_err)?;
    Ok((logits, value))
}

pub fn forward(
    tape: &mut Tape,
    params: &PolicyParams,
    obs: &Observation,
) -> Result<Heads, PolicyError> {
    let z_img = encode_human(tape, params, &obs.masks)?;
    let z_lidar = encode_lidar(tape, params, &obs.lidar)?;
    let goal = obs.goal_features(params.config.goal_scale);
    let (logits, value) = act(tape, params, z_img, z_lidar, obs.v_prev, goal)?;
    Ok(Heads {
        logits,
        value,
        z_img,
        z_lidar,
    })
}

/// Action distribution and value estimate for one observation.
pub fn evaluate(params: &PolicyParams, obs: &Observation) -> Result<(Vec<f64>, f64), PolicyError> {
    let mut tape = Tape::new(&params.tensors);
    let heads = forward(&mut tape, params, obs)?;
    let logits = &tape.value(heads.logits).data;
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(PolicyError::Numeric("non-finite logits".into()));
    }
    Ok((softmax(logits), tape.value(heads.value).data[0]))
}

/// Draws an index from a probability vector by inverse CDF.
pub fn sample_action<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn obs(cfg: &NetworkConfig, fill: f64) -> Observation {
        Observation {
            masks: Tensor::from_vec(
                &[cfg.mask_history, cfg.mask_resolution, cfg.mask_resolution],
                vec![fill; cfg.mask_history * cfg.mask_resolution * cfg.mask_resolution],
            ),
            lidar: Tensor::from_vec(
                &[cfg.lidar_depth, cfg.lidar_beams],
                vec![fill; cfg.lidar_depth * cfg.lidar_beams],
            ),
            v_prev: Velocity::ZERO,
            goal: Some((2.0, 0.3)),
        }
    }

    #[test]
    fn paper_preset_shapes() {
        let cfg = NetworkConfig::paper();
        assert_eq!(cfg.feature_side(), 15);
        let params = PolicyParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut tape = Tape::new(&params.tensors);
        let z = encode_human(&mut tape, &params, &obs(&cfg, 0.5).masks).unwrap();
        assert_eq!(tape.value(z).len(), 128);
        let z = encode_lidar(&mut tape, &params, &obs(&cfg, 0.5).lidar).unwrap();
        assert_eq!(tape.value(z).len(), 256);
    }

    #[test]
    fn desk_preset_shapes() {
        let cfg = NetworkConfig::desk();
        assert_eq!(cfg.feature_side(), 3);
        let params = PolicyParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut tape = Tape::new(&params.tensors);
        let h = forward(&mut tape, &params, &obs(&cfg, 0.5)).unwrap();
        assert_eq!(tape.value(h.z_img).len(), 32);
        assert_eq!(tape.value(h.z_lidar).len(), 64);
        assert_eq!(tape.value(h.logits).len(), 25);
    }

    #[test]
    fn zero_input_and_zero_bias_give_zero_embeddings() {
        let cfg = NetworkConfig::desk();
        let mut params = PolicyParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for (n, t) in params.names.iter().zip(params.tensors.iter_mut()) {
            if n.ends_with(".bias") || n.ends_with(".beta") {
                t.fill(0.0);
            }
        }
        let mut tape = Tape::new(&params.tensors);
        let o = obs(&cfg, 0.0);
        let zi = encode_human(&mut tape, &params, &o.masks).unwrap();
        let zl = encode_lidar(&mut tape, &params, &o.lidar).unwrap();
        assert!(tape.value(zi).data.iter().all(|&v| v == 0.0));
        assert!(tape.value(zl).data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_lidar_weights_give_zero_output() {
        let cfg = NetworkConfig::desk();
        let mut params = PolicyParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for (n, t) in params.names.iter().zip(params.tensors.iter_mut()) {
            if n.starts_with("lidar.") {
                t.fill(0.0);
            }
        }
        let mut tape = Tape::new(&params.tensors);
        let zl = encode_lidar(&mut tape, &params, &obs(&cfg, 0.7).lidar).unwrap();
        assert!(tape.value(zl).data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_params_are_uniform_and_probabilities_normalize() {
        let cfg = NetworkConfig::desk();
        let (p, _) = evaluate(&PolicyParams::zeros(&cfg), &obs(&cfg, 0.3)).unwrap();
        assert!(p.iter().all(|&x| (x - 1.0 / 25.0).abs() < 1e-15));
        let params = PolicyParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let (p, _) = evaluate(&params, &obs(&cfg, 0.3)).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(p.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = NetworkConfig::desk();
        let a = PolicyParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = PolicyParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(
            evaluate(&a, &obs(&cfg, 0.4)).unwrap(),
            evaluate(&b, &obs(&cfg, 0.4)).unwrap()
        );
    }

    #[test]
    fn wrong_shapes_are_rejected() {
        let cfg = NetworkConfig::desk();
        let params = PolicyParams::zeros(&cfg);
        let mut o = obs(&cfg, 0.0);
        o.masks = Tensor::zeros(&[3, 60, 60]);
        assert!(matches!(evaluate(&params, &o), Err(PolicyError::Shape(_))));
    }

    #[test]
    fn sampling_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut one_hot = vec![0.0; 25];
        one_hot[11] = 1.0;
        assert!((0..1000).all(|_| sample_action(&one_hot, &mut rng) == 11));
        let uniform = vec![1.0 / 25.0; 25];
        let mut counts = [0usize; 25];
        for _ in 0..100_000 {
            counts[sample_action(&uniform, &mut rng)] += 1;
        }
        assert!(counts
            .iter()
            .all(|&c| (c as f64 / 1e5 - 0.04).abs() <= 0.005));
        let a: Vec<usize> = (0..20)
            .map(|_| sample_action(&uniform, &mut ChaCha8Rng::seed_from_u64(9)))
            .collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
    }
}
