//! Finite-difference verification of reverse-mode gradients.

use rand::Rng;
use serde::Serialize;

use super::network::{forward, NetworkConfig, Observation, PolicyParams};
use super::tape::{Tape, Tensor};
use super::PolicyError;
use crate::world::Velocity;

/// One evaluation of a scalar loss. `grads` may be empty when the caller did
/// not ask for them. `signature` identifies the smooth piece of a piecewise
/// smooth function; use a constant for smooth losses.
pub struct Evaluation {
    pub loss: f64,
    pub grads: Vec<Tensor>,
    pub signature: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub coordinates: usize,
    /// Magnitude below which errors are judged absolutely rather than
    /// relatively. Gradients that are exactly zero in theory (a bias feeding
    /// a normalization, say) come out as rounding noise of about 1e-10.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            coordinates: 200,
            floor: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates whose perturbation crossed a rectifier or pooling kink.
    pub skipped: usize,
    /// Worst coordinate as (tensor index, element index).
    pub worst: Option<(usize, usize)>,
}

pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares analytic gradients with central differences on randomly chosen
/// coordinates: a tensor is picked uniformly, then an element within it.
pub fn grad_check<F, R>(
    params: &[Tensor],
    mut loss: F,
    cfg: &GradCheckConfig,
    rng: &mut R,
) -> GradCheckReport
where
    F: FnMut(&[Tensor], bool) -> Evaluation,
    R: Rng + ?Sized,
{
    let base = loss(params, true);
    let candidates: Vec<usize> = (0..params.len())
        .filter(|&i| !params[i].is_empty())
        .collect();
    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        skipped: 0,
        worst: None,
    };
    if candidates.is_empty() {
        return report;
    }
    for _ in 0..cfg.coordinates {
        let t = candidates[rng.random_range(0..candidates.len())];
        let i = rng.random_range(0..work[t].len());
        let orig = work[t].data[i];
        work[t].data[i] = orig + cfg.eps;
        let plus = loss(&work, false);
        work[t].data[i] = orig - cfg.eps;
        let minus = loss(&work, false);
        work[t].data[i] = orig;
        if plus.signature != base.signature || minus.signature != base.signature {
            report.skipped += 1;
            continue;
        }
        let numeric = (plus.loss - minus.loss) / (2.0 * cfg.eps);
        let err = relative_error(base.grads[t].data[i], numeric, cfg.floor);
        report.checked += 1;
        if err > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = report.max_rel_err.max(err);
            report.worst = Some((t, i));
        }
    }
    report
}

/// Checks the whole policy network under an actor-critic style loss
/// `-log pi(a) + (V - t)^2` with random parameters and random continuous
/// inputs, all drawn from `seed`.
pub fn policy_grad_check(
    net: &NetworkConfig,
    seed: u64,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport, PolicyError> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut params = PolicyParams::init(net, &mut rng)?;
    // Non-zero biases and unscaled heads so every tensor carries signal.
    for (name, t) in params.names.iter().zip(params.tensors.iter_mut()) {
        if name.ends_with(".bias") || name.ends_with(".beta") {
            t.data
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-0.1..0.1));
        } else if name.starts_with("act.out") || name.starts_with("value") {
            t.data.iter_mut().for_each(|v| *v *= 100.0);
        }
    }
    let mut uniform = |shape: &[usize]| {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random::<f64>()).collect())
    };
    let r = net.mask_resolution;
    let obs = Observation {
        masks: uniform(&[net.mask_history, r, r]),
        lidar: uniform(&[net.lidar_depth, net.lidar_beams]),
        v_prev: Velocity::new(rng.random(), rng.random_range(-1.0..1.0)),
        goal: Some((rng.random_range(0.5..6.0), rng.random_range(-3.0..3.0))),
    };
    let action = rng.random_range(0..net.actions);
    let target: f64 = rng.random_range(-1.0..1.0);
    let template = params.clone();
    let loss = |p: &[Tensor], want: bool| {
        let mut tape = Tape::new(p);
        let heads = forward(&mut tape, &template, &obs).expect("shapes are consistent");
        let logp = tape.log_softmax(heads.logits);
        let v = tape.value(heads.value).data[0];
        let loss = -tape.value(logp).data[action] + (v - target).powi(2);
        let mut grads: Vec<Tensor> = p.iter().map(|t| Tensor::zeros(&t.shape)).collect();
        if want {
            let mut seed_logp = vec![0.0; net.actions];
            seed_logp[action] = -1.0;
            let seed_v = [2.0 * (v - target)];
            tape.backward(&[(logp, &seed_logp), (heads.value, &seed_v)], &mut grads);
        }
        Evaluation {
            loss,
            grads,
            signature: tape.signature(),
        }
    };
    Ok(grad_check(&params.tensors, loss, cfg, &mut rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::tape::{Tape, Var};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Runs `build` on a tape, then contracts its output with a fixed
    /// random projection to get a scalar.
    fn check_layer<B>(params: Vec<Tensor>, input: Tensor, build: B, seed: u64) -> GradCheckReport
    where
        B: Fn(&mut Tape, Var) -> Var,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let probe = {
            let params = params.clone();
            let mut tape = Tape::new(&params);
            let x = tape.input(input.clone());
            let y = build(&mut tape, x);
            random(&tape.value(y).shape.clone(), &mut rng)
        };
        let f = |p: &[Tensor], want: bool| {
            let mut tape = Tape::new(p);
            let x = tape.input(input.clone());
            let y = build(&mut tape, x);
            let loss = crate::policy::tape::dot(&tape.value(y).data, &probe.data);
            let mut grads: Vec<Tensor> = p.iter().map(|t| Tensor::zeros(&t.shape)).collect();
            if want {
                tape.backward(&[(y, &probe.data)], &mut grads);
            }
            Evaluation {
                loss,
                grads,
                signature: tape.signature(),
            }
        };
        grad_check(&params, f, &GradCheckConfig::default(), &mut rng)
    }

    #[test]
    fn linear_loss_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[6], &mut rng);
        let params = vec![random(&[6], &mut rng)];
        let f = |p: &[Tensor], _: bool| Evaluation {
            loss: crate::policy::tape::dot(&p[0].data, &x.data),
            grads: vec![x.clone()],
            signature: 0,
        };
        let r = grad_check(&params, f, &GradCheckConfig::default(), &mut rng);
        assert!(r.max_rel_err < 1e-9, "{r:?}");
        assert_eq!(r.checked, 200);
    }

    #[test]
    fn conv_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = vec![random(&[3, 2, 5, 5], &mut rng), random(&[3], &mut rng)];
        let r = check_layer(
            params,
            random(&[2, 7, 6], &mut rng),
            |t, x| t.conv2d(x, Var::Param(0), Var::Param(1)).unwrap(),
            3,
        );
        assert!(r.max_rel_err <= 1e-4, "{r:?}");
    }

    #[test]
    fn conv_input_gradient_via_second_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = vec![
            random(&[2, 2, 3, 3], &mut rng),
            random(&[2], &mut rng),
            random(&[2, 2, 5, 5], &mut rng),
            random(&[2], &mut rng),
        ];
        let r = check_layer(
            params,
            random(&[2, 6, 6], &mut rng),
            |t, x| {
                let h = t.conv2d(x, Var::Param(0), Var::Param(1)).unwrap();
                t.conv2d(h, Var::Param(2), Var::Param(3)).unwrap()
            },
            5,
        );
        assert!(r.max_rel_err <= 1e-4, "{r:?}");
    }

    #[test]
    fn channel_norm_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let params = vec![
            random(&[3, 3, 3, 3], &mut rng),
            random(&[3], &mut rng),
            random(&[3], &mut rng),
            random(&[3], &mut rng),
        ];
        let r = check_layer(
            params,
            random(&[3, 5, 5], &mut rng),
            |t, x| {
                let h = t.conv2d(x, Var::Param(0), Var::Param(1)).unwrap();
                t.channel_norm(h, Var::Param(2), Var::Param(3)).unwrap()
            },
            7,
        );
        assert!(r.max_rel_err <= 1e-4, "{r:?}");
    }

    #[test]
    fn relu_and_pool_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let params = vec![random(&[2, 1, 3, 3], &mut rng), random(&[2], &mut rng)];
        let r = check_layer(
            params,
            random(&[1, 9, 8], &mut rng),
            |t, x| {
                let h = t.conv2d(x, Var::Param(0), Var::Param(1)).unwrap();
                let h = t.relu(h);
                t.maxpool2(h).unwrap()
            },
            9,
        );
        assert!(r.max_rel_err <= 1e-4, "{r:?}");
    }

    #[test]
    fn conv1x1_linear_concat_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let params = vec![
            random(&[4, 3], &mut rng),
            random(&[4], &mut rng),
            random(&[5, 4 * 7 + 3 * 7], &mut rng),
            random(&[5], &mut rng),
        ];
        let r = check_layer(
            params,
            random(&[3, 7], &mut rng),
            |t, x| {
                let h = t.conv1x1(x, Var::Param(0), Var::Param(1)).unwrap();
                let c = t.concat(&[h, x]);
                t.linear(c, Var::Param(2), Var::Param(3)).unwrap()
            },
            11,
        );
        assert!(r.max_rel_err <= 1e-4, "{r:?}");
    }

    #[test]
    fn softmax_log_likelihood_alone() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let params = vec![random(&[25], &mut rng)];
        let target = 7;
        let f = |p: &[Tensor], want: bool| {
            let mut tape = Tape::new(p);
            let y = tape.log_softmax(Var::Param(0));
            let loss = -tape.value(y).data[target];
            let mut grads = vec![Tensor::zeros(&[25])];
            if want {
                let mut seed = vec![0.0; 25];
                seed[target] = -1.0;
                tape.backward(&[(y, &seed)], &mut grads);
            }
            Evaluation {
                loss,
                grads,
                signature: 0,
            }
        };
        let r = grad_check(&params, f, &GradCheckConfig::default(), &mut rng);
        assert!(r.max_rel_err <= 1e-6, "{r:?}");
    }

    #[test]
    fn whole_desk_policy() {
        let r = policy_grad_check(&NetworkConfig::desk(), 0, &GradCheckConfig::default()).unwrap();
        assert!(r.max_rel_err <= 1e-4, "{r:?}");
        assert!(r.checked >= 150, "{r:?}");
    }
}
