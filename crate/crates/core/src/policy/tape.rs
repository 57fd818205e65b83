//! Minimal reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records the forward pass of a network built from a handful of
//! layer types. Parameters live outside the tape and are referenced by index,
//! so a single parameter set can be shared by many tapes at once.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "data length does not match shape {shape:?}"
        );
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }
}

/// Handle to a value on a tape: either an external parameter or a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    Param(usize),
    Node(usize),
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TapeError {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
}

type Result<T> = std::result::Result<T, TapeError>;

fn shape_err<T>(op: &'static str, detail: String) -> Result<T> {
    Err(TapeError::Shape { op, detail })
}

const NORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Input,
    /// Stride-1 convolution with zero "same" padding over `[C, H, W]`.
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
    },
    /// Per-channel normalization over spatial positions with a learned
    /// affine transform.
    ChannelNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Relu {
        x: Var,
    },
    /// 2x2 max-pool with stride 2; odd trailing rows/columns are dropped.
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    /// Pointwise mixing of channels over `[C, L]`.
    Conv1x1 {
        x: Var,
        w: Var,
        b: Var,
    },
    /// Affine map of the flattened input.
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Concat {
        parts: Vec<Var>,
    },
    LogSoftmax {
        x: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p [Tensor],
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [Tensor]) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match v {
            Var::Param(i) => &self.params[i],
            Var::Node(i) => &self.nodes[i].value,
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var::Node(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (
            &self.value(x).shape,
            &self.value(w).shape,
            &self.value(b).shape,
        );
        if xs.len() != 3
            || ws.len() != 4
            || ws[1] != xs[0]
            || ws[2] != ws[3]
            || ws[2] % 2 == 0
            || bs != &[ws[0]]
        {
            return shape_err(
                "conv2d",
                format!("input {xs:?}, kernel {ws:?}, bias {bs:?}"),
            );
        }
        let (c_in, h, wd) = (xs[0], xs[1], xs[2]);
        let (c_out, k) = (ws[0], ws[2]);
        let p = k / 2;
        let (xv, wv, bv) = (
            &self.value(x).data,
            &self.value(w).data,
            &self.value(b).data,
        );
        let plane = h * wd;
        let mut out = vec![0.0; c_out * plane];
        for o in 0..c_out {
            out[o * plane..(o + 1) * plane]
                .iter_mut()
                .for_each(|v| *v = bv[o]);
        }
        for c in 0..c_in {
            let xin = &xv[c * plane..(c + 1) * plane];
            if xin.iter().all(|&v| v == 0.0) {
                continue;
            }
            for o in 0..c_out {
                let dst = &mut out[o * plane..(o + 1) * plane];
                for ky in 0..k {
                    let (y0, y1) = valid_range(ky, p, h);
                    for kx in 0..k {
                        let wk = wv[((o * c_in + c) * k + ky) * k + kx];
                        if wk == 0.0 {
                            continue;
                        }
                        let (x0, x1) = valid_range(kx, p, wd);
                        for y in y0..y1 {
                            let sy = y + ky - p;
                            let drow = &mut dst[y * wd + x0..y * wd + x1];
                            let srow = &xin[sy * wd + x0 + kx - p..sy * wd + x1 + kx - p];
                            for (d, s) in drow.iter_mut().zip(srow) {
                                *d += wk * s;
                            }
                        }
                    }
                }
            }
        }
        Ok(self.push(
            Tensor::from_vec(&[c_out, h, wd], out),
            Op::Conv2d { x, w, b },
        ))
    }

    pub fn channel_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let xs = self.value(x).shape.clone();
        if xs.len() < 2 || self.value(gamma).shape != [xs[0]] || self.value(beta).shape != [xs[0]] {
            return shape_err(
                "channel_norm",
                format!("input {xs:?}, gamma {:?}", self.value(gamma).shape),
            );
        }
        let c = xs[0];
        let n = self.value(x).len() / c;
        let (xv, g, bt) = (
            &self.value(x).data,
            &self.value(gamma).data,
            &self.value(beta).data,
        );
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; c];
        let mut out = vec![0.0; xv.len()];
        for ch in 0..c {
            let seg = &xv[ch * n..(ch + 1) * n];
            let mean = seg.iter().sum::<f64>() / n as f64;
            let var = seg.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + NORM_EPS).sqrt();
            inv_std[ch] = is;
            for i in 0..n {
                let xh = (seg[i] - mean) * is;
                xhat[ch * n + i] = xh;
                out[ch * n + i] = g[ch] * xh + bt[ch];
            }
        }
        Ok(self.push(
            Tensor::from_vec(&xs, out),
            Op::ChannelNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().map(|&v| v.max(0.0)).collect(),
        };
        self.push(out, Op::Relu { x })
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let xs = self.value(x).shape.clone();
        if xs.len() != 3 || xs[1] < 2 || xs[2] < 2 {
            return shape_err("maxpool2", format!("input {xs:?}"));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let (oh, ow) = (h / 2, w / 2);
        let xv = &self.value(x).data;
        let mut out = vec![0.0; c * oh * ow];
        let mut argmax = vec![0; c * oh * ow];
        for ch in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best = ch * h * w + 2 * y * w + 2 * xx;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = ch * h * w + (2 * y + dy) * w + 2 * xx + dx;
                        if xv[i] > xv[best] {
                            best = i;
                        }
                    }
                    let o = (ch * oh + y) * ow + xx;
                    out[o] = xv[best];
                    argmax[o] = best;
                }
            }
        }
        Ok(self.push(
            Tensor::from_vec(&[c, oh, ow], out),
            Op::MaxPool2 { x, argmax },
        ))
    }

    pub fn conv1x1(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (
            &self.value(x).shape,
            &self.value(w).shape,
            &self.value(b).shape,
        );
        if xs.len() != 2 || ws.len() != 2 || ws[1] != xs[0] || bs != &[ws[0]] {
            return shape_err(
                "conv1x1",
                format!("input {xs:?}, weight {ws:?}, bias {bs:?}"),
            );
        }
        let (c_in, l, c_out) = (xs[0], xs[1], ws[0]);
        let (xv, wv, bv) = (
            &self.value(x).data,
            &self.value(w).data,
            &self.value(b).data,
        );
        let mut out = vec![0.0; c_out * l];
        for o in 0..c_out {
            let dst = &mut out[o * l..(o + 1) * l];
            dst.iter_mut().for_each(|v| *v = bv[o]);
            for c in 0..c_in {
                let wk = wv[o * c_in + c];
                for (d, s) in dst.iter_mut().zip(&xv[c * l..(c + 1) * l]) {
                    *d += wk * s;
                }
            }
        }
        Ok(self.push(Tensor::from_vec(&[c_out, l], out), Op::Conv1x1 { x, w, b }))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let n = self.value(x).len();
        let (ws, bs) = (&self.value(w).shape, &self.value(b).shape);
        if ws.len() != 2 || ws[1] != n || bs != &[ws[0]] {
            return shape_err(
                "linear",
                format!("input length {n}, weight {ws:?}, bias {bs:?}"),
            );
        }
        let m = ws[0];
        let (xv, wv, bv) = (
            &self.value(x).data,
            &self.value(w).data,
            &self.value(b).data,
        );
        let out: Vec<f64> = (0..m)
            .map(|i| bv[i] + dot(&wv[i * n..(i + 1) * n], xv))
            .collect();
        Ok(self.push(Tensor::from_vec(&[m], out), Op::Linear { x, w, b }))
    }

    /// Flattens and joins its inputs into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let data: Vec<f64> = parts
            .iter()
            .flat_map(|&p| self.value(p).data.iter().copied())
            .collect();
        let n = data.len();
        self.push(
            Tensor::from_vec(&[n], data),
            Op::Concat {
                parts: parts.to_vec(),
            },
        )
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = log_softmax(&t.data);
        let shape = t.shape.clone();
        self.push(Tensor { shape, data }, Op::LogSoftmax { x })
    }

    /// Fingerprint of every rectifier sign and pooling choice on the tape.
    /// Two evaluations with equal signatures lie in the same smooth piece of
    /// the network function.
    pub fn signature(&self) -> u64 {
        const PRIME: u64 = 0x0100_0000_01b3;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(PRIME);
        };
        for node in &self.nodes {
            match &node.op {
                Op::Relu { x } => {
                    for &v in &self.value(*x).data {
                        mix(u64::from(v > 0.0));
                    }
                }
                Op::MaxPool2 { argmax, .. } => argmax.iter().for_each(|&i| mix(i as u64)),
                _ => {}
            }
        }
        h
    }

    /// Propagates the seed gradients back through the tape and adds the
    /// resulting parameter gradients into `grads` (one tensor per parameter).
    pub fn backward(&self, seeds: &[(Var, &[f64])], grads: &mut [Tensor]) {
        let mut g: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut acc =
            |g: &mut Vec<Option<Vec<f64>>>, grads: &mut [Tensor], v: Var, idx: usize, d: f64| {
                match v {
                    Var::Param(p) => grads[p].data[idx] += d,
                    Var::Node(n) => {
                        let len = self.nodes[n].value.len();
                        g[n].get_or_insert_with(|| vec![0.0; len])[idx] += d;
                    }
                }
            };
        for &(v, s) in seeds {
            for (i, &d) in s.iter().enumerate() {
                acc(&mut g, grads, v, i, d);
            }
        }

        for n in (0..self.nodes.len()).rev() {
            let Some(gy) = g[n].take() else { continue };
            let node = &self.nodes[n];
            match &node.op {
                Op::Input => {}
                Op::Conv2d { x, w, b } => {
                    let (xs, ws) = (&self.value(*x).shape, &self.value(*w).shape);
                    let (c_in, h, wd, c_out, k) = (xs[0], xs[1], xs[2], ws[0], ws[2]);
                    let p = k / 2;
                    let plane = h * wd;
                    let (xv, wv) = (&self.value(*x).data, &self.value(*w).data);
                    let need_dx =
                        !matches!(x, Var::Node(i) if matches!(self.nodes[*i].op, Op::Input));
                    let mut dx = vec![0.0; xv.len()];
                    let mut dw = vec![0.0; wv.len()];
                    for o in 0..c_out {
                        let go = &gy[o * plane..(o + 1) * plane];
                        acc(&mut g, grads, *b, o, go.iter().sum());
                        for c in 0..c_in {
                            let xin = &xv[c * plane..(c + 1) * plane];
                            let xin_zero = xin.iter().all(|&v| v == 0.0);
                            for ky in 0..k {
                                let (y0, y1) = valid_range(ky, p, h);
                                for kx in 0..k {
                                    let wi = ((o * c_in + c) * k + ky) * k + kx;
                                    let wk = wv[wi];
                                    let (x0, x1) = valid_range(kx, p, wd);
                                    let mut sw = 0.0;
                                    for y in y0..y1 {
                                        let sy = y + ky - p;
                                        let grow = &go[y * wd + x0..y * wd + x1];
                                        let s0 = sy * wd + x0 + kx - p;
                                        if !xin_zero {
                                            sw += dot(grow, &xin[s0..s0 + (x1 - x0)]);
                                        }
                                        if need_dx && wk != 0.0 {
                                            let drow =
                                                &mut dx[c * plane + s0..c * plane + s0 + (x1 - x0)];
                                            for (d, gv) in drow.iter_mut().zip(grow) {
                                                *d += wk * gv;
                                            }
                                        }
                                    }
                                    dw[wi] += sw;
                                }
                            }
                        }
                    }
                    add_all(&mut acc, &mut g, grads, *w, &dw);
                    if need_dx {
                        add_all(&mut acc, &mut g, grads, *x, &dx);
                    }
                }
                Op::ChannelNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let c = inv_std.len();
                    let m = xhat.len() / c;
                    let gam = &self.value(*gamma).data;
                    let mut dx = vec![0.0; xhat.len()];
                    for ch in 0..c {
                        let gs = &gy[ch * m..(ch + 1) * m];
                        let xh = &xhat[ch * m..(ch + 1) * m];
                        let sum_g: f64 = gs.iter().sum();
                        let sum_gx = dot(gs, xh);
                        acc(&mut g, grads, *beta, ch, sum_g);
                        acc(&mut g, grads, *gamma, ch, sum_gx);
                        let scale = gam[ch] * inv_std[ch] / m as f64;
                        for i in 0..m {
                            dx[ch * m + i] = scale * (m as f64 * gs[i] - sum_g - xh[i] * sum_gx);
                        }
                    }
                    add_all(&mut acc, &mut g, grads, *x, &dx);
                }
                Op::Relu { x } => {
                    let dx: Vec<f64> = node
                        .value
                        .data
                        .iter()
                        .zip(&gy)
                        .map(|(&y, &d)| if y > 0.0 { d } else { 0.0 })
                        .collect();
                    add_all(&mut acc, &mut g, grads, *x, &dx);
                }
                Op::MaxPool2 { x, argmax } => {
                    for (&i, &d) in argmax.iter().zip(&gy) {
                        acc(&mut g, grads, *x, i, d);
                    }
                }
                Op::Conv1x1 { x, w, b } => {
                    let (c_in, l) = (self.value(*x).shape[0], self.value(*x).shape[1]);
                    let c_out = self.value(*w).shape[0];
                    let (xv, wv) = (&self.value(*x).data, &self.value(*w).data);
                    let mut dx = vec![0.0; xv.len()];
                    let mut dw = vec![0.0; wv.len()];
                    for o in 0..c_out {
                        let go = &gy[o * l..(o + 1) * l];
                        acc(&mut g, grads, *b, o, go.iter().sum());
                        for c in 0..c_in {
                            dw[o * c_in + c] = dot(go, &xv[c * l..(c + 1) * l]);
                            let wk = wv[o * c_in + c];
                            for (d, gv) in dx[c * l..(c + 1) * l].iter_mut().zip(go) {
                                *d += wk * gv;
                            }
                        }
                    }
                    add_all(&mut acc, &mut g, grads, *w, &dw);
                    add_all(&mut acc, &mut g, grads, *x, &dx);
                }
                Op::Linear { x, w, b } => {
                    let xv = &self.value(*x).data;
                    let wv = &self.value(*w).data;
                    let nin = xv.len();
                    let mut dx = vec![0.0; nin];
                    let mut dw = vec![0.0; wv.len()];
                    for (i, &d) in gy.iter().enumerate() {
                        if d == 0.0 {
                            continue;
                        }
                        acc(&mut g, grads, *b, i, d);
                        let row = &wv[i * nin..(i + 1) * nin];
                        for j in 0..nin {
                            dw[i * nin + j] = d * xv[j];
                            dx[j] += d * row[j];
                        }
                    }
                    add_all(&mut acc, &mut g, grads, *w, &dw);
                    add_all(&mut acc, &mut g, grads, *x, &dx);
                }
                Op::Concat { parts } => {
                    let mut off = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        add_all(&mut acc, &mut g, grads, p, &gy[off..off + len]);
                        off += len;
                    }
                }
                Op::LogSoftmax { x } => {
                    let total: f64 = gy.iter().sum();
                    let dx: Vec<f64> = node
                        .value
                        .data
                        .iter()
                        .zip(&gy)
                        .map(|(&ly, &d)| d - ly.exp() * total)
                        .collect();
                    add_all(&mut acc, &mut g, grads, *x, &dx);
                }
            }
        }
    }
}

fn add_all<F>(acc: &mut F, g: &mut Vec<Option<Vec<f64>>>, grads: &mut [Tensor], v: Var, d: &[f64])
where
    F: FnMut(&mut Vec<Option<Vec<f64>>>, &mut [Tensor], Var, usize, f64),
{
    for (i, &x) in d.iter().enumerate() {
        if x != 0.0 {
            acc(g, grads, v, i, x);
        }
    }
}

/// Output rows `[lo, hi)` whose kernel tap `k` lands inside an input of
/// length `n` under padding `p`.
fn valid_range(k: usize, p: usize, n: usize) -> (usize, usize) {
    let lo = p.saturating_sub(k);
    let hi = (n + p).saturating_sub(k).min(n);
    (lo, hi.max(lo))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    log_softmax(z).into_iter().map(f64::exp).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Naive reference convolution.
    fn conv_ref(x: &Tensor, w: &Tensor, b: &Tensor) -> Vec<f64> {
        let (c_in, h, wd) = (x.shape[0], x.shape[1], x.shape[2]);
        let (c_out, k) = (w.shape[0], w.shape[2]);
        let p = (k / 2) as isize;
        let mut out = vec![0.0; c_out * h * wd];
        for o in 0..c_out {
            for y in 0..h {
                for xx in 0..wd {
                    let mut s = b.data[o];
                    for c in 0..c_in {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sy = y as isize + ky as isize - p;
                                let sx = xx as isize + kx as isize - p;
                                if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < wd {
                                    s += w.data[((o * c_in + c) * k + ky) * k + kx]
                                        * x.data[(c * h + sy as usize) * wd + sx as usize];
                                }
                            }
                        }
                    }
                    out[(o * h + y) * wd + xx] = s;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (h, w, k) in [(7, 5, 5), (3, 3, 5), (9, 8, 3), (1, 4, 1)] {
            let params = vec![random(&[3, 2, k, k], &mut rng), random(&[3], &mut rng)];
            let x = random(&[2, h, w], &mut rng);
            let mut tape = Tape::new(&params);
            let xi = tape.input(x.clone());
            let y = tape.conv2d(xi, Var::Param(0), Var::Param(1)).unwrap();
            let expect = conv_ref(&x, &params[0], &params[1]);
            for (a, b) in tape.value(y).data.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pool_drops_odd_edge() {
        let params = vec![];
        let mut tape = Tape::new(&params);
        let x = tape.input(Tensor::from_vec(
            &[1, 3, 3],
            (0..9).map(f64::from).collect(),
        ));
        let y = tape.maxpool2(x).unwrap();
        assert_eq!(tape.value(y).shape, vec![1, 1, 1]);
        assert_eq!(tape.value(y).data, vec![4.0]);
    }

    #[test]
    fn shape_errors_are_reported() {
        let params = vec![Tensor::zeros(&[2, 3, 5, 5]), Tensor::zeros(&[2])];
        let mut tape = Tape::new(&params);
        let x = tape.input(Tensor::zeros(&[2, 8, 8]));
        assert!(matches!(
            tape.conv2d(x, Var::Param(0), Var::Param(1)),
            Err(TapeError::Shape { op: "conv2d", .. })
        ));
        assert!(tape.linear(x, Var::Param(1), Var::Param(1)).is_err());
    }

    #[test]
    fn log_softmax_is_shift_invariant_and_normalized() {
        let z = [0.3, -1.2, 4.0, 0.0];
        let shifted: Vec<f64> = z.iter().map(|v| v + 1234.5).collect();
        let (a, b) = (softmax(&z), softmax(&shifted));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
