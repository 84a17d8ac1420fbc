//! Block dynamics network with hand-derived gradients.
//!
//! Wiring for one block (all in normalised units, `M` samples per block):
//!
//! ```text
//! x (M x 4) --per sample--> FC_en1 -> FC_en2 --(M x 3)--> RNN_1 -> RNN_2 --+
//! x (M x 4) --flattened---> FC_state ------------------------------------+--> FC_out1 -> FC_out2 -> p_hat (M x 2)
//! v (M x 2) --flattened---> FC_input ------------------------------------+
//! ```
//!
//! Every hidden nonlinearity is `tanh`; `FC_out2` is affine. The two Elman
//! layers carry the latent state across blocks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{POS_CHANNELS, STATE_CHANNELS};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    /// Samples per block (`M`).
    pub block_len: usize,
    /// Width of the hidden dense layers.
    pub hidden: usize,
    /// Per-sample latent width produced by the encoder.
    pub latent_per_step: usize,
    /// Units in each recurrent layer.
    pub rnn_units: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture { block_len: 10, hidden: 32, latent_per_step: 3, rnn_units: 30 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseShape {
    pub n_in: usize,
    pub n_out: usize,
    pub offset: usize,
}

impl DenseShape {
    pub fn n_params(&self) -> usize {
        self.n_in * self.n_out + self.n_out
    }
    fn w(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.n_in * self.n_out
    }
    fn b(&self) -> std::ops::Range<usize> {
        let s = self.offset + self.n_in * self.n_out;
        s..s + self.n_out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecurrentShape {
    pub n_in: usize,
    pub units: usize,
    pub offset: usize,
}

impl RecurrentShape {
    pub fn n_params(&self) -> usize {
        self.units * self.n_in + self.units * self.units + self.units
    }
    fn w_in(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.units * self.n_in
    }
    fn w_rec(&self) -> std::ops::Range<usize> {
        let s = self.w_in().end;
        s..s + self.units * self.units
    }
    fn b(&self) -> std::ops::Range<usize> {
        let s = self.w_rec().end;
        s..s + self.units
    }
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.n_params()
    }
}

/// Offsets of every layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub en1: DenseShape,
    pub en2: DenseShape,
    pub state: DenseShape,
    pub input: DenseShape,
    pub rnn1: RecurrentShape,
    pub rnn2: RecurrentShape,
    pub out1: DenseShape,
    pub out2: DenseShape,
    pub total: usize,
}

impl Layout {
    pub fn new(a: &Architecture) -> Self {
        let mut off = 0;
        let mut dense = |n_in, n_out| {
            let s = DenseShape { n_in, n_out, offset: off };
            off += s.n_params();
            s
        };
        let m = a.block_len;
        let en1 = dense(STATE_CHANNELS, a.hidden);
        let en2 = dense(a.hidden, a.latent_per_step);
        let state = dense(STATE_CHANNELS * m, a.hidden);
        let input = dense(POS_CHANNELS * m, a.hidden);
        let out1 = dense(a.rnn_units + 2 * a.hidden, a.hidden);
        let out2 = dense(a.hidden, POS_CHANNELS * m);
        let rnn1 = RecurrentShape { n_in: a.latent_per_step * m, units: a.rnn_units, offset: off };
        off += rnn1.n_params();
        let rnn2 = RecurrentShape { n_in: a.rnn_units, units: a.rnn_units, offset: off };
        off += rnn2.n_params();
        Layout { en1, en2, state, input, rnn1, rnn2, out1, out2, total: off }
    }

    pub fn dense_layers(&self) -> [(&'static str, DenseShape); 6] {
        [
            ("fc_en1", self.en1),
            ("fc_en2", self.en2),
            ("fc_state", self.state),
            ("fc_input", self.input),
            ("fc_out1", self.out1),
            ("fc_out2", self.out2),
        ]
    }

    pub fn recurrent_layers(&self) -> [(&'static str, RecurrentShape); 2] {
        [("rnn_latent1", self.rnn1), ("rnn_latent2", self.rnn2)]
    }

    /// Index range of every recurrent parameter.
    pub fn recurrent_range(&self) -> std::ops::Range<usize> {
        self.rnn1.offset..self.rnn2.range().end
    }
}

/// Parameter count from layer dimensions alone.
pub fn analytic_param_count(a: &Architecture) -> usize {
    let dense = |i: usize, o: usize| i * o + o;
    let rec = |i: usize, u: usize| u * i + u * u + u;
    let m = a.block_len;
    dense(4, a.hidden)
        + dense(a.hidden, a.latent_per_step)
        + dense(4 * m, a.hidden)
        + dense(2 * m, a.hidden)
        + dense(a.rnn_units + 2 * a.hidden, a.hidden)
        + dense(a.hidden, 2 * m)
        + rec(a.latent_per_step * m, a.rnn_units)
        + rec(a.rnn_units, a.rnn_units)
}

/// Training stage a parameter set has completed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Initialized,
    Autoencoder,
    SingleStep,
    MultiStep,
}

impl Stage {
    pub fn tag(self) -> &'static str {
        match self {
            Stage::Initialized => "initialized",
            Stage::Autoencoder => "autoencoder",
            Stage::SingleStep => "single_step",
            Stage::MultiStep => "multi_step",
        }
    }

    pub fn number(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub arch: Architecture,
    pub layout: Layout,
    pub theta: Vec<f64>,
    pub stage: Stage,
}

/// Hidden activations of both recurrent layers.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub layers: [Vec<f64>; 2],
}

impl LatentState {
    pub fn zeros(units: usize) -> Self {
        LatentState { layers: [vec![0.0; units], vec![0.0; units]] }
    }
}

fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n_in = x.len();
    for ((o, row), bias) in out.iter_mut().zip(w.chunks_exact(n_in)).zip(b) {
        *o = bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

fn dense_tanh(theta: &[f64], s: &DenseShape, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; s.n_out];
    affine(&theta[s.w()], &theta[s.b()], x, &mut out);
    out.iter_mut().for_each(|v| *v = v.tanh());
    out
}

/// Accumulates `dW += d * x^T`, `db += d` and returns `W^T d` into `dx` (added).
fn dense_backward(theta: &[f64], grad: Option<&mut [f64]>, s: &DenseShape, x: &[f64], d: &[f64], dx: Option<&mut [f64]>) {
    if let Some(g) = grad {
        let (gw, gb) = g[s.offset..s.offset + s.n_params()].split_at_mut(s.n_in * s.n_out);
        for ((row, di), gbi) in gw.chunks_exact_mut(s.n_in).zip(d).zip(gb.iter_mut()) {
            *gbi += di;
            for (gij, xj) in row.iter_mut().zip(x) {
                *gij += di * xj;
            }
        }
    }
    if let Some(dx) = dx {
        for (row, di) in theta[s.w()].chunks_exact(s.n_in).zip(d) {
            for (dxj, wij) in dx.iter_mut().zip(row) {
                *dxj += di * wij;
            }
        }
    }
}

fn tanh_grad(d: &mut [f64], y: &[f64]) {
    for (di, yi) in d.iter_mut().zip(y) {
        *di *= 1.0 - yi * yi;
    }
}

/// Activations of one block, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct BlockTrace {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    enc_hidden: Vec<Vec<f64>>,
    latent_in: Vec<f64>,
    prev: LatentState,
    next: LatentState,
    s: Vec<f64>,
    q: Vec<f64>,
    concat: Vec<f64>,
    o1: Vec<f64>,
    pub y: Vec<f64>,
}

impl BlockTrace {
    pub fn latent_out(&self) -> &LatentState {
        &self.next
    }
}

/// Gradients flowing out of a block's backward pass.
#[derive(Debug, Clone)]
pub struct BlockGrads {
    /// Gradient w.r.t. the incoming latent state.
    pub latent: LatentState,
    /// Gradient w.r.t. `x` (`M x 4`).
    pub x: Vec<f64>,
}

impl NetworkParams {
    /// Weights and biases uniform in `+-1/sqrt(fan_in)`.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let layout = Layout::new(&arch);
        let mut theta = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize| {
            let a = 1.0 / (fan_in as f64).sqrt();
            for v in &mut theta[range] {
                *v = rng.random_range(-a..a);
            }
        };
        for (_, s) in layout.dense_layers() {
            fill(s.offset..s.offset + s.n_params(), s.n_in);
        }
        for (_, r) in layout.recurrent_layers() {
            fill(r.range(), r.n_in + r.units);
        }
        NetworkParams { arch, layout, theta, stage: Stage::Initialized }
    }

    pub fn zeros(arch: Architecture) -> Self {
        let layout = Layout::new(&arch);
        NetworkParams { arch, theta: vec![0.0; layout.total], layout, stage: Stage::Initialized }
    }

    /// Number of parameters in the flat vector.
    pub fn census(&self) -> usize {
        self.theta.len()
    }

    pub fn initial_latent(&self) -> LatentState {
        LatentState::zeros(self.arch.rnn_units)
    }

    pub fn check_inputs(&self, x: &[f64], v: &[f64], latent: &LatentState) -> Result<()> {
        let m = self.arch.block_len;
        if x.len() != STATE_CHANNELS * m || v.len() != POS_CHANNELS * m {
            return Err(Error::Model(format!(
                "block shape mismatch: x {} v {} for block length {m}",
                x.len(),
                v.len()
            )));
        }
        if latent.layers.iter().any(|l| l.len() != self.arch.rnn_units) {
            return Err(Error::Model("latent width does not match the network".into()));
        }
        Ok(())
    }

    /// Per-sample encoder: returns the hidden activations and the `M x 3` latent input.
    fn encode(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let l = &self.layout;
        let mut hidden = Vec::with_capacity(self.arch.block_len);
        let mut latent = Vec::with_capacity(self.arch.block_len * self.arch.latent_per_step);
        for xs in x.chunks_exact(STATE_CHANNELS) {
            let h = dense_tanh(&self.theta, &l.en1, xs);
            latent.extend(dense_tanh(&self.theta, &l.en2, &h));
            hidden.push(h);
        }
        (hidden, latent)
    }

    fn recurrent(&self, r: &RecurrentShape, input: &[f64], prev: &[f64]) -> Vec<f64> {
        let mut a = vec![0.0; r.units];
        affine(&self.theta[r.w_in()], &self.theta[r.b()], input, &mut a);
        for (ai, row) in a.iter_mut().zip(self.theta[r.w_rec()].chunks_exact(r.units)) {
            *ai += row.iter().zip(prev).map(|(w, h)| w * h).sum::<f64>();
        }
        a.iter_mut().for_each(|v| *v = v.tanh());
        a
    }

    /// Recurrent update on measured data only; independent of `v`.
    pub fn advance_latent(&self, x: &[f64], latent: &LatentState) -> LatentState {
        let (_, z) = self.encode(x);
        let r1 = self.recurrent(&self.layout.rnn1, &z, &latent.layers[0]);
        let r2 = self.recurrent(&self.layout.rnn2, &r1, &latent.layers[1]);
        LatentState { layers: [r1, r2] }
    }

    pub fn trace_block(&self, x: &[f64], v: &[f64], latent: &LatentState) -> BlockTrace {
        let l = &self.layout;
        let (enc_hidden, z) = self.encode(x);
        let r1 = self.recurrent(&l.rnn1, &z, &latent.layers[0]);
        let r2 = self.recurrent(&l.rnn2, &r1, &latent.layers[1]);
        let s = dense_tanh(&self.theta, &l.state, x);
        let q = dense_tanh(&self.theta, &l.input, v);
        let mut concat = Vec::with_capacity(l.out1.n_in);
        concat.extend_from_slice(&r2);
        concat.extend_from_slice(&s);
        concat.extend_from_slice(&q);
        let o1 = dense_tanh(&self.theta, &l.out1, &concat);
        let mut y = vec![0.0; l.out2.n_out];
        affine(&self.theta[l.out2.w()], &self.theta[l.out2.b()], &o1, &mut y);
        BlockTrace {
            x: x.to_vec(),
            v: v.to_vec(),
            enc_hidden,
            latent_in: z,
            prev: latent.clone(),
            next: LatentState { layers: [r1, r2] },
            s,
            q,
            concat,
            o1,
            y,
        }
    }

    /// One block-granular application of the dynamics: predicted relative
    /// positions of the next block (normalised) and the updated latent state.
    pub fn forward_block(&self, x: &[f64], v: &[f64], latent: &LatentState) -> Result<(Vec<f64>, LatentState)> {
        self.check_inputs(x, v, latent)?;
        let t = self.trace_block(x, v, latent);
        if t.y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Training {
                message: "non-finite network output".into(),
                snapshot: Some(self.theta.clone()),
            });
        }
        Ok((t.y, t.next))
    }

    /// Builds the next input block: predicted positions with the given forces.
    pub fn feed_back(pred: &[f64], forces: &[f64]) -> Vec<f64> {
        pred.chunks_exact(POS_CHANNELS)
            .zip(forces.chunks_exact(POS_CHANNELS))
            .flat_map(|(p, f)| [p[0], p[1], f[0], f[1]])
            .collect()
    }

    /// Closed-loop prediction over `future_v.len()` blocks. Block `i > 0`
    /// takes the prediction of block `i - 1` as its position input and the
    /// forces of `future_v[i - 1]`.
    pub fn rollout(&self, x: &[f64], future_v: &[Vec<f64>], latent: &LatentState) -> Result<Vec<Vec<f64>>> {
        if future_v.is_empty() {
            return Err(Error::Model("rollout horizon must be >= 1".into()));
        }
        let mut out = Vec::with_capacity(future_v.len());
        let mut lat = latent.clone();
        let mut input = x.to_vec();
        for (i, v) in future_v.iter().enumerate() {
            let (y, next) = self.forward_block(&input, v, &lat)?;
            if i + 1 < future_v.len() {
                input = Self::feed_back(&y, v);
            }
            out.push(y);
            lat = next;
        }
        Ok(out)
    }

    /// Backward pass through one block. `dy` is the loss gradient w.r.t. the
    /// output, `d_latent` w.r.t. the outgoing latent state. Parameter
    /// gradients are added into `grad`; recurrent parameters are skipped when
    /// `train_recurrent` is false (the gradient still flows through them).
    pub fn backward_block(
        &self,
        t: &BlockTrace,
        dy: &[f64],
        d_latent: &LatentState,
        grad: &mut [f64],
        train_recurrent: bool,
    ) -> BlockGrads {
        let l = &self.layout;
        let th = &self.theta;
        let mut dx = vec![0.0; t.x.len()];

        let mut d_o1 = vec![0.0; l.out2.n_in];
        dense_backward(th, Some(grad), &l.out2, &t.o1, dy, Some(&mut d_o1));
        tanh_grad(&mut d_o1, &t.o1);
        let mut d_concat = vec![0.0; l.out1.n_in];
        dense_backward(th, Some(grad), &l.out1, &t.concat, &d_o1, Some(&mut d_concat));

        let units = self.arch.rnn_units;
        let hid = self.arch.hidden;
        let (d_r2_out, rest) = d_concat.split_at(units);
        let (d_s, d_q) = rest.split_at(hid);

        let mut d_s = d_s.to_vec();
        tanh_grad(&mut d_s, &t.s);
        dense_backward(th, Some(grad), &l.state, &t.x, &d_s, Some(&mut dx));
        let mut d_q = d_q.to_vec();
        tanh_grad(&mut d_q, &t.q);
        dense_backward(th, Some(grad), &l.input, &t.v, &d_q, None);

        // Recurrent layer 2.
        let mut d_a2: Vec<f64> = d_r2_out.iter().zip(&d_latent.layers[1]).map(|(a, b)| a + b).collect();
        tanh_grad(&mut d_a2, &t.next.layers[1]);
        let mut d_r1 = d_latent.layers[0].clone();
        let mut d_prev2 = vec![0.0; units];
        self.recurrent_backward(&l.rnn2, &t.next.layers[0], &t.prev.layers[1], &d_a2, grad, train_recurrent, &mut d_r1, &mut d_prev2);

        // Recurrent layer 1.
        let mut d_a1 = d_r1;
        tanh_grad(&mut d_a1, &t.next.layers[0]);
        let mut d_z = vec![0.0; l.rnn1.n_in];
        let mut d_prev1 = vec![0.0; units];
        self.recurrent_backward(&l.rnn1, &t.latent_in, &t.prev.layers[0], &d_a1, grad, train_recurrent, &mut d_z, &mut d_prev1);

        // Encoder, per sample.
        let k = self.arch.latent_per_step;
        for (i, (xs, h)) in t.x.chunks_exact(STATE_CHANNELS).zip(&t.enc_hidden).enumerate() {
            let z = &t.latent_in[i * k..(i + 1) * k];
            let mut dz: Vec<f64> = d_z[i * k..(i + 1) * k].to_vec();
            tanh_grad(&mut dz, z);
            let mut dh = vec![0.0; hid];
            dense_backward(th, Some(grad), &l.en2, h, &dz, Some(&mut dh));
            tanh_grad(&mut dh, h);
            dense_backward(th, Some(grad), &l.en1, xs, &dh, Some(&mut dx[i * STATE_CHANNELS..(i + 1) * STATE_CHANNELS]));
        }

        BlockGrads { latent: LatentState { layers: [d_prev1, d_prev2] }, x: dx }
    }

    #[allow(clippy::too_many_arguments)]
    fn recurrent_backward(
        &self,
        r: &RecurrentShape,
        input: &[f64],
        prev: &[f64],
        d_a: &[f64],
        grad: &mut [f64],
        train: bool,
        d_input: &mut [f64],
        d_prev: &mut [f64],
    ) {
        if train {
            let gw_in = r.w_in();
            for (row, di) in grad[gw_in].chunks_exact_mut(r.n_in).zip(d_a) {
                for (g, xj) in row.iter_mut().zip(input) {
                    *g += di * xj;
                }
            }
            for (row, di) in grad[r.w_rec()].chunks_exact_mut(r.units).zip(d_a) {
                for (g, hj) in row.iter_mut().zip(prev) {
                    *g += di * hj;
                }
            }
            for (g, di) in grad[r.b()].iter_mut().zip(d_a) {
                *g += di;
            }
        }
        for (row, di) in self.theta[r.w_in()].chunks_exact(r.n_in).zip(d_a) {
            for (dj, w) in d_input.iter_mut().zip(row) {
                *dj += di * w;
            }
        }
        for (row, di) in self.theta[r.w_rec()].chunks_exact(r.units).zip(d_a) {
            for (dj, w) in d_prev.iter_mut().zip(row) {
                *dj += di * w;
            }
        }
    }
}

/// Throwaway per-sample decoder used only while pretraining the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    pub l1: DenseShape,
    pub l2: DenseShape,
    pub theta: Vec<f64>,
}

impl Decoder {
    pub fn init(arch: &Architecture, seed: u64) -> Self {
        let l1 = DenseShape { n_in: arch.latent_per_step, n_out: arch.hidden, offset: 0 };
        let l2 = DenseShape { n_in: arch.hidden, n_out: STATE_CHANNELS, offset: l1.n_params() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = vec![0.0; l1.n_params() + l2.n_params()];
        for (s, range) in [(l1, 0..l1.n_params()), (l2, l1.n_params()..theta.len())] {
            let a = 1.0 / (s.n_in as f64).sqrt();
            theta[range].iter_mut().for_each(|v| *v = rng.random_range(-a..a));
        }
        Decoder { l1, l2, theta }
    }
}

/// Autoencoder reconstruction of a block: squared error sum and, if
/// requested, gradients for the encoder (into `grad`) and decoder (into
/// `dec_grad`).
pub fn autoencoder_loss(
    net: &NetworkParams,
    dec: &Decoder,
    x: &[f64],
    grads: Option<(&mut [f64], &mut [f64])>,
) -> f64 {
    let l = &net.layout;
    let mut sse = 0.0;
    let mut grads = grads;
    for xs in x.chunks_exact(STATE_CHANNELS) {
        let h = dense_tanh(&net.theta, &l.en1, xs);
        let z = dense_tanh(&net.theta, &l.en2, &h);
        let g = dense_tanh(&dec.theta, &dec.l1, &z);
        let mut r = vec![0.0; STATE_CHANNELS];
        affine(&dec.theta[dec.l2.w()], &dec.theta[dec.l2.b()], &g, &mut r);
        let err: Vec<f64> = r.iter().zip(xs).map(|(a, b)| a - b).collect();
        sse += err.iter().map(|e| e * e).sum::<f64>();
        if let Some((g_net, g_dec)) = grads.as_mut() {
            let dr: Vec<f64> = err.iter().map(|e| 2.0 * e).collect();
            let mut dg = vec![0.0; dec.l1.n_out];
            dense_backward(&dec.theta, Some(g_dec), &dec.l2, &g, &dr, Some(&mut dg));
            tanh_grad(&mut dg, &g);
            let mut dz = vec![0.0; l.en2.n_out];
            dense_backward(&dec.theta, Some(g_dec), &dec.l1, &z, &dg, Some(&mut dz));
            tanh_grad(&mut dz, &z);
            let mut dh = vec![0.0; l.en1.n_out];
            dense_backward(&net.theta, Some(g_net), &l.en2, &h, &dz, Some(&mut dh));
            tanh_grad(&mut dh, &h);
            dense_backward(&net.theta, Some(g_net), &l.en1, xs, &dh, None);
        }
    }
    sse
}

/// One training sequence: `warmup` teacher-forced blocks followed by
/// `horizon` closed-loop blocks. `x[0]` must be a measured block; for
/// closed-loop steps only the force channels of `x[i]` are used.
#[derive(Debug, Clone, Copy)]
pub struct Sequence<'a> {
    pub x: &'a [&'a [f64]],
    pub v: &'a [&'a [f64]],
    pub target: &'a [&'a [f64]],
    /// Number of leading teacher-forced steps (measured position inputs).
    pub teacher_forced: usize,
    /// Steps from which the loss is accumulated.
    pub loss_from: usize,
}

impl Sequence<'_> {
    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }
}

/// Squared-error sum over the loss steps of a sequence and the number of
/// scalar terms; gradients are accumulated into `grad` when given.
pub fn sequence_loss(
    net: &NetworkParams,
    seq: &Sequence,
    grad: Option<&mut [f64]>,
    train_recurrent: bool,
) -> (f64, usize) {
    let n = seq.len();
    let mut traces = Vec::with_capacity(n);
    let mut lat = net.initial_latent();
    let mut prev_pred: Option<Vec<f64>> = None;
    for i in 0..n {
        let input = match (&prev_pred, i < seq.teacher_forced.max(1)) {
            (Some(p), false) => NetworkParams::feed_back(p, seq.v[i - 1]),
            _ => seq.x[i].to_vec(),
        };
        let t = net.trace_block(&input, seq.v[i], &lat);
        lat = t.next.clone();
        prev_pred = Some(t.y.clone());
        traces.push(t);
    }
    let mut sse = 0.0;
    let mut count = 0;
    let mut dys: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (i, t) in traces.iter().enumerate() {
        let mut dy = vec![0.0; t.y.len()];
        if i >= seq.loss_from {
            for ((d, y), tg) in dy.iter_mut().zip(&t.y).zip(seq.target[i]) {
                let e = y - tg;
                sse += e * e;
                *d = 2.0 * e;
            }
            count += t.y.len();
        }
        dys.push(dy);
    }
    if let Some(grad) = grad {
        let mut d_lat = net.initial_latent();
        for i in (0..n).rev() {
            let g = net.backward_block(&traces[i], &dys[i], &d_lat, grad, train_recurrent);
            d_lat = g.latent;
            let fed_back = i >= seq.teacher_forced.max(1);
            if fed_back && i > 0 {
                for (k, dxs) in g.x.chunks_exact(STATE_CHANNELS).enumerate() {
                    dys[i - 1][k * POS_CHANNELS] += dxs[0];
                    dys[i - 1][k * POS_CHANNELS + 1] += dxs[1];
                }
            }
        }
    }
    (sse, count)
}
