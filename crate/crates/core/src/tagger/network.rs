//! Parameters, forward pass and backpropagation of the tagging network:
//! char embeddings → width-w convolution → max over positions, concatenated
//! with a frozen word vector, fed to a bidirectional LSTM whose states feed
//! two softmax heads.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub trait Scalar: Float + FromPrimitive + ToPrimitive + Sum + AddAssign + Debug + Send + Sync + 'static {}

impl<T> Scalar for T where T: Float + FromPrimitive + ToPrimitive + Sum + AddAssign + Debug + Send + Sync + 'static {}

pub(crate) fn lit<F: Scalar>(x: f64) -> F {
    F::from_f64(x).expect("representable constant")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F> {
    pub shape: Vec<usize>,
    pub data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![F::zero(); shape.iter().product()],
        }
    }

    fn uniform<R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(|_| lit(rng.random_range(-bound..bound))).collect(),
        }
    }

    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| G::from(*x).expect("finite value")).collect(),
        }
    }
}

/// Gate rows are stacked in the order input, forget, candidate, output.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams<F> {
    pub w_ih: Tensor<F>,
    pub w_hh: Tensor<F>,
    pub bias: Tensor<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaggerParams<F> {
    /// Row 0 is shared by characters unseen in training.
    pub char_emb: Tensor<F>,
    pub conv_w: Tensor<F>,
    pub conv_b: Tensor<F>,
    pub fwd: LstmParams<F>,
    pub bwd: LstmParams<F>,
    pub upos_w: Tensor<F>,
    pub upos_b: Tensor<F>,
    pub feats_w: Tensor<F>,
    pub feats_b: Tensor<F>,
}

pub const TENSOR_NAMES: [&str; 13] = [
    "char_emb",
    "conv_w",
    "conv_b",
    "fwd.w_ih",
    "fwd.w_hh",
    "fwd.bias",
    "bwd.w_ih",
    "bwd.w_hh",
    "bwd.bias",
    "upos_w",
    "upos_b",
    "feats_w",
    "feats_b",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub word_dim: usize,
    pub char_emb_dim: usize,
    pub conv_width: usize,
    pub filters: usize,
    pub hidden: usize,
    /// Known characters plus the unknown-character row.
    pub n_chars: usize,
    pub n_upos: usize,
    pub n_feats: usize,
}

impl Shape {
    pub fn input_dim(&self) -> usize {
        self.word_dim + self.filters
    }

    fn lstm(&self, rng: &mut impl Rng) -> LstmParams<f64> {
        let h = self.hidden;
        let bound = 1.0 / (h as f64).sqrt();
        let mut bias = Tensor::zeros(&[4 * h]);
        bias.data[h..2 * h].fill(1.0);
        LstmParams {
            w_ih: Tensor::uniform(&[4 * h, self.input_dim()], bound, rng),
            w_hh: Tensor::uniform(&[4 * h, h], bound, rng),
            bias,
        }
    }

    pub fn init<F: Scalar, R: Rng>(&self, rng: &mut R) -> TaggerParams<F> {
        let e = self.char_emb_dim;
        let fan_conv = (self.conv_width * e) as f64;
        let fan_out = (2 * self.hidden) as f64;
        let params = TaggerParams {
            char_emb: Tensor::uniform(&[self.n_chars, e], 0.1, rng),
            conv_w: Tensor::uniform(&[self.filters, self.conv_width * e], 1.0 / fan_conv.sqrt(), rng),
            conv_b: Tensor::zeros(&[self.filters]),
            fwd: self.lstm(rng),
            bwd: self.lstm(rng),
            upos_w: Tensor::uniform(&[self.n_upos, 2 * self.hidden], 1.0 / fan_out.sqrt(), rng),
            upos_b: Tensor::zeros(&[self.n_upos]),
            feats_w: Tensor::uniform(&[self.n_feats, 2 * self.hidden], 1.0 / fan_out.sqrt(), rng),
            feats_b: Tensor::zeros(&[self.n_feats]),
        };
        params.cast()
    }
}

impl<F: Scalar> TaggerParams<F> {
    pub fn tensors(&self) -> [&Tensor<F>; 13] {
        [
            &self.char_emb,
            &self.conv_w,
            &self.conv_b,
            &self.fwd.w_ih,
            &self.fwd.w_hh,
            &self.fwd.bias,
            &self.bwd.w_ih,
            &self.bwd.w_hh,
            &self.bwd.bias,
            &self.upos_w,
            &self.upos_b,
            &self.feats_w,
            &self.feats_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<F>; 13] {
        let TaggerParams {
            char_emb,
            conv_w,
            conv_b,
            fwd,
            bwd,
            upos_w,
            upos_b,
            feats_w,
            feats_b,
        } = self;
        [
            char_emb,
            conv_w,
            conv_b,
            &mut fwd.w_ih,
            &mut fwd.w_hh,
            &mut fwd.bias,
            &mut bwd.w_ih,
            &mut bwd.w_hh,
            &mut bwd.bias,
            upos_w,
            upos_b,
            feats_w,
            feats_b,
        ]
    }

    pub fn from_tensors(mut tensors: Vec<Tensor<F>>) -> Self {
        assert_eq!(tensors.len(), TENSOR_NAMES.len());
        let mut next = || tensors.remove(0);
        TaggerParams {
            char_emb: next(),
            conv_w: next(),
            conv_b: next(),
            fwd: LstmParams {
                w_ih: next(),
                w_hh: next(),
                bias: next(),
            },
            bwd: LstmParams {
                w_ih: next(),
                w_hh: next(),
                bias: next(),
            },
            upos_w: next(),
            upos_b: next(),
            feats_w: next(),
            feats_b: next(),
        }
    }

    pub fn cast<G: Scalar>(&self) -> TaggerParams<G> {
        TaggerParams::from_tensors(self.tensors().iter().map(|t| t.cast()).collect())
    }

    pub fn zeros_like(&self) -> Self {
        TaggerParams::from_tensors(self.tensors().iter().map(|t| Tensor::zeros(&t.shape)).collect())
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: F, other: &Self) {
        for (t, o) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, &y) in t.data.iter_mut().zip(&o.data) {
                *x += alpha * y;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|x| x.is_finite()))
    }
}

/// `out += W x` for a row-major `W` with `x.len()` columns.
fn matvec_add<F: Scalar>(out: &mut [F], w: &[F], x: &[F]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += row.iter().zip(x).map(|(&a, &b)| a * b).sum::<F>();
    }
}

/// `out += Wᵀ d`.
fn matvec_t_add<F: Scalar>(out: &mut [F], w: &[F], d: &[F]) {
    let cols = out.len();
    for (&di, row) in d.iter().zip(w.chunks_exact(cols)) {
        if di == F::zero() {
            continue;
        }
        for (o, &a) in out.iter_mut().zip(row) {
            *o += di * a;
        }
    }
}

/// `g += d xᵀ`.
fn outer_add<F: Scalar>(g: &mut [F], d: &[F], x: &[F]) {
    let cols = x.len();
    for (&di, row) in d.iter().zip(g.chunks_exact_mut(cols)) {
        if di == F::zero() {
            continue;
        }
        for (a, &b) in row.iter_mut().zip(x) {
            *a += di * b;
        }
    }
}

fn sigmoid<F: Scalar>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

pub fn softmax<F: Scalar>(logits: &[F]) -> Vec<F> {
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let exp: Vec<F> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: F = exp.iter().copied().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// `-ln softmax(logits)[gold]`, computed as log-sum-exp minus the gold logit.
pub(crate) fn cross_entropy<F: Scalar>(logits: &[F], gold: usize) -> F {
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<F>().ln();
    lse - logits[gold]
}

/// One token after lookup: character rows and the frozen word vector.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenInput<F> {
    pub chars: Vec<usize>,
    pub word: Vec<F>,
}

struct CharTrace<F> {
    feat: Vec<F>,
    argmax: Vec<usize>,
}

fn char_forward<F: Scalar>(p: &TaggerParams<F>, s: &Shape, chars: &[usize]) -> CharTrace<F> {
    let (e, w) = (s.char_emb_dim, s.conv_width);
    let left = (w - 1) / 2;
    let mut feat = vec![F::zero(); s.filters];
    let mut argmax = vec![0; s.filters];
    if chars.is_empty() {
        return CharTrace { feat, argmax };
    }

    for f in 0..s.filters {
        let filter = &p.conv_w.data[f * w * e..(f + 1) * w * e];
        let mut best = F::neg_infinity();
        for pos in 0..chars.len() {
            let mut a = p.conv_b.data[f];
            for k in 0..w {
                let Some(q) = (pos + k).checked_sub(left).filter(|&q| q < chars.len()) else {
                    continue;
                };
                let emb = &p.char_emb.data[chars[q] * e..(chars[q] + 1) * e];
                a += filter[k * e..(k + 1) * e].iter().zip(emb).map(|(&x, &y)| x * y).sum::<F>();
            }
            if a > best {
                best = a;
                argmax[f] = pos;
            }
        }
        feat[f] = best.tanh();
    }
    CharTrace { feat, argmax }
}

fn char_backward<F: Scalar>(p: &TaggerParams<F>, s: &Shape, chars: &[usize], trace: &CharTrace<F>, d_feat: &[F], g: &mut TaggerParams<F>) {
    let (e, w) = (s.char_emb_dim, s.conv_width);
    let left = (w - 1) / 2;
    if chars.is_empty() {
        return;
    }
    for f in 0..s.filters {
        let da = d_feat[f] * (F::one() - trace.feat[f] * trace.feat[f]);
        if da == F::zero() {
            continue;
        }
        g.conv_b.data[f] += da;
        let pos = trace.argmax[f];
        for k in 0..w {
            let Some(q) = (pos + k).checked_sub(left).filter(|&q| q < chars.len()) else {
                continue;
            };
            let row = chars[q];
            let base = f * w * e + k * e;
            for i in 0..e {
                g.conv_w.data[base + i] += da * p.char_emb.data[row * e + i];
                g.char_emb.data[row * e + i] += da * p.conv_w.data[base + i];
            }
        }
    }
}

struct LstmStep<F> {
    token: usize,
    h_prev: Vec<F>,
    c_prev: Vec<F>,
    /// Activated gates, stacked i, f, g, o.
    gates: Vec<F>,
    tanh_c: Vec<F>,
    h: Vec<F>,
}

fn lstm_forward<F: Scalar>(p: &LstmParams<F>, hidden: usize, inputs: &[Vec<F>], order: &[usize]) -> Vec<LstmStep<F>> {
    let h4 = 4 * hidden;
    let mut h = vec![F::zero(); hidden];
    let mut c = vec![F::zero(); hidden];
    let mut steps = Vec::with_capacity(order.len());

    for &t in order {
        let mut z = p.bias.data.clone();
        matvec_add(&mut z, &p.w_ih.data, &inputs[t]);
        matvec_add(&mut z, &p.w_hh.data, &h);
        let mut gates = vec![F::zero(); h4];
        for j in 0..hidden {
            gates[j] = sigmoid(z[j]);
            gates[hidden + j] = sigmoid(z[hidden + j]);
            gates[2 * hidden + j] = z[2 * hidden + j].tanh();
            gates[3 * hidden + j] = sigmoid(z[3 * hidden + j]);
        }
        let mut c_new = vec![F::zero(); hidden];
        let mut tanh_c = vec![F::zero(); hidden];
        let mut h_new = vec![F::zero(); hidden];
        for j in 0..hidden {
            c_new[j] = gates[hidden + j] * c[j] + gates[j] * gates[2 * hidden + j];
            tanh_c[j] = c_new[j].tanh();
            h_new[j] = gates[3 * hidden + j] * tanh_c[j];
        }
        steps.push(LstmStep {
            token: t,
            h_prev: std::mem::replace(&mut h, h_new.clone()),
            c_prev: std::mem::replace(&mut c, c_new),
            gates,
            tanh_c,
            h: h_new,
        });
    }
    steps
}

/// Backpropagate through time. `d_h[t]` is the loss gradient reaching the
/// state of token `t` from the output layer; input gradients are added to
/// `d_inputs`.
fn lstm_backward<F: Scalar>(
    p: &LstmParams<F>,
    hidden: usize,
    inputs: &[Vec<F>],
    steps: &[LstmStep<F>],
    d_h: &[Vec<F>],
    g: &mut LstmParams<F>,
    d_inputs: &mut [Vec<F>],
) {
    let mut dh_next = vec![F::zero(); hidden];
    let mut dc_next = vec![F::zero(); hidden];
    let mut dz = vec![F::zero(); 4 * hidden];

    for step in steps.iter().rev() {
        let t = step.token;
        let gt = &step.gates;
        for j in 0..hidden {
            let dh = d_h[t][j] + dh_next[j];
            let (i, f, cand, o) = (gt[j], gt[hidden + j], gt[2 * hidden + j], gt[3 * hidden + j]);
            let tc = step.tanh_c[j];
            let dc = dh * o * (F::one() - tc * tc) + dc_next[j];
            dz[j] = dc * cand * i * (F::one() - i);
            dz[hidden + j] = dc * step.c_prev[j] * f * (F::one() - f);
            dz[2 * hidden + j] = dc * i * (F::one() - cand * cand);
            dz[3 * hidden + j] = dh * tc * o * (F::one() - o);
            dc_next[j] = dc * f;
        }
        outer_add(&mut g.w_ih.data, &dz, &inputs[t]);
        outer_add(&mut g.w_hh.data, &dz, &step.h_prev);
        for (b, &d) in g.bias.data.iter_mut().zip(&dz) {
            *b += d;
        }
        matvec_t_add(&mut d_inputs[t], &p.w_ih.data, &dz);
        dh_next.fill(F::zero());
        matvec_t_add(&mut dh_next, &p.w_hh.data, &dz);
    }
}

pub(crate) struct SentenceTrace<F> {
    chars: Vec<CharTrace<F>>,
    inputs: Vec<Vec<F>>,
    fwd: Vec<LstmStep<F>>,
    bwd: Vec<LstmStep<F>>,
    states: Vec<Vec<F>>,
    pub upos: Vec<Vec<F>>,
    pub feats: Vec<Vec<F>>,
}

/// The char-feature block of one token.
pub(crate) fn char_features<F: Scalar>(p: &TaggerParams<F>, s: &Shape, chars: &[usize]) -> Vec<F> {
    char_forward(p, s, chars).feat
}

pub(crate) fn forward<F: Scalar>(p: &TaggerParams<F>, s: &Shape, tokens: &[TokenInput<F>]) -> SentenceTrace<F> {
    let n = tokens.len();
    let chars: Vec<CharTrace<F>> = tokens.iter().map(|t| char_forward(p, s, &t.chars)).collect();
    let inputs: Vec<Vec<F>> = tokens
        .iter()
        .zip(&chars)
        .map(|(t, c)| t.word.iter().chain(&c.feat).copied().collect())
        .collect();

    let order: Vec<usize> = (0..n).collect();
    let reverse: Vec<usize> = (0..n).rev().collect();
    let fwd = lstm_forward(&p.fwd, s.hidden, &inputs, &order);
    let bwd = lstm_forward(&p.bwd, s.hidden, &inputs, &reverse);

    let mut states = vec![Vec::new(); n];
    for step in &fwd {
        states[step.token].extend_from_slice(&step.h);
    }
    for step in &bwd {
        states[step.token].extend_from_slice(&step.h);
    }

    let project = |w: &Tensor<F>, b: &Tensor<F>| -> Vec<Vec<F>> {
        states
            .iter()
            .map(|h| {
                let mut out = b.data.clone();
                matvec_add(&mut out, &w.data, h);
                out
            })
            .collect()
    };
    let upos = project(&p.upos_w, &p.upos_b);
    let feats = project(&p.feats_w, &p.feats_b);

    SentenceTrace {
        chars,
        inputs,
        fwd,
        bwd,
        states,
        upos,
        feats,
    }
}

fn head_backward<F: Scalar>(w: &Tensor<F>, gw: &mut Tensor<F>, gb: &mut Tensor<F>, state: &[F], d: &[F], d_state: &mut [F]) {
    outer_add(&mut gw.data, d, state);
    for (x, &y) in gb.data.iter_mut().zip(d) {
        *x += y;
    }
    matvec_t_add(d_state, &w.data, d);
}

/// Accumulate parameter gradients given the loss gradients of every logit.
pub(crate) fn backward<F: Scalar>(
    p: &TaggerParams<F>,
    s: &Shape,
    tokens: &[TokenInput<F>],
    trace: &SentenceTrace<F>,
    d_upos: &[Vec<F>],
    d_feats: &[Vec<F>],
    g: &mut TaggerParams<F>,
) {
    let n = tokens.len();
    let h = s.hidden;
    let mut d_fwd = vec![vec![F::zero(); h]; n];
    let mut d_bwd = vec![vec![F::zero(); h]; n];

    for t in 0..n {
        let mut d_state = vec![F::zero(); 2 * h];
        head_backward(&p.upos_w, &mut g.upos_w, &mut g.upos_b, &trace.states[t], &d_upos[t], &mut d_state);
        head_backward(&p.feats_w, &mut g.feats_w, &mut g.feats_b, &trace.states[t], &d_feats[t], &mut d_state);
        d_fwd[t].copy_from_slice(&d_state[..h]);
        d_bwd[t].copy_from_slice(&d_state[h..]);
    }

    let mut d_inputs = vec![vec![F::zero(); s.input_dim()]; n];
    lstm_backward(&p.fwd, h, &trace.inputs, &trace.fwd, &d_fwd, &mut g.fwd, &mut d_inputs);
    lstm_backward(&p.bwd, h, &trace.inputs, &trace.bwd, &d_bwd, &mut g.bwd, &mut d_inputs);

    // The word-vector block of each input is frozen; only the char block
    // carries gradient further down.
    for t in 0..n {
        char_backward(p, s, &tokens[t].chars, &trace.chars[t], &d_inputs[t][s.word_dim..], g);
    }
}
