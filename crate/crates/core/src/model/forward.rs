//! Forward pass over one or more token sequences with a recorded residual
//! stream and optional activation replacement.
//!
//! Sequences in a batch are packed row-wise (no padding): every linear layer
//! runs as a single matrix product over all rows, attention runs per sequence.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::config::{Activation, ModelConfig};
use super::params::{Params, Scalar};

pub(crate) const LN_EPS: f64 = 1e-5;

/// What a hook does at its (layer, position) site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum HookAction {
    Record,
    Replace(Vec<f32>),
}

/// An intervention site in the residual stream. Layer 0 is the embedding
/// output, layer `l` the stream after block `l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HookPoint {
    pub layer: usize,
    pub position: usize,
    pub action: HookAction,
}

impl HookPoint {
    pub fn record(layer: usize, position: usize) -> Self {
        Self {
            layer,
            position,
            action: HookAction::Record,
        }
    }

    pub fn replace(layer: usize, position: usize, vector: Vec<f32>) -> Self {
        Self {
            layer,
            position,
            action: HookAction::Replace(vector),
        }
    }
}

/// Residual-stream vectors of one forward pass: `layers[l]` has one row per
/// input position.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace<F = f32> {
    pub layers: Vec<Array2<F>>,
}

impl<F: Scalar> ActivationTrace<F> {
    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn seq_len(&self) -> usize {
        self.layers.first().map_or(0, |l| l.nrows())
    }

    pub fn at(&self, layer: usize, position: usize) -> ArrayView1<'_, F> {
        self.layers[layer].row(position)
    }
}

/// A replace-hook resolved against a packed batch.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PackedHook<'a, F> {
    pub seq: usize,
    pub layer: usize,
    pub position: usize,
    pub values: &'a [F],
}

/// Copies the residual row of one packed sequence into another after block
/// `layer` (0 is the embeddings). Gradients flow back into the source row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct PackedCopy {
    pub layer: usize,
    pub from: (usize, usize),
    pub to: (usize, usize),
}

pub(crate) struct LnCache<F> {
    pub xhat: Array2<F>,
    pub rstd: Array1<F>,
}

pub(crate) struct BlockCache<F> {
    pub ln1: LnCache<F>,
    pub normed1: Array2<F>,
    pub qkv: Array2<F>,
    /// Attention probabilities, indexed `seq * n_heads + head`.
    pub probs: Vec<Array2<F>>,
    pub ctx: Array2<F>,
    pub ln2: LnCache<F>,
    pub normed2: Array2<F>,
    pub pre_act: Array2<F>,
    pub act: Array2<F>,
}

pub(crate) struct Packed<F> {
    pub logits: Array2<F>,
    /// Residual stream, `n_layers + 1` entries.
    pub resid: Vec<Array2<F>>,
    pub blocks: Vec<BlockCache<F>>,
    pub final_ln: LnCache<F>,
    pub final_out: Array2<F>,
    pub offsets: Vec<usize>,
}

pub(crate) fn layer_norm<F: Scalar>(
    x: &Array2<F>,
    gain: &Array1<F>,
    bias: &Array1<F>,
) -> (Array2<F>, LnCache<F>) {
    let (rows, d) = x.dim();
    let n = F::of(d as f64);
    let eps = F::of(LN_EPS);
    let mut xhat = Array2::<F>::zeros((rows, d));
    let mut rstd = Array1::<F>::zeros(rows);
    let mut y = Array2::<F>::zeros((rows, d));
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.iter().fold(F::zero(), |a, &v| a + v) / n;
        let var = row.iter().fold(F::zero(), |a, &v| a + (v - mean) * (v - mean)) / n;
        let rs = F::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for c in 0..d {
            let h = (row[c] - mean) * rs;
            xhat[[r, c]] = h;
            y[[r, c]] = h * gain[c] + bias[c];
        }
    }
    (y, LnCache { xhat, rstd })
}

/// Final normalisation of a single activation vector.
pub(crate) fn layer_norm_vec<F: Scalar>(x: ArrayView1<F>, gain: &Array1<F>, bias: &Array1<F>) -> Array1<F> {
    let d = x.len();
    let n = F::of(d as f64);
    let mean = x.iter().fold(F::zero(), |a, &v| a + v) / n;
    let var = x.iter().fold(F::zero(), |a, &v| a + (v - mean) * (v - mean)) / n;
    let rs = F::one() / (var + F::of(LN_EPS)).sqrt();
    Array1::from_shape_fn(d, |c| (x[c] - mean) * rs * gain[c] + bias[c])
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu<F: Scalar>(z: F) -> F {
    let c = F::of(GELU_C);
    let a = F::of(GELU_A);
    let half = F::of(0.5);
    half * z * (F::one() + (c * (z + a * z * z * z)).tanh())
}

pub(crate) fn gelu_grad<F: Scalar>(z: F) -> F {
    let c = F::of(GELU_C);
    let a = F::of(GELU_A);
    let half = F::of(0.5);
    let t = (c * (z + a * z * z * z)).tanh();
    half * (F::one() + t) + half * z * (F::one() - t * t) * c * (F::one() + F::of(3.0) * a * z * z)
}

/// Row-wise softmax in place.
pub(crate) fn softmax_rows<F: Scalar>(m: &mut Array2<F>) {
    for mut row in m.rows_mut() {
        let max = row.iter().fold(F::neg_infinity(), |a, &v| a.max(v));
        let mut sum = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

fn causal_attention<F: Scalar>(
    q: ArrayView2<F>,
    k: ArrayView2<F>,
    scale: F,
) -> Array2<F> {
    let mut scores = q.dot(&k.t()) * scale;
    let t = scores.nrows();
    for i in 0..t {
        for j in (i + 1)..t {
            scores[[i, j]] = F::neg_infinity();
        }
    }
    softmax_rows(&mut scores);
    scores
}

fn apply_hooks<F: Scalar>(x: &mut Array2<F>, layer: usize, offsets: &[usize], hooks: &[PackedHook<F>]) {
    for h in hooks.iter().filter(|h| h.layer == layer) {
        let row = offsets[h.seq] + h.position;
        x.row_mut(row).assign(&ArrayView1::from(h.values));
    }
}

fn apply_copies<F: Scalar>(x: &mut Array2<F>, layer: usize, offsets: &[usize], copies: &[PackedCopy]) {
    for c in copies.iter().filter(|c| c.layer == layer) {
        let src = x.row(offsets[c.from.0] + c.from.1).to_owned();
        x.row_mut(offsets[c.to.0] + c.to.1).assign(&src);
    }
}

/// Runs the packed forward pass. Inputs are assumed validated.
pub(crate) fn forward_packed<F: Scalar>(
    cfg: &ModelConfig,
    p: &Params<F>,
    seqs: &[&[usize]],
    hooks: &[PackedHook<F>],
) -> Packed<F> {
    forward_packed_linked(cfg, p, seqs, hooks, &[])
}

/// Forward pass with replace-hooks followed by row copies at each layer.
pub(crate) fn forward_packed_linked<F: Scalar>(
    cfg: &ModelConfig,
    p: &Params<F>,
    seqs: &[&[usize]],
    hooks: &[PackedHook<F>],
    copies: &[PackedCopy],
) -> Packed<F> {
    let d = cfg.d_model;
    let n_heads = cfg.n_heads;
    let dh = cfg.head_dim();
    let scale = F::one() / F::of(dh as f64).sqrt();

    let mut offsets = Vec::with_capacity(seqs.len() + 1);
    let mut total = 0;
    for s in seqs {
        offsets.push(total);
        total += s.len();
    }
    offsets.push(total);

    let mut x = Array2::<F>::zeros((total, d));
    for (si, s) in seqs.iter().enumerate() {
        for (pos, &tok) in s.iter().enumerate() {
            let mut row = x.row_mut(offsets[si] + pos);
            row.assign(&p.tok_embed.row(tok));
            row += &p.pos_embed.row(pos);
        }
    }
    apply_hooks(&mut x, 0, &offsets, hooks);
    apply_copies(&mut x, 0, &offsets, copies);

    let mut resid = Vec::with_capacity(cfg.n_layers + 1);
    let mut blocks = Vec::with_capacity(cfg.n_layers);
    resid.push(x.clone());

    for (li, b) in p.blocks.iter().enumerate() {
        let (normed1, ln1) = layer_norm(&x, &b.ln1_gain, &b.ln1_bias);
        let qkv = normed1.dot(&b.qkv);
        let mut ctx = Array2::<F>::zeros((total, d));
        let mut probs = Vec::with_capacity(seqs.len() * n_heads);
        for si in 0..seqs.len() {
            let (lo, hi) = (offsets[si], offsets[si + 1]);
            for h in 0..n_heads {
                let q = qkv.slice(s![lo..hi, h * dh..(h + 1) * dh]);
                let k = qkv.slice(s![lo..hi, d + h * dh..d + (h + 1) * dh]);
                let v = qkv.slice(s![lo..hi, 2 * d + h * dh..2 * d + (h + 1) * dh]);
                let pr = causal_attention(q, k, scale);
                ctx.slice_mut(s![lo..hi, h * dh..(h + 1) * dh]).assign(&pr.dot(&v));
                probs.push(pr);
            }
        }
        x = x + ctx.dot(&b.attn_out);

        let (normed2, ln2) = layer_norm(&x, &b.ln2_gain, &b.ln2_bias);
        let pre_act = normed2.dot(&b.up) + &b.up_bias;
        let act = match cfg.activation {
            Activation::Gelu => pre_act.mapv(gelu),
            Activation::Identity => pre_act.clone(),
        };
        x = x + act.dot(&b.down) + &b.down_bias;

        apply_hooks(&mut x, li + 1, &offsets, hooks);
        apply_copies(&mut x, li + 1, &offsets, copies);
        resid.push(x.clone());
        blocks.push(BlockCache {
            ln1,
            normed1,
            qkv,
            probs,
            ctx,
            ln2,
            normed2,
            pre_act,
            act,
        });
    }

    let (final_out, final_ln) = layer_norm(&x, &p.final_gain, &p.final_bias);
    let logits = final_out.dot(&p.unembed_matrix());
    Packed {
        logits,
        resid,
        blocks,
        final_ln,
        final_out,
        offsets,
    }
}

/// Residual stream at the last layer is consumed by the final norm; expose
/// the trace slice for one packed sequence.
pub(crate) fn trace_for<F: Scalar>(packed: &Packed<F>, seq: usize) -> ActivationTrace<F> {
    let (lo, hi) = (packed.offsets[seq], packed.offsets[seq + 1]);
    ActivationTrace {
        layers: packed
            .resid
            .iter()
            .map(|r| r.slice(s![lo..hi, ..]).to_owned())
            .collect(),
    }
}

pub(crate) fn logits_for<F: Scalar>(packed: &Packed<F>, seq: usize) -> Array2<F> {
    let (lo, hi) = (packed.offsets[seq], packed.offsets[seq + 1]);
    packed.logits.slice(s![lo..hi, ..]).to_owned()
}

/// Sum over rows, used by bias gradients.
pub(crate) fn col_sum<F: Scalar>(m: &Array2<F>) -> Array1<F> {
    m.sum_axis(Axis(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn softmax_rows_normalise() {
        let mut m = ndarray::arr2(&[[1.0f64, 2.0, 3.0], [0.0, 0.0, 0.0]]);
        softmax_rows(&mut m);
        for row in m.rows() {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(m[[1, 0]], 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn gelu_grad_matches_finite_difference() {
        for &z in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(z + h) - gelu(z - h)) / (2.0 * h);
            assert_abs_diff_eq!(gelu_grad(z), fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn layer_norm_rows_are_standardised() {
        let x = ndarray::arr2(&[[1.0f64, 2.0, 3.0, 4.0], [-1.0, 5.0, 0.5, 2.0]]);
        let g = Array1::ones(4);
        let b = Array1::zeros(4);
        let (y, _) = layer_norm(&x, &g, &b);
        for row in y.rows() {
            assert_abs_diff_eq!(row.sum(), 0.0, epsilon = 1e-9);
            let var = row.iter().map(|v| v * v).sum::<f64>() / 4.0;
            assert_abs_diff_eq!(var, 1.0, epsilon = 1e-4);
        }
        let single = layer_norm_vec(x.row(1), &g, &b);
        for (a, b) in single.iter().zip(y.row(1)) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }
}
