//! Reverse-mode gradients of the masked next-token cross-entropy through the
//! packed forward pass.

use ndarray::{s, Array1, Array2, Axis};

use super::config::{Activation, ModelConfig};
use super::forward::{col_sum, forward_packed, forward_packed_linked, gelu_grad, LnCache, Packed, PackedCopy, PackedHook};
use super::params::{Params, Scalar};

/// One training sequence plus the per-position next-token targets.
///
/// `targets[i]` is the token expected at position `i + 1`, or `None` when the
/// prediction made at position `i` does not contribute to the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LossExample<'a> {
    pub ids: &'a [usize],
    pub targets: Vec<Option<usize>>,
}

fn ln_backward<F: Scalar>(
    dy: &Array2<F>,
    cache: &LnCache<F>,
    gain: &Array1<F>,
    dgain: &mut Array1<F>,
    dbias: &mut Array1<F>,
) -> Array2<F> {
    let (rows, d) = dy.dim();
    let n = F::of(d as f64);
    *dbias += &dy.sum_axis(Axis(0));
    *dgain += &(dy * &cache.xhat).sum_axis(Axis(0));
    let mut dx = Array2::<F>::zeros((rows, d));
    for r in 0..rows {
        let mut mean_dxhat = F::zero();
        let mut mean_dxhat_xhat = F::zero();
        for c in 0..d {
            let g = dy[[r, c]] * gain[c];
            mean_dxhat += g;
            mean_dxhat_xhat += g * cache.xhat[[r, c]];
        }
        mean_dxhat /= n;
        mean_dxhat_xhat /= n;
        let rs = cache.rstd[r];
        for c in 0..d {
            let g = dy[[r, c]] * gain[c];
            dx[[r, c]] = rs * (g - mean_dxhat - cache.xhat[[r, c]] * mean_dxhat_xhat);
        }
    }
    dx
}

/// Mean cross-entropy over all target positions and its parameter gradient.
///
/// Returns `(loss, n_targets, grads)`. With no targets the loss is zero and
/// every gradient is zero.
pub fn loss_and_grad<F: Scalar>(
    cfg: &ModelConfig,
    p: &Params<F>,
    batch: &[LossExample<'_>],
) -> (F, usize, Params<F>) {
    let seqs: Vec<&[usize]> = batch.iter().map(|e| e.ids).collect();
    let packed = forward_packed(cfg, p, &seqs, &[]);
    backward(cfg, p, &packed, batch, &[], &[])
}

/// As [`loss_and_grad`], with replace-hooks applied. Replaced activations
/// are constants: no gradient flows below a hook site.
pub(crate) fn loss_and_grad_hooked<F: Scalar>(
    cfg: &ModelConfig,
    p: &Params<F>,
    batch: &[LossExample<'_>],
    hooks: &[PackedHook<F>],
    copies: &[PackedCopy],
) -> (F, usize, Params<F>) {
    let seqs: Vec<&[usize]> = batch.iter().map(|e| e.ids).collect();
    let packed = forward_packed_linked(cfg, p, &seqs, hooks, copies);
    backward(cfg, p, &packed, batch, hooks, copies)
}

/// Undoes the forward-pass interventions at one layer boundary, in reverse
/// order: copies route their gradient to the source row, then replaced rows
/// get none.
fn boundary_grad<F: Scalar>(
    dx: &mut Array2<F>,
    layer: usize,
    offsets: &[usize],
    hooks: &[PackedHook<F>],
    copies: &[PackedCopy],
) {
    for c in copies.iter().rev().filter(|c| c.layer == layer) {
        let to = offsets[c.to.0] + c.to.1;
        let g = dx.row(to).to_owned();
        dx.row_mut(to).fill(F::zero());
        let mut from = dx.row_mut(offsets[c.from.0] + c.from.1);
        from += &g;
    }
    for h in hooks.iter().filter(|h| h.layer == layer) {
        dx.row_mut(offsets[h.seq] + h.position).fill(F::zero());
    }
}

/// Loss only, without the backward pass.
pub fn loss<F: Scalar>(cfg: &ModelConfig, p: &Params<F>, batch: &[LossExample<'_>]) -> (F, usize) {
    let seqs: Vec<&[usize]> = batch.iter().map(|e| e.ids).collect();
    let packed = forward_packed(cfg, p, &seqs, &[]);
    let (loss, count, _) = dlogits(&packed, batch);
    (loss, count)
}

fn dlogits<F: Scalar>(packed: &Packed<F>, batch: &[LossExample<'_>]) -> (F, usize, Array2<F>) {
    let mut probs = packed.logits.clone();
    super::forward::softmax_rows(&mut probs);
    let count: usize = batch
        .iter()
        .map(|e| e.targets.iter().filter(|t| t.is_some()).count())
        .sum();
    let mut grad = Array2::<F>::zeros(probs.dim());
    if count == 0 {
        return (F::zero(), 0, grad);
    }
    let inv = F::one() / F::of(count as f64);
    let mut total = F::zero();
    for (si, e) in batch.iter().enumerate() {
        let off = packed.offsets[si];
        for (pos, t) in e.targets.iter().enumerate() {
            if let Some(t) = *t {
                let r = off + pos;
                total -= probs[[r, t]].max(F::min_positive_value()).ln();
                let mut g = grad.row_mut(r);
                g.assign(&probs.row(r));
                g[t] -= F::one();
                g.mapv_inplace(|v| v * inv);
            }
        }
    }
    (total * inv, count, grad)
}

fn backward<F: Scalar>(
    cfg: &ModelConfig,
    p: &Params<F>,
    packed: &Packed<F>,
    batch: &[LossExample<'_>],
    hooks: &[PackedHook<F>],
    copies: &[PackedCopy],
) -> (F, usize, Params<F>) {
    let d = cfg.d_model;
    let n_heads = cfg.n_heads;
    let dh = cfg.head_dim();
    let scale = F::one() / F::of(dh as f64).sqrt();
    let mut g = Params::<F>::zeros(cfg);

    let (loss, count, dlog) = dlogits(packed, batch);

    let dfinal = match &p.unembed {
        Some(u) => {
            *g.unembed.as_mut().expect("untied grads") += &packed.final_out.t().dot(&dlog);
            dlog.dot(&u.t())
        }
        None => {
            g.tok_embed += &dlog.t().dot(&packed.final_out);
            dlog.dot(&p.tok_embed)
        }
    };
    let mut dx = ln_backward(
        &dfinal,
        &packed.final_ln,
        &p.final_gain,
        &mut g.final_gain,
        &mut g.final_bias,
    );

    for li in (0..cfg.n_layers).rev() {
        boundary_grad(&mut dx, li + 1, &packed.offsets, hooks, copies);
        let b = &p.blocks[li];
        let c = &packed.blocks[li];
        let gb = &mut g.blocks[li];

        // MLP branch.
        gb.down_bias += &col_sum(&dx);
        gb.down += &c.act.t().dot(&dx);
        let mut dpre = dx.dot(&b.down.t());
        if cfg.activation == Activation::Gelu {
            ndarray::Zip::from(&mut dpre)
                .and(&c.pre_act)
                .for_each(|g, &z| *g *= gelu_grad(z));
        }
        gb.up_bias += &col_sum(&dpre);
        gb.up += &c.normed2.t().dot(&dpre);
        let dnormed2 = dpre.dot(&b.up.t());
        dx = dx + ln_backward(&dnormed2, &c.ln2, &b.ln2_gain, &mut gb.ln2_gain, &mut gb.ln2_bias);

        // Attention branch.
        gb.attn_out += &c.ctx.t().dot(&dx);
        let dctx = dx.dot(&b.attn_out.t());
        let mut dqkv = Array2::<F>::zeros(c.qkv.dim());
        for si in 0..batch.len() {
            let (lo, hi) = (packed.offsets[si], packed.offsets[si + 1]);
            for h in 0..n_heads {
                let pr = &c.probs[si * n_heads + h];
                let (qc, kc, vc) = (h * dh, d + h * dh, 2 * d + h * dh);
                let q = c.qkv.slice(s![lo..hi, qc..qc + dh]);
                let k = c.qkv.slice(s![lo..hi, kc..kc + dh]);
                let v = c.qkv.slice(s![lo..hi, vc..vc + dh]);
                let dout = dctx.slice(s![lo..hi, qc..qc + dh]);

                dqkv.slice_mut(s![lo..hi, vc..vc + dh]).assign(&pr.t().dot(&dout));
                let dp = dout.dot(&v.t());
                let mut ds = dp;
                for (mut drow, prow) in ds.rows_mut().into_iter().zip(pr.rows()) {
                    let dot = drow.iter().zip(prow.iter()).fold(F::zero(), |a, (&x, &y)| a + x * y);
                    for (dv, &pv) in drow.iter_mut().zip(prow.iter()) {
                        *dv = pv * (*dv - dot) * scale;
                    }
                }
                dqkv.slice_mut(s![lo..hi, qc..qc + dh]).assign(&ds.dot(&k));
                dqkv.slice_mut(s![lo..hi, kc..kc + dh]).assign(&ds.t().dot(&q));
            }
        }
        gb.qkv += &c.normed1.t().dot(&dqkv);
        let dnormed1 = dqkv.dot(&b.qkv.t());
        dx = dx + ln_backward(&dnormed1, &c.ln1, &b.ln1_gain, &mut gb.ln1_gain, &mut gb.ln1_bias);
    }

    boundary_grad(&mut dx, 0, &packed.offsets, hooks, copies);
    for (si, e) in batch.iter().enumerate() {
        let off = packed.offsets[si];
        for (pos, &tok) in e.ids.iter().enumerate() {
            let row = dx.row(off + pos);
            let mut te = g.tok_embed.row_mut(tok);
            te += &row;
            let mut pe = g.pos_embed.row_mut(pos);
            pe += &row;
        }
    }

    (loss, count, g)
}
