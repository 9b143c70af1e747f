use ndarray::{Array1, Array2};
use num_traits::{Float, FromPrimitive, NumAssign};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;

/// Floating-point element type the model can run in (f32 for training and
/// evaluation, f64 for gradient checking).
pub trait Scalar:
    ndarray::LinalgScalar + ndarray::ScalarOperand + Float + NumAssign + FromPrimitive + std::fmt::Debug + Send + Sync + 'static
{
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable constant")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<F> {
    pub ln1_gain: Array1<F>,
    pub ln1_bias: Array1<F>,
    pub qkv: Array2<F>,
    pub attn_out: Array2<F>,
    pub ln2_gain: Array1<F>,
    pub ln2_bias: Array1<F>,
    pub up: Array2<F>,
    pub up_bias: Array1<F>,
    pub down: Array2<F>,
    pub down_bias: Array1<F>,
}

/// All trainable tensors of the transformer.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<F> {
    pub tok_embed: Array2<F>,
    pub pos_embed: Array2<F>,
    pub blocks: Vec<BlockParams<F>>,
    pub final_gain: Array1<F>,
    pub final_bias: Array1<F>,
    /// `None` when the unembedding is tied to `tok_embed`.
    pub unembed: Option<Array2<F>>,
}

impl<F: Scalar> Params<F> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (d, ff) = (cfg.d_model, cfg.d_ff);
        let block = || BlockParams {
            ln1_gain: Array1::zeros(d),
            ln1_bias: Array1::zeros(d),
            qkv: Array2::zeros((d, 3 * d)),
            attn_out: Array2::zeros((d, d)),
            ln2_gain: Array1::zeros(d),
            ln2_bias: Array1::zeros(d),
            up: Array2::zeros((d, ff)),
            up_bias: Array1::zeros(ff),
            down: Array2::zeros((ff, d)),
            down_bias: Array1::zeros(d),
        };
        Self {
            tok_embed: Array2::zeros((cfg.vocab_size, d)),
            pos_embed: Array2::zeros((cfg.max_seq_len, d)),
            blocks: (0..cfg.n_layers).map(|_| block()).collect(),
            final_gain: Array1::zeros(d),
            final_bias: Array1::zeros(d),
            unembed: (!cfg.tied_unembedding).then(|| Array2::zeros((d, cfg.vocab_size))),
        }
    }

    /// Seeded initialisation: N(0, 0.02) weights, residual projections scaled
    /// by 1/sqrt(2L), unit norm gains, zero biases.
    pub fn init(cfg: &ModelConfig) -> Self {
        let mut p = Self::zeros(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let std = 0.02;
        let resid_std = std / (2.0 * cfg.n_layers as f64).sqrt();
        let mut fill = |a: &mut [F], s: f64| {
            let normal = Normal::new(0.0, s).expect("valid std");
            for v in a.iter_mut() {
                *v = F::of(normal.sample(&mut rng));
            }
        };
        fill(p.tok_embed.as_slice_mut().unwrap(), std);
        fill(p.pos_embed.as_slice_mut().unwrap(), std);
        for b in &mut p.blocks {
            b.ln1_gain.fill(F::one());
            b.ln2_gain.fill(F::one());
            fill(b.qkv.as_slice_mut().unwrap(), std);
            fill(b.attn_out.as_slice_mut().unwrap(), resid_std);
            fill(b.up.as_slice_mut().unwrap(), std);
            fill(b.down.as_slice_mut().unwrap(), resid_std);
        }
        p.final_gain.fill(F::one());
        if let Some(u) = p.unembed.as_mut() {
            fill(u.as_slice_mut().unwrap(), std);
        }
        p
    }

    /// Flat views of every tensor in the canonical order of
    /// [`ModelConfig::tensor_shapes`].
    pub fn tensors(&self) -> Vec<&[F]> {
        let mut out: Vec<&[F]> = vec![
            self.tok_embed.as_slice().unwrap(),
            self.pos_embed.as_slice().unwrap(),
        ];
        for b in &self.blocks {
            out.extend([
                b.ln1_gain.as_slice().unwrap(),
                b.ln1_bias.as_slice().unwrap(),
                b.qkv.as_slice().unwrap(),
                b.attn_out.as_slice().unwrap(),
                b.ln2_gain.as_slice().unwrap(),
                b.ln2_bias.as_slice().unwrap(),
                b.up.as_slice().unwrap(),
                b.up_bias.as_slice().unwrap(),
                b.down.as_slice().unwrap(),
                b.down_bias.as_slice().unwrap(),
            ]);
        }
        out.push(self.final_gain.as_slice().unwrap());
        out.push(self.final_bias.as_slice().unwrap());
        if let Some(u) = &self.unembed {
            out.push(u.as_slice().unwrap());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        let mut out: Vec<&mut [F]> = vec![
            self.tok_embed.as_slice_mut().unwrap(),
            self.pos_embed.as_slice_mut().unwrap(),
        ];
        for b in &mut self.blocks {
            out.extend([
                b.ln1_gain.as_slice_mut().unwrap(),
                b.ln1_bias.as_slice_mut().unwrap(),
                b.qkv.as_slice_mut().unwrap(),
                b.attn_out.as_slice_mut().unwrap(),
                b.ln2_gain.as_slice_mut().unwrap(),
                b.ln2_bias.as_slice_mut().unwrap(),
                b.up.as_slice_mut().unwrap(),
                b.up_bias.as_slice_mut().unwrap(),
                b.down.as_slice_mut().unwrap(),
                b.down_bias.as_slice_mut().unwrap(),
            ]);
        }
        out.push(self.final_gain.as_slice_mut().unwrap());
        out.push(self.final_bias.as_slice_mut().unwrap());
        if let Some(u) = self.unembed.as_mut() {
            out.push(u.as_slice_mut().unwrap());
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(F::zero());
        }
    }

    /// Element-wise conversion into another precision.
    pub fn cast<G: Scalar>(&self, cfg: &ModelConfig) -> Params<G> {
        let mut out = Params::<G>::zeros(cfg);
        for (dst, src) in out.tensors_mut().into_iter().zip(self.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = G::from_f64(s.to_f64().unwrap()).unwrap();
            }
        }
        out
    }

    /// The matrix mapping final-normed activations to logits, as (d_model, vocab).
    pub fn unembed_matrix(&self) -> ndarray::ArrayView2<'_, F> {
        match &self.unembed {
            Some(u) => u.view(),
            None => self.tok_embed.t(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            vocab_size: 11,
            max_seq_len: 7,
            seed: 3,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn tensor_order_matches_config_shapes() {
        let cfg = tiny();
        let p = Params::<f32>::init(&cfg);
        let shapes = cfg.tensor_shapes();
        let tensors = p.tensors();
        assert_eq!(shapes.len(), tensors.len());
        for ((name, shape), t) in shapes.iter().zip(tensors) {
            assert_eq!(shape.iter().product::<usize>(), t.len(), "{name}");
        }
        assert_eq!(p.n_params(), cfg.n_params());
    }

    #[test]
    fn init_is_seeded() {
        let cfg = tiny();
        assert_eq!(Params::<f32>::init(&cfg), Params::<f32>::init(&cfg));
        let other = ModelConfig { seed: 4, ..cfg.clone() };
        assert_ne!(Params::<f32>::init(&cfg), Params::<f32>::init(&other));
    }
}
