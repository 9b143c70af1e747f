use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::backward::{loss, loss_and_grad, LossExample};
use super::config::ModelConfig;
use super::params::Params;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
}

/// Compares reverse-mode gradients against fourth-order central differences in
/// double precision on `n_checked` randomly chosen parameters of the seeded
/// initialisation of `config`.
pub fn gradient_check(
    config: &ModelConfig,
    batch: &[LossExample<'_>],
    n_checked: usize,
    step: f64,
    seed: u64,
) -> GradCheckReport {
    let params = Params::<f64>::init(config);
    gradient_check_at(config, &params, batch, n_checked, step, seed)
}

pub(crate) fn gradient_check_at(
    config: &ModelConfig,
    params: &Params<f64>,
    batch: &[LossExample<'_>],
    n_checked: usize,
    step: f64,
    seed: u64,
) -> GradCheckReport {
    let (_, _, grads) = loss_and_grad(config, params, batch);
    let flat_grads: Vec<f64> = grads.tensors().iter().flat_map(|t| t.iter().copied()).collect();
    let total = flat_grads.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, total, n_checked.min(total));

    let mut work = params.clone();
    let mut max_err = 0.0f64;
    for idx in picks.iter() {
        let original = get(&work, idx);
        let mut at = |offset: f64| {
            set(&mut work, idx, original + offset);
            loss(config, &work, batch).0
        };
        let (p2, p1, m1, m2) = (at(2.0 * step), at(step), at(-step), at(-2.0 * step));
        set(&mut work, idx, original);
        let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * step);
        let analytic = flat_grads[idx];
        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        max_err = max_err.max((analytic - numeric).abs() / denom);
    }
    GradCheckReport {
        max_relative_error: max_err,
        checked: picks.len(),
    }
}

fn locate(p: &Params<f64>, mut idx: usize) -> (usize, usize) {
    for (ti, t) in p.tensors().iter().enumerate() {
        if idx < t.len() {
            return (ti, idx);
        }
        idx -= t.len();
    }
    panic!("parameter index out of range");
}

fn get(p: &Params<f64>, idx: usize) -> f64 {
    let (t, i) = locate(p, idx);
    p.tensors()[t][i]
}

fn set(p: &mut Params<f64>, idx: usize, value: f64) {
    let (t, i) = locate(p, idx);
    p.tensors_mut()[t][i] = value;
}
