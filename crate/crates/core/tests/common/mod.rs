//! Helpers shared by the integration tests and the acceptance target.
#![allow(dead_code)]

use std::collections::BTreeMap;

use aleatoric::data::{Batch, Dataset};
use aleatoric::folds::{make_fold_plan, CacheEntry, ResidualCache};
use aleatoric::losses::{self, LossConfig, LossVariant};
use aleatoric::netcore::{backward, Architecture, BiasInit, MlpModel};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A small network: 1 to 3 hidden layers of width 2 to 16, random biases.
pub fn random_net(rng: &mut ChaCha8Rng, heads: usize) -> MlpModel {
    let input = rng.random_range(1..=4);
    let hidden = rng.random_range(1..=3);
    let mut sizes = vec![input];
    sizes.extend((0..hidden).map(|_| rng.random_range(2..=16)));
    sizes.push(heads);
    let tail = rng.random_range(1..=2);
    Architecture::new(sizes, tail)
        .with_bias_init(BiasInit::FanIn)
        .build(rng.random())
        .unwrap()
}

pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, input_dim: usize) -> Dataset {
    let inputs = Array2::from_shape_fn((n, input_dim), |_| rng.sample(StandardNormal));
    let targets = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Dataset::new(inputs, targets).unwrap()
}

/// A cache holding arbitrary non-negative values, enough for the loss.
pub fn cache_with(ids: &[usize], values: &[f64]) -> ResidualCache {
    let plan = make_fold_plan(ids.len(), 2, 0).unwrap();
    let entries: BTreeMap<usize, CacheEntry> = ids
        .iter()
        .zip(values)
        .enumerate()
        .map(|(pos, (&id, &r_tilde))| {
            (
                id,
                CacheEntry {
                    r_tilde,
                    fold: plan.assignment[pos],
                },
            )
        })
        .collect();
    ResidualCache {
        ids: ids.to_vec(),
        entries,
        plan,
        architecture: Architecture::new(vec![1, 1], 1),
        fingerprint: String::new(),
        folds: Vec::new(),
    }
}

/// Batch-mean loss computed from the scalar loss functions, with no
/// derivative code involved. For `SeparateNoVr` the residual in the
/// certainty term is `frozen`, as the gradient treats it as a constant.
pub fn reference_loss(
    model: &MlpModel,
    batch: &Batch,
    cfg: &LossConfig,
    cache: Option<&ResidualCache>,
    frozen: Option<&[f64]>,
) -> f64 {
    let out = model.forward_batch(batch.inputs.view()).unwrap();
    let n = batch.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (y, t) = (out[[i, 0]], batch.targets[i]);
            match cfg.variant {
                LossVariant::L1Only => (y - t).abs(),
                LossVariant::JointGaussian => losses::loss_joint_gaussian(y, out[[i, 1]], t).unwrap(),
                LossVariant::JointLaplace => {
                    losses::loss_joint_laplace(y, out[[i, 1]], t, cfg.clamp_c).unwrap()
                }
                LossVariant::SeparateLaplace => {
                    let r = cache.unwrap().residual(batch.ids[i]).unwrap();
                    losses::loss_separate(y, out[[i, 1]], t, r, cfg.lambda, cfg.clamp_c).unwrap()
                }
                LossVariant::SeparateNoVr => {
                    let r = frozen.unwrap()[i];
                    losses::loss_separate(y, out[[i, 1]], t, r, cfg.lambda, cfg.clamp_c).unwrap()
                }
            }
        })
        .sum();
    total / n as f64
}

/// Largest relative gap between analytic and central-difference gradients.
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-6)`; the floor keeps
/// parameters with a vanishing gradient from dividing by zero.
pub fn max_fd_error(
    model: &MlpModel,
    batch: &Batch,
    cfg: &LossConfig,
    cache: Option<&ResidualCache>,
    eps: f64,
) -> f64 {
    let analytic = backward(model, batch, cfg, cache).unwrap().grads.flat();
    let frozen: Vec<f64> = {
        let out = model.forward_batch(batch.inputs.view()).unwrap();
        (0..batch.len()).map(|i| (out[[i, 0]] - batch.targets[i]).abs()).collect()
    };
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for (k, &a) in analytic.iter().enumerate() {
        let p = model.param(k);
        probe.set_param(k, p + eps);
        let plus = reference_loss(&probe, batch, cfg, cache, Some(&frozen));
        probe.set_param(k, p - eps);
        let minus = reference_loss(&probe, batch, cfg, cache, Some(&frozen));
        probe.set_param(k, p);
        let numeric = (plus - minus) / (2.0 * eps);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

/// Loss configuration used for gradient checks of `variant`.
pub fn check_config(variant: LossVariant) -> LossConfig {
    LossConfig::new(variant).with_lambda(0.3)
}

/// Train fold models while recording every id each one sees. Returns the
/// number of (fold, id) sightings where `id` belongs to that fold, and the
/// total number of sightings.
pub fn fold_leaks(
    data: &Dataset,
    plan: &aleatoric::folds::FoldPlan,
    cfg: &aleatoric::netcore::TrainConfig,
    arch: &Architecture,
) -> (usize, usize) {
    use std::sync::Mutex;
    let seen: Mutex<Vec<(usize, usize)>> = Mutex::new(Vec::new());
    aleatoric::folds::compute_virtual_residuals_observed(data, plan, cfg, arch, None, &|fold, ev| {
        seen.lock().unwrap().extend(ev.ids.iter().map(|&id| (fold, id)));
    })
    .unwrap();
    let seen = seen.into_inner().unwrap();
    let position: std::collections::HashMap<usize, usize> =
        data.ids().iter().enumerate().map(|(p, &id)| (id, p)).collect();
    let leaks = seen
        .iter()
        .filter(|(fold, id)| plan.assignment[position[id]] == *fold)
        .count();
    (leaks, seen.len())
}
