//! Out-of-fold ("virtual") residuals.
//!
//! The training set is partitioned into `m` folds. For each fold a
//! signal-only model is trained on the other `m - 1` folds and evaluated on
//! the held-out one; the absolute errors it makes there become the virtual
//! residuals used as constant targets for the certainty head. Fold models are
//! dropped once their residuals are recorded.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{LossConfig, LossVariant};
use crate::netcore::{self, Architecture, BatchEvent, BiasInit, TrainConfig};
use crate::rng::{self, stream};

/// Balanced random assignment of dataset positions to folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub m: usize,
    pub seed: u64,
    /// Fold id of each position in the training set.
    pub assignment: Vec<usize>,
}

impl FoldPlan {
    pub fn n(&self) -> usize {
        self.assignment.len()
    }

    /// Positions belonging to fold `j`, in ascending order.
    pub fn members(&self, j: usize) -> Vec<usize> {
        (0..self.n()).filter(|&p| self.assignment[p] == j).collect()
    }

    /// Positions outside fold `j`, in ascending order.
    pub fn complement(&self, j: usize) -> Vec<usize> {
        (0..self.n()).filter(|&p| self.assignment[p] != j).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.m];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Shuffle `0..n` and deal positions round-robin into `m` folds, so the
/// first `n mod m` folds hold one extra sample.
pub fn make_fold_plan(n: usize, m: usize, seed: u64) -> Result<FoldPlan> {
    if m < 2 || m > n {
        return Err(Error::Config(format!(
            "fold count must satisfy 2 <= m <= n, got m = {m}, n = {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream_rng(seed, stream::FOLD_PLAN));
    let mut assignment = vec![0; n];
    for (rank, &pos) in order.iter().enumerate() {
        assignment[pos] = rank % m;
    }
    Ok(FoldPlan {
        m,
        seed,
        assignment,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub r_tilde: f64,
    pub fold: usize,
}

/// What each fold model left behind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub fold: usize,
    pub train_size: usize,
    pub epochs_run: usize,
    /// Digest of the fold model's checkpoint.
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualCache {
    /// Training-set sample ids, in plan position order.
    pub ids: Vec<usize>,
    pub entries: BTreeMap<usize, CacheEntry>,
    pub plan: FoldPlan,
    pub architecture: Architecture,
    pub fingerprint: String,
    pub folds: Vec<FoldRecord>,
}

impl ResidualCache {
    pub fn residual(&self, id: usize) -> Result<f64> {
        self.entries
            .get(&id)
            .map(|e| e.r_tilde)
            .ok_or(Error::CacheMiss(id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn mean_residual(&self) -> f64 {
        self.entries.values().map(|e| e.r_tilde).sum::<f64>() / self.len() as f64
    }

    /// Completeness, non-negativity, and agreement of every entry with the plan.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::CacheIntegrity(msg));
        if self.ids.len() != self.plan.n() {
            return fail(format!(
                "plan covers {} samples but cache lists {}",
                self.plan.n(),
                self.ids.len()
            ));
        }
        if self.entries.len() != self.ids.len() {
            return fail(format!(
                "{} entries for {} samples",
                self.entries.len(),
                self.ids.len()
            ));
        }
        for (pos, id) in self.ids.iter().enumerate() {
            let Some(e) = self.entries.get(id) else {
                return fail(format!("no entry for sample {id}"));
            };
            if !(e.r_tilde.is_finite() && e.r_tilde >= 0.0) {
                return fail(format!("sample {id} has invalid residual {}", e.r_tilde));
            }
            if e.fold != self.plan.assignment[pos] {
                return fail(format!(
                    "sample {id} recorded in fold {} but planned for fold {}",
                    e.fold, self.plan.assignment[pos]
                ));
            }
        }
        Ok(())
    }

    /// Refuse a cache built for a different experiment.
    pub fn verify_fingerprint(&self, expected: &str) -> Result<()> {
        if self.fingerprint != expected {
            return Err(Error::StaleCache {
                expected: expected.to_owned(),
                found: self.fingerprint.clone(),
            });
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# aleatoric residual cache v1\n");
        writeln!(out, "n = {}", self.plan.n()).unwrap();
        writeln!(out, "m = {}", self.plan.m).unwrap();
        writeln!(out, "seed = {}", self.plan.seed).unwrap();
        writeln!(out, "fingerprint = {}", self.fingerprint).unwrap();
        let sizes: Vec<String> = self
            .architecture
            .layer_sizes
            .iter()
            .map(|n| n.to_string())
            .collect();
        writeln!(out, "architecture = {}", sizes.join(",")).unwrap();
        writeln!(out, "linear_tail = {}", self.architecture.linear_tail).unwrap();
        let bias = serde_json::to_string(&self.architecture.bias_init).expect("unit enum");
        writeln!(out, "bias_init = {}", bias.trim_matches('"')).unwrap();
        for f in &self.folds {
            writeln!(
                out,
                "fold.{} = train_size {} epochs {} checksum {}",
                f.fold, f.train_size, f.epochs_run, f.checksum
            )
            .unwrap();
        }
        out.push_str("index,fold,r_tilde\n");
        for id in &self.ids {
            let e = &self.entries[id];
            writeln!(out, "{id},{},{:?}", e.fold, e.r_tilde).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: String| {
            Error::CacheIntegrity(format!("line {line}: {msg}"))
        };
        let mut header: BTreeMap<String, String> = BTreeMap::new();
        let mut folds = Vec::new();
        let mut ids = Vec::new();
        let mut entries = BTreeMap::new();
        let mut assignment = Vec::new();
        let mut in_records = false;
        for (k, line) in text.lines().enumerate() {
            let lineno = k + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !in_records {
                if line == "index,fold,r_tilde" {
                    in_records = true;
                    continue;
                }
                let (key, value) = line
                    .split_once('=')
                    .ok_or_else(|| bad(lineno, "expected `key = value`".into()))?;
                let (key, value) = (key.trim(), value.trim());
                if let Some(j) = key.strip_prefix("fold.") {
                    let fold: usize = j.parse().map_err(|_| bad(lineno, format!("bad fold `{j}`")))?;
                    let parts: Vec<&str> = value.split_whitespace().collect();
                    let [_, size, _, epochs, _, checksum] = parts[..] else {
                        return Err(bad(lineno, "malformed fold record".into()));
                    };
                    folds.push(FoldRecord {
                        fold,
                        train_size: size.parse().map_err(|_| bad(lineno, "bad train_size".into()))?,
                        epochs_run: epochs.parse().map_err(|_| bad(lineno, "bad epochs".into()))?,
                        checksum: checksum.to_owned(),
                    });
                } else {
                    header.insert(key.to_owned(), value.to_owned());
                }
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let [id, fold, r] = fields[..] else {
                return Err(bad(lineno, "expected `index,fold,r_tilde`".into()));
            };
            let id: usize = id.parse().map_err(|_| bad(lineno, format!("bad index `{id}`")))?;
            let fold: usize = fold.parse().map_err(|_| bad(lineno, format!("bad fold `{fold}`")))?;
            let r_tilde: f64 = r.parse().map_err(|_| bad(lineno, format!("bad residual `{r}`")))?;
            if entries.insert(id, CacheEntry { r_tilde, fold }).is_some() {
                return Err(bad(lineno, format!("duplicate index {id}")));
            }
            ids.push(id);
            assignment.push(fold);
        }
        let get = |key: &str| {
            header
                .get(key)
                .ok_or_else(|| Error::CacheIntegrity(format!("header is missing `{key}`")))
        };
        let num = |key: &str| -> Result<u64> {
            get(key)?
                .parse()
                .map_err(|_| Error::CacheIntegrity(format!("header `{key}` is not an integer")))
        };
        let n = num("n")? as usize;
        let m = num("m")? as usize;
        let seed = num("seed")?;
        let layer_sizes = get("architecture")?
            .split(',')
            .map(|t| t.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::CacheIntegrity("bad architecture".into()))?;
        // Caches written before the bias setting existed used zero biases.
        let bias_init = match header.get("bias_init") {
            Some(v) => serde_json::from_str(&format!("\"{v}\""))
                .map_err(|_| Error::CacheIntegrity(format!("unknown bias_init `{v}`")))?,
            None => BiasInit::Zero,
        };
        let architecture = Architecture::new(layer_sizes, num("linear_tail")? as usize)
            .with_bias_init(bias_init);
        if ids.len() != n {
            return Err(Error::CacheIntegrity(format!(
                "header declares {n} samples but {} records are present",
                ids.len()
            )));
        }
        if assignment.iter().any(|&f| f >= m) {
            return Err(Error::CacheIntegrity(format!("fold id out of range for m = {m}")));
        }
        let expected_plan = make_fold_plan(n, m, seed)
            .map_err(|e| Error::CacheIntegrity(format!("header describes no valid plan: {e}")))?;
        if expected_plan.assignment != assignment {
            return Err(Error::CacheIntegrity(
                "fold assignment does not match the recorded seed".into(),
            ));
        }
        let cache = ResidualCache {
            ids,
            entries,
            plan: expected_plan,
            architecture,
            fingerprint: get("fingerprint")?.clone(),
            folds,
        };
        cache.validate()?;
        Ok(cache)
    }
}

pub fn save_cache(cache: &ResidualCache, path: impl AsRef<Path>) -> Result<()> {
    cache.validate()?;
    let path = path.as_ref();
    std::fs::write(path, cache.to_text()).map_err(|e| Error::io(path, e))
}

pub fn load_cache(path: impl AsRef<Path>) -> Result<ResidualCache> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ResidualCache::from_text(&text)
}

/// Identity of a residual pipeline run: fold training config, model
/// architecture, fold plan and the training data itself.
///
/// `architecture` is the main model's, as passed to
/// [`compute_virtual_residuals`]; only its single-head form is hashed.
pub fn cache_fingerprint(
    data: &Dataset,
    plan: &FoldPlan,
    cfg: &TrainConfig,
    architecture: &Architecture,
) -> String {
    let architecture = architecture.with_heads(1);
    let mut text = serde_json::to_string(cfg).expect("serializable");
    write!(text, "|{architecture}|m{}|s{}|", plan.m, plan.seed).unwrap();
    for (id, y) in data.ids().iter().zip(data.targets()) {
        write!(text, "{id}:{:x};", y.to_bits()).unwrap();
    }
    for v in data.inputs() {
        write!(text, "{:x};", v.to_bits()).unwrap();
    }
    format!("{:016x}", netcore::fnv1a(text.as_bytes()))
}

/// Seed of fold `j`'s model, derived from the fold training seed.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    rng::derive_seed(seed, stream::FOLD_MODEL.wrapping_add(fold as u64))
}

/// A trained fold model and the entries it produced, keyed by sample id.
type FoldOutput = (FoldRecord, Vec<(usize, CacheEntry)>);

/// Train one signal-only model per fold and record out-of-fold residuals.
///
/// `architecture` is the main model's; its head count is replaced by one.
pub fn compute_virtual_residuals(
    data: &Dataset,
    plan: &FoldPlan,
    fold_train_cfg: &TrainConfig,
    architecture: &Architecture,
    validation: Option<&Dataset>,
) -> Result<ResidualCache> {
    compute_virtual_residuals_observed(data, plan, fold_train_cfg, architecture, validation, &|_, _| {})
}

/// As [`compute_virtual_residuals`], reporting every minibatch each fold
/// model trains on to `observer(fold, event)`.
pub fn compute_virtual_residuals_observed(
    data: &Dataset,
    plan: &FoldPlan,
    fold_train_cfg: &TrainConfig,
    architecture: &Architecture,
    validation: Option<&Dataset>,
    observer: &(dyn Fn(usize, &BatchEvent<'_>) + Sync),
) -> Result<ResidualCache> {
    if plan.n() != data.len() {
        return Err(Error::Config(format!(
            "fold plan covers {} samples, dataset has {}",
            plan.n(),
            data.len()
        )));
    }
    let fold_arch = architecture.with_heads(1);
    let l1 = LossConfig::new(LossVariant::L1Only);

    let per_fold: Vec<Result<FoldOutput>> = (0..plan.m)
        .into_par_iter()
        .map(|j| {
            let seed = fold_seed(fold_train_cfg.seed, j);
            let cfg = TrainConfig {
                seed,
                ..*fold_train_cfg
            };
            let train_set = data.subset(&plan.complement(j));
            let held_out = data.subset(&plan.members(j));
            let model = fold_arch.build(seed)?;
            let trained = netcore::train_observed(
                model,
                &train_set,
                &cfg,
                &l1,
                None,
                validation,
                &mut |ev| observer(j, ev),
            )?;
            let pred = netcore::predict(&trained.model, &held_out)?;
            let mut out = Vec::with_capacity(held_out.len());
            for ((&id, y), t) in held_out.ids().iter().zip(&pred.y).zip(held_out.targets()) {
                let r_tilde = (y - t).abs();
                if !r_tilde.is_finite() {
                    return Err(Error::Pipeline {
                        index: id,
                        fold: j,
                        value: r_tilde,
                    });
                }
                out.push((id, CacheEntry { r_tilde, fold: j }));
            }
            let record = FoldRecord {
                fold: j,
                train_size: train_set.len(),
                epochs_run: trained.log.epochs.len(),
                checksum: format!(
                    "{:016x}",
                    netcore::fnv1a(trained.model.to_checkpoint().as_bytes())
                ),
            };
            Ok((record, out))
        })
        .collect();

    let mut entries = BTreeMap::new();
    let mut folds = Vec::with_capacity(plan.m);
    for result in per_fold {
        let (record, fold_entries) = result?;
        folds.push(record);
        entries.extend(fold_entries);
    }
    let cache = ResidualCache {
        ids: data.ids().to_vec(),
        entries,
        plan: plan.clone(),
        architecture: fold_arch.clone(),
        fingerprint: cache_fingerprint(data, plan, fold_train_cfg, &fold_arch),
        folds,
    };
    cache.validate()?;
    Ok(cache)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_sizes_are_balanced() {
        let plan = make_fold_plan(128, 10, 5).unwrap();
        let sizes = plan.fold_sizes();
        assert_eq!(sizes, vec![13, 13, 13, 13, 13, 13, 13, 13, 12, 12]);
        assert_eq!(plan, make_fold_plan(128, 10, 5).unwrap());
        assert_ne!(plan, make_fold_plan(128, 10, 6).unwrap());

        let singletons = make_fold_plan(4, 4, 0).unwrap();
        assert_eq!(singletons.fold_sizes(), vec![1; 4]);
    }

    #[test]
    fn plan_rejects_bad_fold_counts() {
        assert!(matches!(make_fold_plan(5, 1, 0), Err(Error::Config(_))));
        assert!(matches!(make_fold_plan(5, 6, 0), Err(Error::Config(_))));
    }

    fn tiny_cache() -> ResidualCache {
        let plan = make_fold_plan(6, 3, 9).unwrap();
        let ids: Vec<usize> = (100..106).collect();
        let entries = ids
            .iter()
            .enumerate()
            .map(|(p, &id)| {
                (
                    id,
                    CacheEntry {
                        r_tilde: 0.1 * p as f64 + 1.0 / 3.0,
                        fold: plan.assignment[p],
                    },
                )
            })
            .collect();
        ResidualCache {
            ids,
            entries,
            plan,
            architecture: Architecture::new(vec![1, 4, 1], 1),
            fingerprint: "00ff".into(),
            folds: vec![FoldRecord {
                fold: 0,
                train_size: 4,
                epochs_run: 3,
                checksum: "abc".into(),
            }],
        }
    }

    #[test]
    fn text_round_trip() {
        let cache = tiny_cache();
        let back = ResidualCache::from_text(&cache.to_text()).unwrap();
        assert_eq!(back, cache);
    }

    #[test]
    fn load_rejects_missing_and_negative_entries() {
        let text = tiny_cache().to_text();
        let missing: String = text
            .lines()
            .filter(|l| !l.starts_with("103,"))
            .map(|l| format!("{l}\n"))
            .collect();
        assert!(matches!(
            ResidualCache::from_text(&missing),
            Err(Error::CacheIntegrity(_))
        ));

        let mut cache = tiny_cache();
        cache.entries.get_mut(&102).unwrap().r_tilde = -0.5;
        assert!(matches!(
            ResidualCache::from_text(&cache.to_text()),
            Err(Error::CacheIntegrity(_))
        ));
    }

    #[test]
    fn fingerprint_mismatch_is_stale() {
        let cache = tiny_cache();
        assert!(cache.verify_fingerprint("00ff").is_ok());
        assert!(matches!(
            cache.verify_fingerprint("beef"),
            Err(Error::StaleCache { .. })
        ));
        assert!(matches!(cache.residual(7), Err(Error::CacheMiss(7))));
    }
}
