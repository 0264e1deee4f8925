//! Probability-space ensembles of differently-seeded classifiers and
//! temperature annealing of their output.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{ClassifierModel, Example, TaskMeta};
use crate::distill::{train_baseline, TrainConfig, TrainOutcome};
use crate::error::{Error, Result};
use crate::search::{ActionDistribution, Scorer, Task};

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleModel {
    pub members: Vec<ClassifierModel>,
}

impl EnsembleModel {
    pub fn new(members: Vec<ClassifierModel>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::Config("an ensemble needs at least one member".into()))?;
        for (i, m) in members.iter().enumerate().skip(1) {
            let (a, b) = (&first.header, &m.header);
            if a.task != b.task || a.task_meta != b.task_meta || a.layout != b.layout || a.num_actions != b.num_actions {
                return Err(Error::Invariant(format!(
                    "ensemble member {i} differs from member 0 in task, vocabulary, features or action space"
                )));
            }
        }
        Ok(EnsembleModel { members })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// `q(a|s) = 1/M * sum_m q_m(a|s)`.
    pub fn forward(&self, ex: &Example) -> Result<ActionDistribution> {
        let mut acc: Option<Vec<f64>> = None;
        for m in &self.members {
            let p = m.forward(ex)?;
            match acc.as_mut() {
                None => acc = Some(p.probs),
                Some(a) => {
                    for (x, y) in a.iter_mut().zip(&p.probs) {
                        *x += y;
                    }
                }
            }
        }
        let mut probs = acc.expect("ensemble is nonempty");
        let m = self.members.len() as f64;
        probs.iter_mut().for_each(|p| *p /= m);
        Ok(ActionDistribution::new(probs))
    }

    pub fn load_manifest(path: impl AsRef<Path>) -> Result<(Self, EnsembleManifest)> {
        let manifest = EnsembleManifest::read(&path)?;
        let base = path.as_ref().parent().unwrap_or(Path::new("."));
        let members = manifest
            .members
            .iter()
            .map(|p| ClassifierModel::load(resolve(base, p)))
            .collect::<Result<Vec<_>>>()?;
        Ok((EnsembleModel::new(members)?, manifest))
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Averages member distributions over the legal actions of a state.
pub fn ensemble_forward<T: Task>(ensemble: &EnsembleModel, task: &T, state: &T::State) -> Result<ActionDistribution> {
    ensemble.forward(&task.example(state))
}

impl<T: Task> Scorer<T> for EnsembleModel {
    fn distribution(&self, task: &T, state: &T::State) -> Result<ActionDistribution> {
        ensemble_forward(self, task, state)
    }
}

/// `q(a)^(1/T) / sum_a' q(a')^(1/T)`, computed in log space. Zero entries
/// stay zero.
pub fn anneal(q: &ActionDistribution, temperature: f64) -> Result<ActionDistribution> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
    }
    let logs: Vec<Option<f64>> = q
        .probs
        .iter()
        .map(|&p| (p > 0.0).then(|| p.ln() / temperature))
        .collect();
    let max = logs
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::Invariant("cannot anneal an all-zero distribution".into()));
    }
    let mut probs: Vec<f64> = logs
        .iter()
        .map(|l| l.map_or(0.0, |l| (l - max).exp()))
        .collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    Ok(ActionDistribution::new(probs))
}

/// On-disk description of an ensemble: member model paths (relative to the
/// manifest) and the seeds they were trained with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub m: usize,
    pub base_seed: u64,
    pub seeds: Vec<u64>,
    pub members: Vec<PathBuf>,
}

impl EnsembleManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let s = fs::read_to_string(path)?;
        let m: EnsembleManifest = serde_json::from_str(&s)?;
        if m.m != m.members.len() || m.m != m.seeds.len() || m.m == 0 {
            return Err(Error::Config(format!(
                "ensemble manifest lists {} members and {} seeds but m = {}",
                m.members.len(),
                m.seeds.len(),
                m.m
            )));
        }
        Ok(m)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        fs::write(path, s)?;
        Ok(())
    }
}

/// Member seeds are `base_seed + 1 ..= base_seed + m`.
pub fn member_seeds(base_seed: u64, m: usize) -> Vec<u64> {
    (1..=m as u64).map(|i| base_seed + i).collect()
}

/// Trains `m` baselines with seeds `base_seed + 1 ..= base_seed + m`.
/// Members train in parallel on the current rayon pool.
pub fn train_ensemble<T: TaskMeta>(
    task: &T,
    train: &[(T::Input, T::Gold)],
    dev: &[(T::Input, T::Gold)],
    config: &TrainConfig,
    m: usize,
    base_seed: u64,
) -> Result<(EnsembleModel, Vec<TrainOutcome>)>
where
    T::Input: Sync,
    T::Gold: Sync,
{
    if m == 0 {
        return Err(Error::Config("ensemble size must be at least 1".into()));
    }
    let outcomes = member_seeds(base_seed, m)
        .into_par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut cfg = config.clone();
            cfg.model.seed = s;
            cfg.seed = s;
            train_baseline(task, train, dev, &cfg)
                .map_err(|e| Error::Config(format!("ensemble member {i} (seed {s}) failed: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let members = outcomes.iter().map(|o| o.model.clone()).collect();
    Ok((EnsembleModel::new(members)?, outcomes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{FeatureLayout, ModelConfig};

    fn member(seed: u64) -> ClassifierModel {
        ClassifierModel::new(
            "t",
            serde_json::Value::Null,
            FeatureLayout {
                slot_tables: vec![0],
                table_sizes: vec![3],
            },
            4,
            ModelConfig {
                embed_dim: 2,
                hidden_dim: 3,
                seed,
            },
        )
    }

    fn ex() -> Example {
        Example {
            features: vec![1],
            legal: vec![0, 1, 3],
        }
    }

    #[test]
    fn identical_members_equal_single() {
        let e = EnsembleModel::new(vec![member(1), member(1), member(1)]).unwrap();
        let a = e.forward(&ex()).unwrap();
        let b = member(1).forward(&ex()).unwrap();
        for (x, y) in a.probs.iter().zip(&b.probs) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn mean_of_two() {
        let a = [0.6, 0.4];
        let b = [0.2, 0.8];
        let mean: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x + y) / 2.0).collect();
        assert!((mean[0] - 0.4).abs() < 1e-15 && (mean[1] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn mismatched_members_rejected() {
        let mut other = member(2);
        other.header.num_actions = 5;
        assert!(EnsembleModel::new(vec![member(1), other]).is_err());
        assert!(EnsembleModel::new(vec![]).is_err());
    }

    #[test]
    fn anneal_hand_value() {
        let q = ActionDistribution::new(vec![0.9, 0.1]);
        let a = anneal(&q, 0.5).unwrap();
        assert!((a.probs[0] - 0.81 / 0.82).abs() < 1e-12);
        assert!((a.probs[0] - 0.98780).abs() < 1e-5);
        assert!((a.probs[1] - 0.01220).abs() < 1e-5);
    }

    #[test]
    fn anneal_keeps_zeros_and_uniform() {
        let q = ActionDistribution::new(vec![0.25, 0.0, 0.25, 0.25, 0.25]);
        for t in [0.1, 1.0, 7.0] {
            let a = anneal(&q, t).unwrap();
            assert_eq!(a.probs[1], 0.0);
            for i in [0, 2, 3, 4] {
                assert!((a.probs[i] - 0.25).abs() < 1e-15);
            }
        }
        assert!(anneal(&ActionDistribution::new(vec![0.0, 0.0]), 1.0).is_err());
        assert!(anneal(&q, 0.0).is_err());
    }

    #[test]
    fn tiny_temperature_is_argmax() {
        let q = ActionDistribution::new(vec![0.3, 0.45, 0.25]);
        let a = anneal(&q, 1e-6).unwrap();
        assert_eq!(a.probs[1], 1.0);
    }
}
