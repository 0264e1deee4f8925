//! Training loops: the reference-policy baseline and the three distillation
//! regimes (from reference, from exploration, from both).
//!
//! All regimes share one trainer. Each epoch assembles a record stream,
//! shuffles it with a seed derived from `(seed, epoch)`, runs one SGD step
//! per record and evaluates greedy decoding on the dev set. The returned
//! model is the one from the best dev epoch.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{ClassifierModel, Example, LossConfig, ModelConfig, Target, TaskMeta};
use crate::ensemble::EnsembleModel;
use crate::error::{Error, Result};
use crate::search::{evaluate, rollout_exploration, rollout_reference, ActionDistribution, ActionId, Origin, Policy};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub lr: f64,
    pub clip: f64,
    pub max_epochs: usize,
    /// Stop after this many epochs without a dev improvement.
    pub patience: usize,
    /// Halve the learning rate after every epoch that does not improve dev.
    pub halve_on_stall: bool,
    /// Seed for shuffling and exploration.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            lr: 0.1,
            clip: 5.0,
            max_epochs: 20,
            patience: 5,
            halve_on_stall: true,
            seed: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Reference,
    Exploration,
    Both,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Reference => "reference",
            Regime::Exploration => "exploration",
            Regime::Both => "both",
        })
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reference" => Ok(Regime::Reference),
            "exploration" => Ok(Regime::Exploration),
            "both" => Ok(Regime::Both),
            _ => Err(Error::Config(format!("unknown regime `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub regime: Regime,
    pub alpha: f64,
    pub temperature: f64,
    pub top_k: usize,
    /// Reference passes and exploration passes per epoch. Only consulted
    /// for [`Regime::Both`].
    pub mix: (usize, usize),
    pub resample_every_epoch: bool,
}

impl DistillConfig {
    pub fn new(regime: Regime, alpha: f64, temperature: f64, top_k: usize) -> Self {
        DistillConfig {
            regime,
            alpha,
            temperature,
            top_k,
            mix: (1, 1),
            resample_every_epoch: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        LossConfig {
            alpha: self.alpha,
            top_k: self.top_k,
        }
        .validate()?;
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.regime == Regime::Both && self.mix == (0, 0) {
            return Err(Error::Config("mix ratio 0:0 yields no training states".into()));
        }
        Ok(())
    }

    /// (reference passes, exploration passes) for this regime.
    pub fn passes(&self) -> (usize, usize) {
        match self.regime {
            Regime::Reference => (1, 0),
            Regime::Exploration => (0, 1),
            Regime::Both => self.mix,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_metric: f64,
    pub lr: f64,
    pub states: usize,
}

/// Counts of loss evaluations by record origin and loss kind.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LossAudit {
    pub reference_nll: usize,
    pub reference_interpolated: usize,
    pub exploration_kd: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: ClassifierModel,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_dev: f64,
    pub audit: LossAudit,
    /// Exploration trajectories that hit the step cap.
    pub truncated: usize,
}

impl TrainOutcome {
    /// Tab-separated training log: `epoch  train_loss  dev_metric  lr  states`.
    pub fn log_tsv(&self) -> String {
        let mut s = String::from("epoch\ttrain_loss\tdev_metric\tlr\tstates\n");
        for e in &self.log {
            s.push_str(&format!(
                "{}\t{:.6}\t{:.4}\t{}\t{}\n",
                e.epoch, e.train_loss, e.dev_metric, e.lr, e.states
            ));
        }
        s
    }
}

enum ItemTarget {
    Nll(ActionId),
    Interpolated(ActionId, ActionDistribution),
    Kd(ActionDistribution),
}

struct Item {
    ex: Example,
    target: ItemTarget,
}

enum Plan<'a> {
    Baseline,
    Distill {
        teacher: &'a EnsembleModel,
        config: &'a DistillConfig,
    },
}

struct Trainer<'a, T: TaskMeta> {
    task: &'a T,
    train: &'a [(T::Input, T::Gold)],
    config: &'a TrainConfig,
    plan: Plan<'a>,
    reference: Vec<Item>,
    exploration: Vec<Item>,
    audit: LossAudit,
    truncated: usize,
}

impl<'a, T: TaskMeta> Trainer<'a, T> {
    fn new(task: &'a T, train: &'a [(T::Input, T::Gold)], config: &'a TrainConfig, plan: Plan<'a>) -> Result<Self> {
        if let Plan::Distill { teacher, config: dc } = &plan {
            dc.validate()?;
            let h = &teacher.members[0].header;
            if h.layout != task.layout() || h.num_actions != task.num_actions() {
                return Err(Error::Config(
                    "teacher and student disagree on features or action space".into(),
                ));
            }
        }
        let mut t = Trainer {
            task,
            train,
            config,
            plan,
            reference: Vec::new(),
            exploration: Vec::new(),
            audit: LossAudit::default(),
            truncated: 0,
        };
        if t.reference_passes() > 0 {
            t.reference = t.reference_items()?;
        }
        Ok(t)
    }

    fn reference_passes(&self) -> usize {
        match &self.plan {
            Plan::Baseline => 1,
            Plan::Distill { config, .. } => config.passes().0,
        }
    }

    fn reference_items(&self) -> Result<Vec<Item>> {
        let per_input = self
            .train
            .par_iter()
            .map(|(x, y)| {
                let recs = rollout_reference(self.task, x, y)?;
                recs.into_iter()
                    .map(|r| {
                        let ex = self.task.example(&r.state);
                        let a = r.reference_action.expect("reference records carry an action");
                        let target = match &self.plan {
                            Plan::Baseline => ItemTarget::Nll(a),
                            Plan::Distill { teacher, .. } => ItemTarget::Interpolated(a, teacher.forward(&ex)?),
                        };
                        Ok(Item { ex, target })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(per_input.into_iter().flatten().collect())
    }

    fn sample_exploration(&mut self, epoch_key: u64) -> Result<()> {
        let Plan::Distill { teacher, config } = &self.plan else {
            return Ok(());
        };
        let passes = config.passes().1;
        let policy = Policy::sample(*teacher, config.temperature);
        let mut items = Vec::new();
        let mut truncated = 0;
        for pass in 0..passes as u64 {
            let batches = self
                .train
                .par_iter()
                .enumerate()
                .map(|(i, (x, _))| {
                    let s = seed::derive(self.config.seed, seed::STREAM_EXPLORE, &[epoch_key, pass, i as u64]);
                    let traj = rollout_exploration(self.task, x, &policy, s)?;
                    let items = traj
                        .records
                        .into_iter()
                        .map(|r| {
                            debug_assert_eq!(r.origin, Origin::Exploration);
                            Item {
                                ex: self.task.example(&r.state),
                                target: ItemTarget::Kd(r.soft_target.expect("exploration records carry q")),
                            }
                        })
                        .collect::<Vec<_>>();
                    Ok((items, traj.truncated))
                })
                .collect::<Result<Vec<_>>>()?;
            for (b, t) in batches {
                items.extend(b);
                truncated += t as usize;
            }
        }
        self.exploration = items;
        self.truncated += truncated;
        Ok(())
    }

    fn run_epoch(&mut self, model: &mut ClassifierModel, epoch: usize, lr: f64) -> Result<(f64, usize)> {
        if let Plan::Distill { config, .. } = &self.plan {
            let resample = config.resample_every_epoch;
            if config.passes().1 > 0 && (resample || epoch == 0 || self.exploration.is_empty()) {
                self.sample_exploration(if resample { epoch as u64 } else { 0 })?;
            }
        }
        let (alpha, k) = match &self.plan {
            Plan::Baseline => (0.0, 1),
            Plan::Distill { config, .. } => (config.alpha, config.top_k),
        };
        let ref_passes = self.reference_passes();
        let mut order: Vec<(bool, usize)> = (0..ref_passes)
            .flat_map(|_| (0..self.reference.len()).map(|i| (true, i)))
            .chain((0..self.exploration.len()).map(|i| (false, i)))
            .collect();
        let mut rng = seed::rng(seed::derive(self.config.seed, seed::STREAM_SHUFFLE, &[epoch as u64]));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &(is_ref, i) in &order {
            let item = if is_ref { &self.reference[i] } else { &self.exploration[i] };
            let target = match &item.target {
                ItemTarget::Nll(a) => {
                    self.audit.reference_nll += 1;
                    Target::Hard(*a)
                }
                ItemTarget::Interpolated(a, q) => {
                    self.audit.reference_interpolated += 1;
                    Target::Interpolated {
                        reference: *a,
                        q,
                        alpha,
                        k,
                    }
                }
                ItemTarget::Kd(q) => {
                    self.audit.exploration_kd += 1;
                    Target::Soft { q, k }
                }
            };
            total += model.train_step(&item.ex, target, lr, self.config.clip)?;
        }
        let n = order.len();
        Ok((if n > 0 { total / n as f64 } else { 0.0 }, n))
    }

    fn fit(mut self, dev: &[(T::Input, T::Gold)]) -> Result<TrainOutcome> {
        let cfg = self.config;
        let mut model = ClassifierModel::for_task(self.task, cfg.model);
        let mut lr = cfg.lr;
        let mut log = Vec::new();
        let mut best: Option<(f64, usize, ClassifierModel)> = None;
        let mut stall = 0;
        for epoch in 0..cfg.max_epochs {
            let (loss, states) = self.run_epoch(&mut model, epoch, lr)?;
            let dev_metric = if dev.is_empty() { 0.0 } else { evaluate(self.task, dev, &model)? };
            log::info!("epoch {epoch}: loss {loss:.4} dev {dev_metric:.2} lr {lr} states {states}");
            log.push(EpochLog {
                epoch,
                train_loss: loss,
                dev_metric,
                lr,
                states,
            });
            let improved = match &best {
                None => true,
                Some((b, _, _)) => dev_metric > *b,
            };
            if improved || dev.is_empty() {
                best = Some((dev_metric, epoch, model.clone()));
                stall = 0;
            } else {
                stall += 1;
                if cfg.halve_on_stall {
                    lr /= 2.0;
                }
                if stall >= cfg.patience {
                    break;
                }
            }
        }
        let (best_dev, best_epoch, model) =
            best.ok_or_else(|| Error::Config("max_epochs must be at least 1".into()))?;
        Ok(TrainOutcome {
            model,
            log,
            best_epoch,
            best_dev,
            audit: self.audit,
            truncated: self.truncated,
        })
    }
}

/// Baseline: NLL on reference-policy states.
pub fn train_baseline<T: TaskMeta>(
    task: &T,
    train: &[(T::Input, T::Gold)],
    dev: &[(T::Input, T::Gold)],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    Trainer::new(task, train, config, Plan::Baseline)?.fit(dev)
}

/// Continues baseline training of `model` over the given epoch indices at a
/// fixed learning rate, without dev evaluation. Epoch `e` always uses the
/// same shuffle, so split runs match uninterrupted ones.
pub fn train_baseline_epochs<T: TaskMeta>(
    task: &T,
    train: &[(T::Input, T::Gold)],
    config: &TrainConfig,
    mut model: ClassifierModel,
    epochs: Range<usize>,
) -> Result<ClassifierModel> {
    let mut trainer = Trainer::new(task, train, config, Plan::Baseline)?;
    for epoch in epochs {
        trainer.run_epoch(&mut model, epoch, config.lr)?;
    }
    Ok(model)
}

/// Distils `teacher` into a fresh student under `distill.regime`.
pub fn distill<T: TaskMeta>(
    task: &T,
    teacher: &EnsembleModel,
    train: &[(T::Input, T::Gold)],
    dev: &[(T::Input, T::Gold)],
    config: &TrainConfig,
    distill: &DistillConfig,
) -> Result<TrainOutcome> {
    Trainer::new(task, train, config, Plan::Distill { teacher, config: distill })?.fit(dev)
}

/// Reference states, `alpha * KD + (1 - alpha) * NLL` against the teacher's
/// un-annealed distribution.
pub fn distill_reference<T: TaskMeta>(
    task: &T,
    teacher: &EnsembleModel,
    train: &[(T::Input, T::Gold)],
    dev: &[(T::Input, T::Gold)],
    config: &TrainConfig,
    dc: &DistillConfig,
) -> Result<TrainOutcome> {
    let mut dc = dc.clone();
    dc.regime = Regime::Reference;
    distill(task, teacher, train, dev, config, &dc)
}

/// States sampled from the annealed teacher, pure KD loss. The gold
/// structures of `train` are never consulted.
pub fn distill_exploration<T: TaskMeta>(
    task: &T,
    teacher: &EnsembleModel,
    train: &[(T::Input, T::Gold)],
    dev: &[(T::Input, T::Gold)],
    config: &TrainConfig,
    dc: &DistillConfig,
) -> Result<TrainOutcome> {
    let mut dc = dc.clone();
    dc.regime = Regime::Exploration;
    distill(task, teacher, train, dev, config, &dc)
}

/// Mixed stream: reference records get the interpolated loss, exploration
/// records pure KD.
pub fn distill_both<T: TaskMeta>(
    task: &T,
    teacher: &EnsembleModel,
    train: &[(T::Input, T::Gold)],
    dev: &[(T::Input, T::Gold)],
    config: &TrainConfig,
    dc: &DistillConfig,
) -> Result<TrainOutcome> {
    let mut dc = dc.clone();
    dc.regime = Regime::Both;
    distill(task, teacher, train, dev, config, &dc)
}
