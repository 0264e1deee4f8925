//! Analyses: ranking quality on problematic parser states, seed stability,
//! hyperparameter sweeps and paired-bootstrap significance.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::parser::{dynamic_oracle, EncodedTree, LasStats, ParseInput, ParseTask, ParserState};
use crate::search::{ActionDistribution, ActionId, Policy, Scorer, Task};
use crate::seed;
use crate::transducer::BleuStats;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StateKind {
    /// Gold is still reachable and more than one action keeps it so.
    Ambiguous,
    /// Gold is no longer fully reachable.
    NonOptimal,
}

impl fmt::Display for StateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StateKind::Ambiguous => "ambiguous",
            StateKind::NonOptimal => "non-optimal",
        })
    }
}

#[derive(Clone, Debug)]
pub struct ProblematicStateSample {
    pub state: ParserState,
    pub kind: StateKind,
    /// Dynamic-oracle optimal actions; never empty.
    pub relevant: Vec<ActionId>,
    pub best_loss: usize,
}

/// Classifies a state; `None` for states with a single optimal action and
/// no loss.
pub fn classify_state(task: &ParseTask, s: &ParserState, gold: &EncodedTree) -> Result<Option<ProblematicStateSample>> {
    let set = dynamic_oracle(task, s, gold)?;
    let kind = if set.best_loss > 0 {
        StateKind::NonOptimal
    } else if set.actions.len() >= 2 {
        StateKind::Ambiguous
    } else {
        return Ok(None);
    };
    Ok(Some(ProblematicStateSample {
        state: s.clone(),
        kind,
        relevant: set.actions,
        best_loss: set.best_loss,
    }))
}

/// Samples trajectories from `baseline` at `temperature` over sentences in
/// a seeded random order and keeps problematic states until `count` are
/// collected or a full pass over the data yields nothing new.
pub fn sample_problematic_states<S: Scorer<ParseTask>>(
    task: &ParseTask,
    baseline: &S,
    data: &[(ParseInput, EncodedTree)],
    count: usize,
    seed: u64,
    temperature: f64,
) -> Result<Vec<ProblematicStateSample>> {
    let policy = Policy::sample(baseline, temperature);
    let mut rng = seed::rng(seed::derive(seed, seed::STREAM_SAMPLE_STATES, &[]));
    let mut out = Vec::new();
    if data.is_empty() {
        return Ok(out);
    }
    let mut pass = 0u64;
    while out.len() < count {
        let before = out.len();
        for _ in 0..data.len() {
            let (x, gold) = &data[rng.gen_range(0..data.len())];
            let mut s = task.initial_state(x);
            while !s.is_terminal() && out.len() < count {
                if let Some(sample) = classify_state(task, &s, gold)? {
                    out.push(sample);
                }
                let (a, _) = policy.act(task, &s, &mut rng)?;
                s = task.transition(&s, a)?;
            }
            if out.len() >= count {
                break;
            }
        }
        pass += 1;
        if out.len() == before || pass > 1000 {
            break;
        }
    }
    Ok(out)
}

/// Average precision of the ranking of `legal` by descending probability
/// (ties by ascending id) against `relevant`.
pub fn average_precision(dist: &ActionDistribution, legal: &[ActionId], relevant: &[ActionId]) -> f64 {
    let ranked = dist.top_k(legal, legal.len());
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, a) in ranked.iter().enumerate() {
        if relevant.contains(a) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    if relevant.is_empty() {
        0.0
    } else {
        sum / relevant.len() as f64
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct KindMap {
    pub map: f64,
    pub n_states: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct MapReport {
    pub ambiguous: KindMap,
    pub non_optimal: KindMap,
}

impl MapReport {
    pub fn get(&self, kind: StateKind) -> KindMap {
        match kind {
            StateKind::Ambiguous => self.ambiguous,
            StateKind::NonOptimal => self.non_optimal,
        }
    }
}

/// Mean average precision per state kind. A kind with no samples has MAP 0.
pub fn map_score<S: Scorer<ParseTask>>(
    task: &ParseTask,
    model: &S,
    samples: &[ProblematicStateSample],
) -> Result<MapReport> {
    let aps = samples
        .par_iter()
        .map(|s| {
            if s.relevant.is_empty() {
                return Err(Error::Invariant("problematic state without relevant actions".into()));
            }
            let dist = model.distribution(task, &s.state)?;
            Ok((s.kind, average_precision(&dist, &task.legal_actions(&s.state), &s.relevant)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = MapReport::default();
    for (kind, ap) in aps {
        let k = match kind {
            StateKind::Ambiguous => &mut report.ambiguous,
            StateKind::NonOptimal => &mut report.non_optimal,
        };
        k.map += ap;
        k.n_states += 1;
    }
    for k in [&mut report.ambiguous, &mut report.non_optimal] {
        if k.n_states > 0 {
            k.map /= k.n_states as f64;
        }
    }
    Ok(report)
}

/// CSV rows `system,kind,MAP,n_states`.
pub fn map_csv(rows: &[(String, MapReport)]) -> String {
    let mut s = String::from("system,kind,map,n_states\n");
    for (name, r) in rows {
        for kind in [StateKind::Ambiguous, StateKind::NonOptimal] {
            let k = r.get(kind);
            writeln!(s, "{name},{kind},{:.6},{}", k.map, k.n_states).unwrap();
        }
    }
    s
}

/// Spread of per-seed scores. `std` uses the `n - 1` denominator.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunStats {
    pub scores: Vec<f64>,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
}

impl RunStats {
    pub fn new(scores: &[f64]) -> Result<Self> {
        if scores.len() < 2 {
            return Err(Error::Config(format!(
                "stability needs at least 2 scores, got {}",
                scores.len()
            )));
        }
        let n = scores.len() as f64;
        let mean = scores.iter().sum::<f64>() / n;
        let var = scores.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let std = if scores.iter().all(|&x| x == scores[0]) { 0.0 } else { var.sqrt() };
        Ok(RunStats {
            scores: scores.to_vec(),
            min: scores.iter().copied().fold(f64::INFINITY, f64::min),
            max: scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean,
            std,
        })
    }
}

/// Per-system statistics over `(seed, score)` runs.
pub fn stability_report(systems: &[(String, Vec<(u64, f64)>)]) -> Result<Vec<(String, RunStats)>> {
    systems
        .iter()
        .map(|(name, runs)| {
            let scores: Vec<f64> = runs.iter().map(|r| r.1).collect();
            RunStats::new(&scores)
                .map(|st| (name.clone(), st))
                .map_err(|e| Error::Config(format!("system `{name}`: {e}")))
        })
        .collect()
}

/// Raw per-seed scores, `system,seed,score`.
pub fn stability_scores_csv(systems: &[(String, Vec<(u64, f64)>)]) -> String {
    let mut s = String::from("system,seed,score\n");
    for (name, runs) in systems {
        for (seed, score) in runs {
            writeln!(s, "{name},{seed},{score:.6}").unwrap();
        }
    }
    s
}

pub fn stability_summary_csv(report: &[(String, RunStats)]) -> String {
    let mut s = String::from("system,n,min,max,mean,std\n");
    for (name, st) in report {
        writeln!(
            s,
            "{name},{},{:.6},{:.6},{:.6},{:.6}",
            st.scores.len(),
            st.min,
            st.max,
            st.mean,
            st.std
        )
        .unwrap();
    }
    s
}

/// Per-sentence statistics that add up to a corpus metric.
pub trait CorpusStats: Clone + Default + Send + Sync {
    fn accumulate(&mut self, other: &Self);
    fn corpus_score(&self) -> f64;
}

impl CorpusStats for LasStats {
    fn accumulate(&mut self, other: &Self) {
        self.add(other);
    }
    fn corpus_score(&self) -> f64 {
        self.score()
    }
}

impl CorpusStats for BleuStats {
    fn accumulate(&mut self, other: &Self) {
        self.add(other);
    }
    fn corpus_score(&self) -> f64 {
        self.score()
    }
}

/// One-sided paired bootstrap: the fraction of sentence resamples in which
/// system B scores at least as well as system A, with ties counted as half.
pub fn paired_bootstrap<S: CorpusStats>(a: &[S], b: &[S], resamples: usize, seed: u64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Config(format!(
            "paired bootstrap needs aligned outputs, got {} and {} sentences",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() || resamples == 0 {
        return Err(Error::Config("paired bootstrap needs sentences and resamples".into()));
    }
    let mut rng = seed::rng(seed::derive(seed, seed::STREAM_BOOTSTRAP, &[]));
    let n = a.len();
    let mut at_least = 0.0;
    for _ in 0..resamples {
        let (mut sa, mut sb) = (S::default(), S::default());
        for _ in 0..n {
            let i = rng.gen_range(0..n);
            sa.accumulate(&a[i]);
            sb.accumulate(&b[i]);
        }
        let (xa, xb) = (sa.corpus_score(), sb.corpus_score());
        if xb > xa {
            at_least += 1.0;
        } else if xb == xa {
            at_least += 0.5;
        }
    }
    Ok(at_least / resamples as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParameter {
    Alpha,
    Temperature,
    TopK,
}

impl fmt::Display for SweepParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParameter::Alpha => "alpha",
            SweepParameter::Temperature => "temperature",
            SweepParameter::TopK => "topk",
        })
    }
}

impl FromStr for SweepParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(SweepParameter::Alpha),
            "temperature" => Ok(SweepParameter::Temperature),
            "topk" => Ok(SweepParameter::TopK),
            _ => Err(Error::Config(format!("unknown sweep parameter `{s}`"))),
        }
    }
}

/// Parses `start:end:step` (inclusive) or a comma-separated list.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = |m: &str| Error::Config(format!("invalid grid `{spec}`: {m}"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(&format!("`{s}` is not a number")));
    let parts: Vec<&str> = spec.split(':').collect();
    let grid = match parts.as_slice() {
        [start, end, step] => {
            let (a, b, h) = (num(start)?, num(end)?, num(step)?);
            if !(h > 0.0) || b < a {
                return Err(bad("need start <= end and a positive step"));
            }
            let steps = ((b - a) / h + 1e-9).floor() as usize;
            (0..=steps).map(|i| round_grid(a + i as f64 * h)).collect()
        }
        [_] => spec.split(',').map(num).collect::<Result<Vec<_>>>()?,
        _ => return Err(bad("expected start:end:step or a comma-separated list")),
    };
    if grid.is_empty() {
        return Err(bad("empty grid"));
    }
    Ok(grid)
}

fn round_grid(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}

/// Runs `train` at every grid point (in parallel on the current pool) and
/// returns `(value, dev metric)` rows in grid order.
pub fn sweep<F>(grid: &[f64], train: F) -> Result<Vec<(f64, f64)>>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    if grid.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    grid.par_iter().map(|&v| train(v).map(|m| (v, m))).collect()
}

pub fn sweep_csv(parameter: SweepParameter, rows: &[(f64, f64)]) -> String {
    let mut s = format!("{parameter},dev_metric\n");
    for (v, m) in rows {
        writeln!(s, "{v},{m:.6}").unwrap();
    }
    s
}

/// Largest minus smallest metric in a sweep.
pub fn spread(rows: &[(f64, f64)]) -> f64 {
    let max = rows.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let min = rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    max - min
}
