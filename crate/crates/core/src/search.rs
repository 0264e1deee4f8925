//! Generic search engine: the task interface, policies, and the rollouts
//! that turn inputs into training states.

use std::fmt;

use rand::Rng;

use crate::classifier::{Example, FeatureLayout};
use crate::ensemble::anneal;
use crate::error::{Error, Result};
use crate::seed;

pub type ActionId = usize;

/// A search problem `(S, A, T, S0, ST)` together with its reference policy
/// and a feature view of its states.
///
/// Actions are dense ids in `0..num_actions()`. `legal_actions` returns ids
/// in ascending order.
pub trait Task: Sync {
    type Input: Sync;
    type Gold: Sync;
    type State: Clone + fmt::Debug + Send + Sync;
    type Output: Send;

    fn num_actions(&self) -> usize;

    fn action_name(&self, action: ActionId) -> String;

    fn initial_state(&self, input: &Self::Input) -> Self::State;

    fn is_terminal(&self, state: &Self::State) -> bool;

    /// Whether a terminal state was reached by hitting a step cap rather
    /// than by the task's own termination rule.
    fn is_truncated(&self, _state: &Self::State) -> bool {
        false
    }

    fn legal_actions(&self, state: &Self::State) -> Vec<ActionId>;

    fn transition(&self, state: &Self::State, action: ActionId) -> Result<Self::State>;

    /// Reference policy. Only defined on states reachable by following it.
    fn reference_action(&self, state: &Self::State, gold: &Self::Gold) -> Result<ActionId>;

    /// Checks `gold` against `input` before a reference rollout.
    fn validate_gold(&self, input: &Self::Input, gold: &Self::Gold) -> Result<()>;

    fn output(&self, state: &Self::State) -> Self::Output;

    fn layout(&self) -> FeatureLayout;

    fn features(&self, state: &Self::State, out: &mut Vec<u32>);

    /// Corpus-level metric on a 0..100 scale (LAS for parsing, BLEU for
    /// transduction).
    fn metric(&self, inputs: &[&Self::Input], golds: &[&Self::Gold], outputs: &[Self::Output]) -> f64;

    fn example(&self, state: &Self::State) -> Example {
        let mut features = Vec::new();
        self.features(state, &mut features);
        Example {
            features,
            legal: self.legal_actions(state),
        }
    }
}

/// Probability vector over the full action space; illegal actions carry 0.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionDistribution {
    pub probs: Vec<f64>,
}

impl ActionDistribution {
    pub fn new(probs: Vec<f64>) -> Self {
        ActionDistribution { probs }
    }

    pub fn uniform(num_actions: usize, legal: &[ActionId]) -> Self {
        let mut probs = vec![0.0; num_actions];
        let p = 1.0 / legal.len() as f64;
        for &a in legal {
            probs[a] = p;
        }
        ActionDistribution { probs }
    }

    pub fn one_hot(num_actions: usize, action: ActionId) -> Self {
        let mut probs = vec![0.0; num_actions];
        probs[action] = 1.0;
        ActionDistribution { probs }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        self.probs.iter().all(|p| *p >= 0.0 && p.is_finite()) && (self.sum() - 1.0).abs() <= tol
    }

    /// Most probable action among `legal`; ties go to the smallest id.
    pub fn argmax(&self, legal: &[ActionId]) -> Option<ActionId> {
        let mut best: Option<ActionId> = None;
        for &a in legal {
            match best {
                Some(b) if self.probs[a] <= self.probs[b] => {}
                _ => best = Some(a),
            }
        }
        best
    }

    /// The `k` most probable actions among `legal`, by descending probability
    /// and then ascending id.
    pub fn top_k(&self, legal: &[ActionId], k: usize) -> Vec<ActionId> {
        let mut ranked = legal.to_vec();
        ranked.sort_by(|&a, &b| self.probs[b].total_cmp(&self.probs[a]).then(a.cmp(&b)));
        ranked.truncate(k);
        ranked
    }
}

/// Anything that can put a distribution on the legal actions of a state.
pub trait Scorer<T: Task>: Sync {
    fn distribution(&self, task: &T, state: &T::State) -> Result<ActionDistribution>;
}

/// Adapts a closure into a [`Scorer`].
pub struct FnScorer<F>(pub F);

impl<T, F> Scorer<T> for FnScorer<F>
where
    T: Task,
    F: Fn(&T, &T::State) -> Result<ActionDistribution> + Sync,
{
    fn distribution(&self, task: &T, state: &T::State) -> Result<ActionDistribution> {
        (self.0)(task, state)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PolicyMode {
    Greedy,
    /// Sample from `q^(1/T)` renormalised over the legal actions.
    Sample { temperature: f64 },
}

pub struct Policy<'a, S> {
    pub scorer: &'a S,
    pub mode: PolicyMode,
}

impl<'a, S> Policy<'a, S> {
    pub fn greedy(scorer: &'a S) -> Self {
        Policy {
            scorer,
            mode: PolicyMode::Greedy,
        }
    }

    pub fn sample(scorer: &'a S, temperature: f64) -> Self {
        Policy {
            scorer,
            mode: PolicyMode::Sample { temperature },
        }
    }

    /// Picks an action and returns it with the scorer's raw (un-annealed)
    /// distribution.
    pub fn act<T: Task, R: Rng>(
        &self,
        task: &T,
        state: &T::State,
        rng: &mut R,
    ) -> Result<(ActionId, ActionDistribution)>
    where
        S: Scorer<T>,
    {
        let legal = task.legal_actions(state);
        if legal.is_empty() {
            return Err(Error::Invariant(format!(
                "no legal action at non-terminal state {state:?}"
            )));
        }
        let dist = self.scorer.distribution(task, state)?;
        let action = match self.mode {
            PolicyMode::Greedy => dist.argmax(&legal).expect("legal set is nonempty"),
            PolicyMode::Sample { temperature } => {
                let annealed = anneal(&dist, temperature)?;
                sample_from(&annealed, &legal, rng)
            }
        };
        Ok((action, dist))
    }
}

fn sample_from<R: Rng>(dist: &ActionDistribution, legal: &[ActionId], rng: &mut R) -> ActionId {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = legal[0];
    for &a in legal {
        let p = dist.probs[a];
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = a;
        if u < acc {
            return a;
        }
    }
    last
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Origin {
    Reference,
    Exploration,
}

/// A visited state together with whatever targets are known for it.
#[derive(Clone, Debug)]
pub struct StateRecord<S> {
    pub state: S,
    pub soft_target: Option<ActionDistribution>,
    pub reference_action: Option<ActionId>,
    pub origin: Origin,
}

/// Follows the reference policy from the initial state, recording every
/// non-terminal state and the reference action taken there.
pub fn rollout_reference<T: Task>(
    task: &T,
    input: &T::Input,
    gold: &T::Gold,
) -> Result<Vec<StateRecord<T::State>>> {
    task.validate_gold(input, gold)?;
    let mut state = task.initial_state(input);
    let mut records = Vec::new();
    while !task.is_terminal(&state) {
        let action = task.reference_action(&state, gold)?;
        let next = task.transition(&state, action)?;
        records.push(StateRecord {
            state,
            soft_target: None,
            reference_action: Some(action),
            origin: Origin::Reference,
        });
        state = next;
    }
    if task.is_truncated(&state) {
        return Err(Error::InvalidGold(
            "reference rollout hit the step cap".to_string(),
        ));
    }
    Ok(records)
}

/// States visited while following a sampling policy.
#[derive(Clone, Debug)]
pub struct Exploration<S> {
    pub records: Vec<StateRecord<S>>,
    /// The trajectory stopped at the step cap.
    pub truncated: bool,
}

/// Samples one trajectory from `policy`. Each record's soft target is the
/// scorer's un-annealed distribution at that state.
pub fn rollout_exploration<T: Task, S: Scorer<T>>(
    task: &T,
    input: &T::Input,
    policy: &Policy<'_, S>,
    rng_seed: u64,
) -> Result<Exploration<T::State>> {
    if let PolicyMode::Sample { temperature } = policy.mode {
        if !(temperature > 0.0) {
            return Err(Error::Config(format!(
                "exploration temperature must be positive, got {temperature}"
            )));
        }
    }
    let mut rng = seed::rng(rng_seed);
    let mut state = task.initial_state(input);
    let mut records = Vec::new();
    while !task.is_terminal(&state) {
        let (action, dist) = policy.act(task, &state, &mut rng)?;
        let next = task.transition(&state, action)?;
        records.push(StateRecord {
            state,
            soft_target: Some(dist),
            reference_action: None,
            origin: Origin::Exploration,
        });
        state = next;
    }
    Ok(Exploration {
        records,
        truncated: task.is_truncated(&state),
    })
}

/// Runs the greedy policy to a terminal state and returns its structure.
pub fn decode_greedy<T: Task, S: Scorer<T>>(task: &T, input: &T::Input, scorer: &S) -> Result<T::Output> {
    let mut state = task.initial_state(input);
    while !task.is_terminal(&state) {
        let legal = task.legal_actions(&state);
        if legal.is_empty() {
            return Err(Error::Invariant(format!(
                "no legal action at non-terminal state {state:?}"
            )));
        }
        let dist = scorer.distribution(task, &state)?;
        let action = dist.argmax(&legal).expect("legal set is nonempty");
        state = task.transition(&state, action)?;
    }
    Ok(task.output(&state))
}

/// Greedy-decodes every input and scores the outputs with the task metric.
pub fn evaluate<T: Task, S: Scorer<T>>(task: &T, data: &[(T::Input, T::Gold)], scorer: &S) -> Result<f64> {
    let (outputs, inputs, golds) = decode_all(task, data, scorer)?;
    Ok(task.metric(&inputs, &golds, &outputs))
}

#[allow(clippy::type_complexity)]
pub fn decode_all<'d, T: Task, S: Scorer<T>>(
    task: &T,
    data: &'d [(T::Input, T::Gold)],
    scorer: &S,
) -> Result<(Vec<T::Output>, Vec<&'d T::Input>, Vec<&'d T::Gold>)> {
    let outputs = data
        .iter()
        .map(|(x, _)| decode_greedy(task, x, scorer))
        .collect::<Result<Vec<_>>>()?;
    let inputs = data.iter().map(|(x, _)| x).collect();
    let golds = data.iter().map(|(_, y)| y).collect();
    Ok((outputs, inputs, golds))
}
