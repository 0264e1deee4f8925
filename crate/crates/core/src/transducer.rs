//! Word-by-word sequence transduction: states are emitted prefixes, actions
//! are target-vocabulary words, and the output is scored with BLEU.

use std::collections::HashMap;
use std::fs;
use std::hash::Hash;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{FeatureLayout, TaskMeta};
use crate::error::{Error, Result};
use crate::search::{ActionId, Task};
use crate::seed;
use crate::vocab::{Vocab, NONE, NONE_ID, UNK};

pub const EOS: &str = "</s>";
pub const EOS_ID: ActionId = 0;
pub const UNK_ACTION: ActionId = 1;
/// Emitted-token feature for the start symbol `$`.
const START_FEAT: u32 = 1;
const HISTORY: usize = 3;
const WINDOW: usize = 5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelPair {
    pub source: Vec<String>,
    pub target: Vec<String>,
}

impl ParallelPair {
    pub fn new(source: &str, target: &str) -> Self {
        ParallelPair {
            source: source.split_whitespace().map(str::to_string).collect(),
            target: target.split_whitespace().map(str::to_string).collect(),
        }
    }
}

/// Source sentence as ids, with its step cap.
#[derive(Debug, PartialEq, Eq)]
pub struct EncodedSource {
    pub ids: Vec<u32>,
    pub cap: usize,
}

pub type TransduceInput = Arc<EncodedSource>;

/// Step cap for a source of `len` tokens.
pub fn step_cap(len: usize) -> usize {
    2 * len + 10
}

#[derive(Clone, PartialEq, Eq)]
pub struct TransducerState {
    src: TransduceInput,
    prefix: Vec<ActionId>,
}

impl TransducerState {
    pub fn initial(src: TransduceInput) -> Self {
        TransducerState {
            src,
            prefix: Vec::new(),
        }
    }

    /// Emitted words after `$`.
    pub fn prefix(&self) -> &[ActionId] {
        &self.prefix
    }

    pub fn ended(&self) -> bool {
        self.prefix.last() == Some(&EOS_ID)
    }

    pub fn capped(&self) -> bool {
        !self.ended() && self.prefix.len() >= self.src.cap
    }

    pub fn is_terminal(&self) -> bool {
        self.ended() || self.capped()
    }
}

impl std::fmt::Debug for TransducerState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TransducerState")
            .field("source", &self.src.ids)
            .field("prefix", &self.prefix)
            .finish()
    }
}

/// Appends `w` to the prefix.
pub fn emit(state: &TransducerState, w: ActionId) -> Result<TransducerState> {
    if state.is_terminal() {
        return Err(Error::TerminalState);
    }
    let mut next = state.clone();
    next.prefix.push(w);
    Ok(next)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransduceTask {
    source: Vocab,
    /// Action space: EOS, UNK, then target words.
    target: Vocab,
}

#[derive(Serialize, Deserialize)]
struct TransduceMeta {
    source: Vocab,
    target: Vocab,
}

impl TransduceTask {
    pub fn from_corpus(pairs: &[ParallelPair]) -> Self {
        let mut source = Vocab::with_specials(&[NONE, UNK]);
        let mut target = Vocab::with_specials(&[EOS, UNK]);
        for p in pairs {
            p.source.iter().for_each(|w| {
                source.add(w);
            });
            p.target.iter().for_each(|w| {
                target.add(w);
            });
        }
        TransduceTask { source, target }
    }

    pub fn target_vocab(&self) -> &Vocab {
        &self.target
    }

    pub fn source_vocab(&self) -> &Vocab {
        &self.source
    }

    pub fn encode_source(&self, words: &[String]) -> TransduceInput {
        Arc::new(EncodedSource {
            ids: words.iter().map(|w| self.source.lookup(w)).collect(),
            cap: step_cap(words.len()),
        })
    }

    pub fn encode_target(&self, words: &[String]) -> Vec<ActionId> {
        words.iter().map(|w| self.target.lookup(w) as ActionId).collect()
    }

    pub fn encode(&self, pairs: &[ParallelPair]) -> Vec<(TransduceInput, Vec<ActionId>)> {
        pairs
            .iter()
            .map(|p| (self.encode_source(&p.source), self.encode_target(&p.target)))
            .collect()
    }

    pub fn decode_target(&self, ids: &[ActionId]) -> Vec<String> {
        ids.iter().map(|&a| self.target.symbol(a as u32).to_string()).collect()
    }
}

impl Task for TransduceTask {
    type Input = TransduceInput;
    type Gold = Vec<ActionId>;
    type State = TransducerState;
    type Output = Vec<ActionId>;

    fn num_actions(&self) -> usize {
        self.target.len()
    }

    fn action_name(&self, a: ActionId) -> String {
        self.target.symbol(a as u32).to_string()
    }

    fn initial_state(&self, input: &TransduceInput) -> TransducerState {
        TransducerState::initial(input.clone())
    }

    fn is_terminal(&self, s: &TransducerState) -> bool {
        s.is_terminal()
    }

    fn is_truncated(&self, s: &TransducerState) -> bool {
        s.capped()
    }

    /// Every word except UNK.
    fn legal_actions(&self, s: &TransducerState) -> Vec<ActionId> {
        if s.is_terminal() {
            return Vec::new();
        }
        (0..self.num_actions()).filter(|&a| a != UNK_ACTION).collect()
    }

    fn transition(&self, s: &TransducerState, a: ActionId) -> Result<TransducerState> {
        if a >= self.num_actions() || a == UNK_ACTION {
            return Err(Error::IllegalAction {
                action: a.to_string(),
                reason: "not a legal target word".into(),
            });
        }
        emit(s, a)
    }

    fn reference_action(&self, s: &TransducerState, gold: &Vec<ActionId>) -> Result<ActionId> {
        let t = s.prefix.len();
        if s.prefix[..] != gold[..t.min(gold.len())] || t > gold.len() {
            return Err(Error::Unreachable(format!("prefix {:?} has left the reference", s.prefix)));
        }
        Ok(gold.get(t).copied().unwrap_or(EOS_ID))
    }

    fn validate_gold(&self, input: &TransduceInput, gold: &Vec<ActionId>) -> Result<()> {
        if gold.len() >= input.cap {
            return Err(Error::InvalidGold(format!(
                "reference of {} tokens does not fit the step cap {}",
                gold.len(),
                input.cap
            )));
        }
        if let Some(i) = gold.iter().position(|&a| a == UNK_ACTION || a == EOS_ID || a >= self.num_actions()) {
            return Err(Error::InvalidGold(format!("reference token {i} is not in the target vocabulary")));
        }
        Ok(())
    }

    fn output(&self, s: &TransducerState) -> Vec<ActionId> {
        let mut out = s.prefix.clone();
        if out.last() == Some(&EOS_ID) {
            out.pop();
        }
        out
    }

    fn layout(&self) -> FeatureLayout {
        FeatureLayout {
            slot_tables: [0; HISTORY].into_iter().chain([1; WINDOW]).collect(),
            table_sizes: vec![self.target.len() + 2, self.source.len()],
        }
    }

    /// Slots: the last three of `($, y1..yt)`, then source tokens
    /// `t-2..=t+2` where `t` is the number of words emitted.
    fn features(&self, s: &TransducerState, out: &mut Vec<u32>) {
        out.clear();
        let t = s.prefix.len() as isize;
        for k in (1..=HISTORY as isize).rev() {
            let i = t - k;
            out.push(match i {
                i if i >= 0 => s.prefix[i as usize] as u32 + 2,
                -1 => START_FEAT,
                _ => NONE_ID,
            });
        }
        let half = (WINDOW / 2) as isize;
        for off in -half..=half {
            let i = t + off;
            out.push(if i >= 0 && (i as usize) < s.src.ids.len() {
                s.src.ids[i as usize]
            } else {
                NONE_ID
            });
        }
    }

    fn metric(&self, _: &[&TransduceInput], golds: &[&Vec<ActionId>], outputs: &[Vec<ActionId>]) -> f64 {
        let mut st = BleuStats::default();
        for (g, o) in golds.iter().zip(outputs) {
            st.add(&BleuStats::sentence(o, g));
        }
        st.score()
    }
}

impl TaskMeta for TransduceTask {
    const NAME: &'static str = "transduce";

    fn meta(&self) -> serde_json::Value {
        serde_json::to_value(TransduceMeta {
            source: self.source.clone(),
            target: self.target.clone(),
        })
        .expect("vocabularies serialise")
    }

    fn from_meta(meta: &serde_json::Value) -> Result<Self> {
        let m: TransduceMeta = serde_json::from_value(meta.clone())?;
        Ok(TransduceTask {
            source: m.source,
            target: m.target,
        })
    }
}

/// Sufficient statistics for corpus BLEU-4.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [usize; 4],
    pub totals: [usize; 4],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn sentence<T: Eq + Hash>(hyp: &[T], reference: &[T]) -> Self {
        let mut st = BleuStats {
            hyp_len: hyp.len(),
            ref_len: reference.len(),
            ..Default::default()
        };
        for n in 1..=4 {
            if hyp.len() < n {
                continue;
            }
            let mut ref_counts: HashMap<&[T], usize> = HashMap::new();
            if reference.len() >= n {
                for g in reference.windows(n) {
                    *ref_counts.entry(g).or_default() += 1;
                }
            }
            let mut hyp_counts: HashMap<&[T], usize> = HashMap::new();
            for g in hyp.windows(n) {
                *hyp_counts.entry(g).or_default() += 1;
            }
            st.totals[n - 1] = hyp.len() + 1 - n;
            st.matches[n - 1] = hyp_counts
                .iter()
                .map(|(g, &c)| c.min(ref_counts.get(g).copied().unwrap_or(0)))
                .sum();
        }
        st
    }

    pub fn add(&mut self, o: &BleuStats) {
        for n in 0..4 {
            self.matches[n] += o.matches[n];
            self.totals[n] += o.totals[n];
        }
        self.hyp_len += o.hyp_len;
        self.ref_len += o.ref_len;
    }

    /// BLEU on a 0..100 scale. Orders with no hypothesis n-grams are left
    /// out of the geometric mean; any zero precision gives 0.
    pub fn score(&self) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        let mut orders = 0;
        for n in 0..4 {
            if self.totals[n] == 0 {
                continue;
            }
            if self.matches[n] == 0 {
                return 0.0;
            }
            log_sum += (self.matches[n] as f64 / self.totals[n] as f64).ln();
            orders += 1;
        }
        let bp = (1.0 - self.ref_len as f64 / self.hyp_len as f64).min(0.0).exp();
        100.0 * bp * (log_sum / orders as f64).exp()
    }
}

/// Corpus BLEU-4 of `hypotheses` against single `references`.
pub fn bleu<T: Eq + Hash>(hypotheses: &[Vec<T>], references: &[Vec<T>]) -> Result<f64> {
    if hypotheses.is_empty() {
        return Err(Error::Config("BLEU needs at least one hypothesis".into()));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::Config(format!(
            "{} hypotheses but {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    let mut st = BleuStats::default();
    for (h, r) in hypotheses.iter().zip(references) {
        st.add(&BleuStats::sentence(h, r));
    }
    Ok(st.score())
}

fn check_pair(p: &ParallelPair, origin: &str, line: usize) -> Result<()> {
    if p.source.is_empty() || p.target.is_empty() {
        return Err(Error::Parse {
            path: origin.to_string(),
            line,
            msg: "source and target must both be non-empty".into(),
        });
    }
    Ok(())
}

/// One `source<TAB>target` pair per line.
pub fn read_parallel_tsv(path: impl AsRef<Path>) -> Result<Vec<ParallelPair>> {
    let path = path.as_ref();
    let origin = path.display().to_string();
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (s, t) = line.split_once('\t').ok_or_else(|| Error::Parse {
            path: origin.clone(),
            line: i + 1,
            msg: "expected `source<TAB>target`".into(),
        })?;
        let p = ParallelPair::new(s, t);
        check_pair(&p, &origin, i + 1)?;
        out.push(p);
    }
    Ok(out)
}

/// Two line-aligned files.
pub fn read_parallel_files(source: impl AsRef<Path>, target: impl AsRef<Path>) -> Result<Vec<ParallelPair>> {
    let (sp, tp) = (source.as_ref(), target.as_ref());
    let s = fs::read_to_string(sp)?;
    let t = fs::read_to_string(tp)?;
    let (sl, tl): (Vec<&str>, Vec<&str>) = (s.lines().collect(), t.lines().collect());
    if sl.len() != tl.len() {
        return Err(Error::Parse {
            path: tp.display().to_string(),
            line: tl.len().min(sl.len()) + 1,
            msg: format!("{} source lines but {} target lines", sl.len(), tl.len()),
        });
    }
    let origin = sp.display().to_string();
    sl.iter()
        .zip(&tl)
        .enumerate()
        .map(|(i, (s, t))| {
            let p = ParallelPair::new(s, t);
            check_pair(&p, &origin, i + 1).map(|_| p)
        })
        .collect()
}

pub fn write_parallel_tsv(pairs: &[ParallelPair]) -> String {
    let mut s = String::new();
    for p in pairs {
        s.push_str(&p.source.join(" "));
        s.push('\t');
        s.push_str(&p.target.join(" "));
        s.push('\n');
    }
    s
}

/// Synthetic pairs plus, for every target token, the set of words that
/// would also have been correct there.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSplit {
    pub pairs: Vec<ParallelPair>,
    pub alternatives: Vec<Vec<Vec<String>>>,
}

impl SyntheticSplit {
    /// Fraction (in percent) of hypothesis tokens that are among the valid
    /// alternatives at the same position; length mismatches count as errors.
    pub fn valid_set_accuracy(&self, hypotheses: &[Vec<String>]) -> f64 {
        let mut correct = 0usize;
        let mut total = 0usize;
        for (alts, hyp) in self.alternatives.iter().zip(hypotheses) {
            total += alts.len().max(hyp.len());
            correct += alts.iter().zip(hyp).filter(|(a, h)| a.contains(h)).count();
        }
        if total == 0 {
            100.0
        } else {
            100.0 * correct as f64 / total as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParallel {
    pub train: SyntheticSplit,
    pub dev: SyntheticSplit,
    pub test: SyntheticSplit,
}

/// Probability that an ambiguous word's reference uses its second
/// translation.
pub const SECONDARY_PROB: f64 = 0.35;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Cat {
    Det,
    Noun,
    Adj,
    Verb,
    Adv,
}

struct Dictionary {
    words: Vec<(Cat, String)>,
    translations: Vec<Vec<String>>,
}

impl Dictionary {
    fn new<R: Rng>(rng: &mut R, ambiguity_rate: f64) -> Self {
        let mut words = Vec::new();
        for (cat, prefix, n) in [
            (Cat::Det, "d", 4),
            (Cat::Noun, "n", 30),
            (Cat::Adj, "a", 15),
            (Cat::Verb, "v", 20),
            (Cat::Adv, "r", 8),
        ] {
            words.extend((0..n).map(|i| (cat, format!("s{prefix}{i}"))));
        }
        let ambiguous = (ambiguity_rate * words.len() as f64).round() as usize;
        let mut order: Vec<usize> = (0..words.len()).collect();
        order.shuffle(rng);
        let mut is_ambiguous = vec![false; words.len()];
        order[..ambiguous].iter().for_each(|&i| is_ambiguous[i] = true);
        let translations = words
            .iter()
            .zip(&is_ambiguous)
            .map(|((_, w), &amb)| {
                let base = format!("t{}", &w[1..]);
                if amb {
                    vec![base.clone(), format!("{base}x")]
                } else {
                    vec![base]
                }
            })
            .collect();
        Dictionary { words, translations }
    }

    fn pick<R: Rng>(&self, cat: Cat, rng: &mut R) -> usize {
        let ids: Vec<usize> = (0..self.words.len()).filter(|&i| self.words[i].0 == cat).collect();
        *ids.choose(rng).expect("category is nonempty")
    }
}

fn synthetic_pair<R: Rng>(dict: &Dictionary, rng: &mut R) -> (ParallelPair, Vec<Vec<String>>) {
    let mut src: Vec<usize> = Vec::new();
    let np = |src: &mut Vec<usize>, rng: &mut R| {
        if rng.gen_bool(0.6) {
            src.push(dict.pick(Cat::Det, rng));
        }
        src.push(dict.pick(Cat::Noun, rng));
        if rng.gen_bool(0.5) {
            src.push(dict.pick(Cat::Adj, rng));
        }
    };
    np(&mut src, rng);
    src.push(dict.pick(Cat::Verb, rng));
    if rng.gen_bool(0.6) {
        np(&mut src, rng);
    }
    if rng.gen_bool(0.3) {
        src.push(dict.pick(Cat::Adv, rng));
    }
    // target order: noun-adjective pairs swap
    let mut order: Vec<usize> = (0..src.len()).collect();
    let mut i = 0;
    while i + 1 < src.len() {
        if dict.words[src[i]].0 == Cat::Noun && dict.words[src[i + 1]].0 == Cat::Adj {
            order.swap(i, i + 1);
            i += 2;
        } else {
            i += 1;
        }
    }
    let mut target = Vec::new();
    let mut alternatives = Vec::new();
    for &k in &order {
        let options = &dict.translations[src[k]];
        let choice = if options.len() > 1 && rng.gen_bool(SECONDARY_PROB) { 1 } else { 0 };
        target.push(options[choice].clone());
        alternatives.push(options.clone());
    }
    let source = src.iter().map(|&k| dict.words[k].1.clone()).collect();
    (ParallelPair { source, target }, alternatives)
}

fn synthetic_split(dict: &Dictionary, seed: u64, part: u64, count: usize) -> SyntheticSplit {
    let mut rng = seed::rng(seed::derive(seed, seed::STREAM_CORPUS, &[1, part]));
    let (pairs, alternatives) = (0..count).map(|_| synthetic_pair(dict, &mut rng)).unzip();
    SyntheticSplit { pairs, alternatives }
}

/// Deterministic toy translation corpus: a word-by-word dictionary with
/// noun-adjective reordering, where a fraction `ambiguity_rate` of source
/// word types has two valid translations. References pick the second one
/// with probability [`SECONDARY_PROB`].
pub fn make_synthetic_corpus(seed: u64, size: usize, ambiguity_rate: f64) -> Result<SyntheticParallel> {
    if size < 10 {
        return Err(Error::Config(format!("synthetic corpus size must be at least 10, got {size}")));
    }
    if !(0.0..=1.0).contains(&ambiguity_rate) {
        return Err(Error::Config(format!("ambiguity rate must be in [0, 1], got {ambiguity_rate}")));
    }
    let dict = Dictionary::new(&mut seed::rng(seed::derive(seed, seed::STREAM_CORPUS, &[1])), ambiguity_rate);
    let held_out = size / 4;
    Ok(SyntheticParallel {
        train: synthetic_split(&dict, seed, 0, size),
        dev: synthetic_split(&dict, seed, 1, held_out),
        test: synthetic_split(&dict, seed, 2, held_out),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::{decode_greedy, rollout_reference, ActionDistribution, FnScorer};

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn task() -> TransduceTask {
        TransduceTask::from_corpus(&[ParallelPair::new("x y z", "a b c")])
    }

    #[test]
    fn emit_examples() {
        let t = task();
        let src = t.encode_source(&toks("x y"));
        let s = TransducerState::initial(src.clone());
        let a = t.target_vocab().get("a").unwrap() as ActionId;
        let b = t.target_vocab().get("b").unwrap() as ActionId;
        let s1 = emit(&s, a).unwrap();
        assert_eq!(s1.prefix(), &[a]);
        let s3 = emit(&emit(&s1, b).unwrap(), EOS_ID).unwrap();
        assert!(s3.is_terminal() && !s3.capped());
        assert_eq!(t.output(&s3), vec![a, b]);
        assert!(matches!(emit(&s3, a), Err(Error::TerminalState)));
    }

    #[test]
    fn step_cap_terminates() {
        let t = task();
        let src = t.encode_source(&toks("x"));
        let mut s = TransducerState::initial(src);
        let mut steps = 0;
        while !s.is_terminal() {
            s = t.transition(&s, 2).unwrap();
            steps += 1;
        }
        assert_eq!(steps, step_cap(1));
        assert!(t.is_truncated(&s));
    }

    #[test]
    fn empty_target_is_one_eos_record() {
        let t = task();
        let recs = rollout_reference(&t, &t.encode_source(&toks("x")), &vec![]).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].reference_action, Some(EOS_ID));
    }

    #[test]
    fn unk_is_never_legal() {
        let t = task();
        let s = TransducerState::initial(t.encode_source(&toks("x")));
        assert!(!t.legal_actions(&s).contains(&UNK_ACTION));
        assert!(t.transition(&s, UNK_ACTION).is_err());
    }

    #[test]
    fn features_window() {
        let t = task();
        let src = t.encode_source(&toks("x y z"));
        let s = TransducerState::initial(src.clone());
        let mut f = Vec::new();
        t.features(&s, &mut f);
        let sx = t.source_vocab().get("x").unwrap();
        let sy = t.source_vocab().get("y").unwrap();
        let sz = t.source_vocab().get("z").unwrap();
        assert_eq!(f, vec![NONE_ID, NONE_ID, START_FEAT, NONE_ID, NONE_ID, sx, sy, sz]);
        let s = emit(&s, 3).unwrap();
        t.features(&s, &mut f);
        assert_eq!(f, vec![NONE_ID, START_FEAT, 5, NONE_ID, sx, sy, sz, NONE_ID]);
    }

    #[test]
    fn bleu_micro_corpora() {
        let h = vec![toks("the cat sat on the mat")];
        assert!((bleu(&h, &h).unwrap() - 100.0).abs() < 1e-9);
        assert_eq!(bleu(&[toks("a b c")], &[toks("x y z")]).unwrap(), 0.0);
        let v = bleu(&[toks("the cat sat")], &[toks("the cat sat down")]).unwrap();
        assert!((v - 100.0 * (1.0f64 - 4.0 / 3.0).exp()).abs() < 1e-9);
        assert!((v - 71.65).abs() < 0.01);
        assert!(bleu::<String>(&[], &[]).is_err());
        assert!(bleu(&h, &[]).is_err());
    }

    #[test]
    fn bleu_is_order_invariant() {
        let hyps = vec![toks("a b c d"), toks("x y"), toks("p q r s t")];
        let refs = vec![toks("a b d c"), toks("x y z"), toks("p q r t s")];
        let v = bleu(&hyps, &refs).unwrap();
        let (mut h2, mut r2) = (hyps.clone(), refs.clone());
        h2.reverse();
        r2.reverse();
        assert_eq!(v, bleu(&h2, &r2).unwrap());
    }

    #[test]
    fn synthetic_determinism_and_splits() {
        let a = make_synthetic_corpus(4, 40, 0.3).unwrap();
        assert_eq!(a, make_synthetic_corpus(4, 40, 0.3).unwrap());
        assert_eq!((a.train.pairs.len(), a.dev.pairs.len()), (40, 10));
        assert!(make_synthetic_corpus(4, 9, 0.3).is_err());
        assert!(make_synthetic_corpus(4, 10, -0.1).is_err());
        for (p, alts) in a.train.pairs.iter().zip(&a.train.alternatives) {
            assert_eq!(p.source.len(), p.target.len());
            assert_eq!(p.target.len(), alts.len());
        }
    }

    #[test]
    fn unambiguous_corpus_is_perfectly_learnable_by_the_oracle() {
        let c = make_synthetic_corpus(2, 200, 0.0).unwrap();
        assert!(c.train.alternatives.iter().flatten().all(|a| a.len() == 1));
        let t = TransduceTask::from_corpus(&c.train.pairs);
        let data = t.encode(&c.train.pairs);
        let outs: Vec<Vec<String>> = data
            .iter()
            .map(|(x, y)| {
                let oracle = FnScorer(|task: &TransduceTask, s: &TransducerState| {
                    Ok(ActionDistribution::one_hot(task.num_actions(), task.reference_action(s, y)?))
                });
                t.decode_target(&decode_greedy(&t, x, &oracle).unwrap())
            })
            .collect();
        let refs: Vec<Vec<String>> = c.train.pairs.iter().map(|p| p.target.clone()).collect();
        assert_eq!(bleu(&outs, &refs).unwrap(), 100.0);
    }

    #[test]
    fn ambiguous_references_penalise_valid_choices() {
        let c = make_synthetic_corpus(5, 200, 0.5).unwrap();
        // always the first valid translation
        let hyps: Vec<Vec<String>> = c
            .dev
            .alternatives
            .iter()
            .map(|alts| alts.iter().map(|a| a[0].clone()).collect())
            .collect();
        assert_eq!(c.dev.valid_set_accuracy(&hyps), 100.0);
        let refs: Vec<Vec<String>> = c.dev.pairs.iter().map(|p| p.target.clone()).collect();
        let unmatched: usize = c
            .dev
            .pairs
            .iter()
            .zip(&hyps)
            .map(|(p, h)| p.target.iter().zip(h).filter(|(a, b)| a != b).count())
            .sum();
        assert!(unmatched > 0);
        assert!(bleu(&hyps, &refs).unwrap() < 100.0);
    }

    #[test]
    fn tsv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = vec![ParallelPair::new("a b", "c d"), ParallelPair::new("e", "f")];
        let p = dir.path().join("c.tsv");
        fs::write(&p, write_parallel_tsv(&pairs)).unwrap();
        assert_eq!(read_parallel_tsv(&p).unwrap(), pairs);
        fs::write(dir.path().join("s"), "a b\ne\n").unwrap();
        fs::write(dir.path().join("t"), "c d\nf\n").unwrap();
        assert_eq!(read_parallel_files(dir.path().join("s"), dir.path().join("t")).unwrap(), pairs);
        fs::write(&p, "a b\n").unwrap();
        assert!(read_parallel_tsv(&p).is_err());
    }
}
