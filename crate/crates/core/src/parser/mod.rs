//! Arc-standard transition-based dependency parsing.
//!
//! ROOT (token index 0) sits at the *end* of the buffer: the initial state is
//! `([], [1..n, ROOT], {})` and the only terminal state is `([ROOT], [], A)`.
//! ROOT may only be shifted onto a stack holding exactly one token, so every
//! terminal tree has a single root child.
//!
//! Action ids: `Shift = 0`, `Left(l) = 1 + l`, `Right(l) = 1 + L + l` for a
//! label set of size `L`.

mod conll;
mod dynamic;
pub mod synthetic;

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use conll::{filter_projective, read_conll, read_conll_str, write_conll, ConllReport};
pub use dynamic::{best_loss, dynamic_oracle, OracleSet};

use crate::classifier::{FeatureLayout, TaskMeta};
use crate::error::{Error, Result};
use crate::search::{ActionId, Task};
use crate::vocab::{Vocab, NONE, NONE_ID, UNK};

pub const ROOT: usize = 0;
const ROOT_SYMBOL: &str = "<root>";
const ROOT_ID: u32 = 2;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub form: String,
    pub upos: String,
}

/// Tokens `1..=n`; index 0 is reserved for ROOT.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Token at 1-based index `i`.
    pub fn token(&self, i: usize) -> &Token {
        &self.tokens[i - 1]
    }
}

/// Gold dependency tree. `heads[i - 1]` is the head of token `i`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldTree {
    pub heads: Vec<usize>,
    pub labels: Vec<String>,
}

impl GoldTree {
    /// Builds a tree, checking ranges, a single root and acyclicity.
    pub fn new(heads: Vec<usize>, labels: Vec<String>) -> Result<Self> {
        let t = GoldTree { heads, labels };
        t.validate()?;
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    pub fn head(&self, i: usize) -> usize {
        self.heads[i - 1]
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i - 1]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.heads.len();
        if n == 0 {
            return Err(Error::InvalidGold("empty tree".into()));
        }
        if self.labels.len() != n {
            return Err(Error::InvalidGold(format!("{n} heads but {} labels", self.labels.len())));
        }
        if let Some((i, h)) = self.heads.iter().enumerate().find(|(i, &h)| h > n || h == i + 1) {
            return Err(Error::InvalidGold(format!("token {} has invalid head {h}", i + 1)));
        }
        let roots = self.heads.iter().filter(|&&h| h == ROOT).count();
        if roots != 1 {
            return Err(Error::InvalidGold(format!("expected exactly one root, found {roots}")));
        }
        for start in 1..=n {
            let mut cur = start;
            for _ in 0..=n {
                cur = self.heads[cur - 1];
                if cur == ROOT {
                    break;
                }
            }
            if cur != ROOT {
                return Err(Error::InvalidGold(format!("cycle through token {start}")));
            }
        }
        Ok(())
    }

    /// Pairs of crossing arcs, with ROOT placed after the last token.
    pub fn crossing_arcs(&self) -> Vec<((usize, usize), (usize, usize))> {
        let n = self.heads.len();
        let pos = |i: usize| if i == ROOT { n + 1 } else { i };
        let arcs: Vec<(usize, usize, usize, usize)> = self
            .heads
            .iter()
            .enumerate()
            .map(|(d, &h)| {
                let (a, b) = (pos(h), d + 1);
                (a.min(b), a.max(b), h, d + 1)
            })
            .collect();
        let mut out = Vec::new();
        for (i, &(l1, r1, h1, d1)) in arcs.iter().enumerate() {
            for &(l2, r2, h2, d2) in &arcs[i + 1..] {
                if (l1 < l2 && l2 < r1 && r1 < r2) || (l2 < l1 && l1 < r2 && r2 < r1) {
                    out.push(((h1, d1), (h2, d2)));
                }
            }
        }
        out
    }

    pub fn is_projective(&self) -> bool {
        self.crossing_arcs().is_empty()
    }
}

/// Labelled arc `head -> dependent`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DepArc {
    pub head: usize,
    pub dependent: usize,
    pub label: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParserAction {
    Shift,
    /// Second-from-top becomes a dependent of the top.
    Left(u32),
    /// Top becomes a dependent of the second-from-top.
    Right(u32),
}

/// A sentence as symbol ids; position 0 is ROOT.
#[derive(Debug, PartialEq)]
pub struct EncodedSentence {
    pub words: Vec<u32>,
    pub tags: Vec<u32>,
    pub punct: Vec<bool>,
}

impl EncodedSentence {
    pub fn len(&self) -> usize {
        self.words.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub type ParseInput = Arc<EncodedSentence>;

/// Gold tree as ids; index 0 unused. Labels outside the task's label set
/// are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedTree {
    pub heads: Vec<usize>,
    pub labels: Vec<Option<u32>>,
}

impl EncodedTree {
    pub fn len(&self) -> usize {
        self.heads.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Predicted tree as ids; index 0 unused.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedTree {
    pub heads: Vec<usize>,
    pub labels: Vec<u32>,
}

#[derive(Clone)]
pub struct ParserState {
    sent: ParseInput,
    stack: Vec<usize>,
    /// Next buffer position; positions `1..=n` are tokens and `n + 1` is ROOT.
    next: usize,
    heads: Vec<Option<usize>>,
    labels: Vec<u32>,
}

impl ParserState {
    pub fn initial(sent: ParseInput) -> Self {
        let n = sent.len();
        ParserState {
            sent,
            stack: Vec::with_capacity(n + 1),
            next: 1,
            heads: vec![None; n + 1],
            labels: vec![0; n + 1],
        }
    }

    /// Builds a state from explicit stack/buffer/arcs, checking that they
    /// partition `{0..n}`.
    pub fn from_parts(
        sent: ParseInput,
        stack: Vec<usize>,
        buffer: &[usize],
        arcs: &[(usize, usize, u32)],
    ) -> Result<Self> {
        let n = sent.len();
        let next = buffer.first().map_or(n + 2, |&b| if b == ROOT { n + 1 } else { b });
        let expected: Vec<usize> = (next..=n + 1).map(|p| if p == n + 1 { ROOT } else { p }).collect();
        if buffer != expected.as_slice() {
            return Err(Error::Invariant(format!("buffer {buffer:?} is not a suffix of [1..{n}, ROOT]")));
        }
        let mut s = ParserState {
            sent,
            stack,
            next,
            heads: vec![None; n + 1],
            labels: vec![0; n + 1],
        };
        for &(h, d, l) in arcs {
            s.heads[d] = Some(h);
            s.labels[d] = l;
        }
        s.check_partition()?;
        Ok(s)
    }

    pub fn n(&self) -> usize {
        self.sent.len()
    }

    pub fn sentence(&self) -> &EncodedSentence {
        &self.sent
    }

    pub fn stack(&self) -> &[usize] {
        &self.stack
    }

    pub fn buffer(&self) -> Vec<usize> {
        let n = self.n();
        (self.next..=n + 1).map(|p| if p == n + 1 { ROOT } else { p }).collect()
    }

    pub fn buffer_len(&self) -> usize {
        (self.n() + 2).saturating_sub(self.next)
    }

    fn buffer_front(&self) -> Option<usize> {
        let n = self.n();
        match self.next {
            p if p <= n => Some(p),
            p if p == n + 1 => Some(ROOT),
            _ => None,
        }
    }

    pub fn head_of(&self, token: usize) -> Option<usize> {
        self.heads[token]
    }

    pub fn label_of(&self, token: usize) -> Option<u32> {
        self.heads[token].map(|_| self.labels[token])
    }

    /// Arcs built so far as `(head, dependent, label)`.
    pub fn arcs(&self) -> Vec<(usize, usize, u32)> {
        (1..=self.n())
            .filter_map(|d| self.heads[d].map(|h| (h, d, self.labels[d])))
            .collect()
    }

    pub fn is_terminal(&self) -> bool {
        self.stack == [ROOT] && self.buffer_len() == 0
    }

    /// Stack, buffer and reduced tokens partition `{0..n}` and each token
    /// has at most one head.
    pub fn check_partition(&self) -> Result<()> {
        let n = self.n();
        let mut seen = vec![false; n + 1];
        let buffer = self.buffer();
        for &t in self.stack.iter().chain(&buffer) {
            if t > n || seen[t] {
                return Err(Error::Invariant(format!("token {t} appears twice or out of range")));
            }
            if t != ROOT && self.heads[t].is_some() {
                return Err(Error::Invariant(format!("token {t} has a head but is still active")));
            }
            seen[t] = true;
        }
        for t in 1..=n {
            if !seen[t] && self.heads[t].is_none() {
                return Err(Error::Invariant(format!("token {t} is neither active nor attached")));
            }
        }
        if self.heads[ROOT].is_some() {
            return Err(Error::Invariant("ROOT has a head".into()));
        }
        if let Some(p) = self.stack.iter().position(|&t| t == ROOT) {
            if p + 1 != self.stack.len() || self.buffer_len() != 0 {
                return Err(Error::Invariant("ROOT on the stack must be on top with an empty buffer".into()));
            }
        }
        Ok(())
    }

    fn position(&self, t: usize) -> usize {
        if t == ROOT {
            self.n() + 1
        } else {
            t
        }
    }

    fn leftmost_dep(&self, h: usize) -> Option<usize> {
        let ph = self.position(h);
        (1..ph.min(self.n() + 1)).find(|&d| self.heads[d] == Some(h))
    }

    fn rightmost_dep(&self, h: usize) -> Option<usize> {
        let ph = self.position(h);
        (ph + 1..=self.n()).rev().find(|&d| self.heads[d] == Some(h))
    }
}

impl fmt::Debug for ParserState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParserState")
            .field("stack", &self.stack)
            .field("buffer", &self.buffer())
            .field("arcs", &self.arcs())
            .finish()
    }
}

impl PartialEq for ParserState {
    fn eq(&self, other: &Self) -> bool {
        self.sent == other.sent
            && self.stack == other.stack
            && self.next == other.next
            && self.arcs() == other.arcs()
    }
}

/// Which tags count as punctuation for LAS.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PunctFilter {
    pub tags: Vec<String>,
}

impl Default for PunctFilter {
    fn default() -> Self {
        PunctFilter {
            tags: vec!["PUNCT".to_string()],
        }
    }
}

impl PunctFilter {
    pub fn is_punct(&self, tag: &str) -> bool {
        self.tags.iter().any(|t| t == tag)
    }
}

/// Arc-standard parsing over a fixed word/tag/label inventory.
#[derive(Clone, Debug, PartialEq)]
pub struct ParseTask {
    words: Vocab,
    tags: Vocab,
    labels: Vocab,
    /// Label feature table: NONE, UNK, then labels.
    label_feats: Vocab,
    punct: PunctFilter,
}

#[derive(Serialize, Deserialize)]
struct ParseMeta {
    words: Vocab,
    tags: Vocab,
    labels: Vocab,
    punct: PunctFilter,
}

impl ParseTask {
    /// Vocabularies are collected from `treebank` (normally the training set).
    pub fn from_treebank(treebank: &[(Sentence, GoldTree)], punct: PunctFilter) -> Self {
        let mut words = Vocab::with_specials(&[NONE, UNK, ROOT_SYMBOL]);
        let mut tags = Vocab::with_specials(&[NONE, UNK, ROOT_SYMBOL]);
        let mut labels = Vocab::new();
        for (s, t) in treebank {
            for tok in &s.tokens {
                words.add(&tok.form);
                tags.add(&tok.upos);
            }
            for l in &t.labels {
                labels.add(l);
            }
        }
        Self::with_vocabs(words, tags, labels, punct)
    }

    fn with_vocabs(words: Vocab, tags: Vocab, labels: Vocab, punct: PunctFilter) -> Self {
        let mut label_feats = Vocab::with_specials(&[NONE, UNK]);
        for l in labels.symbols() {
            label_feats.add(l);
        }
        ParseTask {
            words,
            tags,
            labels,
            label_feats,
            punct,
        }
    }

    pub fn labels(&self) -> &Vocab {
        &self.labels
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn punct(&self) -> &PunctFilter {
        &self.punct
    }

    pub fn action_id(&self, action: ParserAction) -> ActionId {
        let l = self.num_labels();
        match action {
            ParserAction::Shift => 0,
            ParserAction::Left(x) => 1 + x as usize,
            ParserAction::Right(x) => 1 + l + x as usize,
        }
    }

    pub fn action(&self, id: ActionId) -> ParserAction {
        let l = self.num_labels();
        match id {
            0 => ParserAction::Shift,
            i if i <= l => ParserAction::Left((i - 1) as u32),
            i => ParserAction::Right((i - 1 - l) as u32),
        }
    }

    pub fn encode_sentence(&self, s: &Sentence) -> ParseInput {
        let mut words = vec![ROOT_ID];
        let mut tags = vec![ROOT_ID];
        let mut punct = vec![false];
        for t in &s.tokens {
            words.push(self.words.lookup(&t.form));
            tags.push(self.tags.lookup(&t.upos));
            punct.push(self.punct.is_punct(&t.upos));
        }
        Arc::new(EncodedSentence { words, tags, punct })
    }

    pub fn encode_tree(&self, t: &GoldTree) -> EncodedTree {
        let mut heads = vec![0];
        heads.extend_from_slice(&t.heads);
        let mut labels = vec![None];
        labels.extend(t.labels.iter().map(|l| self.labels.get(l)));
        EncodedTree { heads, labels }
    }

    pub fn encode(&self, data: &[(Sentence, GoldTree)]) -> Vec<(ParseInput, EncodedTree)> {
        data.iter()
            .map(|(s, t)| (self.encode_sentence(s), self.encode_tree(t)))
            .collect()
    }

    pub fn arcs(&self, tree: &ParsedTree) -> Vec<DepArc> {
        (1..tree.heads.len())
            .map(|d| DepArc {
                head: tree.heads[d],
                dependent: d,
                label: self.labels.symbol(tree.labels[d]).to_string(),
            })
            .collect()
    }

    pub fn is_legal(&self, s: &ParserState, action: ParserAction) -> bool {
        self.check_legal(s, action).is_ok()
    }

    fn check_legal(&self, s: &ParserState, action: ParserAction) -> Result<()> {
        let illegal = |reason: &str| {
            Err(Error::IllegalAction {
                action: format!("{action:?}"),
                reason: reason.to_string(),
            })
        };
        if s.is_terminal() {
            return Err(Error::TerminalState);
        }
        match action {
            ParserAction::Shift => match s.buffer_front() {
                None => illegal("Shift requires a non-empty buffer"),
                Some(ROOT) if s.stack.len() != 1 => illegal("ROOT may only be shifted onto a single-token stack"),
                _ => Ok(()),
            },
            ParserAction::Left(l) | ParserAction::Right(l) if l as usize >= self.num_labels() => {
                illegal("unknown label")
            }
            ParserAction::Left(_) if s.stack.len() < 2 => illegal("Left requires at least two stack items"),
            ParserAction::Right(_) if s.stack.len() < 2 => illegal("Right requires at least two stack items"),
            ParserAction::Right(_) if s.stack.last() == Some(&ROOT) => illegal("ROOT cannot become a dependent"),
            _ => Ok(()),
        }
    }

    /// Applies `action` to `s`.
    pub fn apply(&self, s: &ParserState, action: ParserAction) -> Result<ParserState> {
        self.check_legal(s, action)?;
        let mut next = s.clone();
        match action {
            ParserAction::Shift => {
                let t = s.buffer_front().expect("checked");
                next.stack.push(t);
                next.next += 1;
            }
            ParserAction::Left(l) => {
                let j = next.stack.pop().expect("checked");
                let i = next.stack.pop().expect("checked");
                next.heads[i] = Some(j);
                next.labels[i] = l;
                next.stack.push(j);
            }
            ParserAction::Right(l) => {
                let j = next.stack.pop().expect("checked");
                let i = *next.stack.last().expect("checked");
                next.heads[j] = Some(i);
                next.labels[j] = l;
            }
        }
        Ok(next)
    }

    pub fn legal(&self, s: &ParserState) -> Vec<ParserAction> {
        self.legal_actions(s).into_iter().map(|a| self.action(a)).collect()
    }

    /// Eager canonical reference action: Left if the second item's gold head
    /// is the top and it is complete, else Right symmetrically, else Shift.
    pub fn static_oracle(&self, s: &ParserState, gold: &EncodedTree) -> Result<ParserAction> {
        if s.is_terminal() {
            return Err(Error::TerminalState);
        }
        let complete = |t: usize| {
            (1..gold.heads.len()).all(|d| gold.heads[d] != t || s.heads[d] == Some(t))
        };
        let label = |d: usize| {
            gold.labels[d].ok_or_else(|| Error::InvalidGold(format!("label of token {d} is outside the label set")))
        };
        if let [.., i, j] = s.stack[..] {
            if i != ROOT && gold.heads[i] == j && complete(i) {
                return Ok(ParserAction::Left(label(i)?));
            }
            if j != ROOT && gold.heads[j] == i && complete(j) {
                return Ok(ParserAction::Right(label(j)?));
            }
        }
        if self.is_legal(s, ParserAction::Shift) {
            return Ok(ParserAction::Shift);
        }
        Err(Error::Unreachable(format!("no reference action at {s:?}")))
    }

    /// Builds a tree from a complete action sequence.
    pub fn replay(&self, sent: &ParseInput, actions: &[ParserAction]) -> Result<ParsedTree> {
        let mut s = ParserState::initial(sent.clone());
        for &a in actions {
            s = self.apply(&s, a)?;
        }
        if !s.is_terminal() {
            return Err(Error::Invariant("action sequence does not reach a terminal state".into()));
        }
        Ok(self.output(&s))
    }
}

impl Task for ParseTask {
    type Input = ParseInput;
    type Gold = EncodedTree;
    type State = ParserState;
    type Output = ParsedTree;

    fn num_actions(&self) -> usize {
        1 + 2 * self.num_labels()
    }

    fn action_name(&self, id: ActionId) -> String {
        match self.action(id) {
            ParserAction::Shift => "SHIFT".to_string(),
            ParserAction::Left(l) => format!("LEFT({})", self.labels.symbol(l)),
            ParserAction::Right(l) => format!("RIGHT({})", self.labels.symbol(l)),
        }
    }

    fn initial_state(&self, input: &ParseInput) -> ParserState {
        ParserState::initial(input.clone())
    }

    fn is_terminal(&self, s: &ParserState) -> bool {
        s.is_terminal()
    }

    fn legal_actions(&self, s: &ParserState) -> Vec<ActionId> {
        if s.is_terminal() {
            return Vec::new();
        }
        let l = self.num_labels();
        let mut out = Vec::with_capacity(1 + 2 * l);
        if self.is_legal(s, ParserAction::Shift) {
            out.push(0);
        }
        if s.stack.len() >= 2 {
            out.extend(1..=l);
            if s.stack.last() != Some(&ROOT) {
                out.extend(l + 1..=2 * l);
            }
        }
        out
    }

    fn transition(&self, s: &ParserState, a: ActionId) -> Result<ParserState> {
        if a >= self.num_actions() {
            return Err(Error::IllegalAction {
                action: a.to_string(),
                reason: "action id out of range".into(),
            });
        }
        self.apply(s, self.action(a))
    }

    fn reference_action(&self, s: &ParserState, gold: &EncodedTree) -> Result<ActionId> {
        Ok(self.action_id(self.static_oracle(s, gold)?))
    }

    fn validate_gold(&self, input: &ParseInput, gold: &EncodedTree) -> Result<()> {
        if gold.len() != input.len() {
            return Err(Error::InvalidGold(format!(
                "gold tree has {} tokens but sentence has {}",
                gold.len(),
                input.len()
            )));
        }
        let tree = GoldTree {
            heads: gold.heads[1..].to_vec(),
            labels: vec![String::new(); gold.len()],
        };
        tree.validate()?;
        let crossing = tree.crossing_arcs();
        if !crossing.is_empty() {
            let desc: Vec<String> = crossing
                .iter()
                .map(|((h1, d1), (h2, d2))| format!("{h1}->{d1} x {h2}->{d2}"))
                .collect();
            return Err(Error::NonProjective(desc.join(", ")));
        }
        Ok(())
    }

    fn output(&self, s: &ParserState) -> ParsedTree {
        ParsedTree {
            heads: s.heads.iter().map(|h| h.unwrap_or(ROOT)).collect(),
            labels: s.labels.clone(),
        }
    }

    fn layout(&self) -> FeatureLayout {
        FeatureLayout {
            slot_tables: [[0; 3], [1; 3]]
                .concat()
                .into_iter()
                .chain([0, 0, 1, 1])
                .chain([2; 4])
                .collect(),
            table_sizes: vec![self.words.len(), self.tags.len(), self.label_feats.len()],
        }
    }

    /// Slots: s0..s2 words, s0..s2 tags, b0..b1 words, b0..b1 tags, then
    /// labels of lc(s0), rc(s0), lc(s1), rc(s1).
    fn features(&self, s: &ParserState, out: &mut Vec<u32>) {
        out.clear();
        let sent = &s.sent;
        let stack_at = |k: usize| s.stack.len().checked_sub(k + 1).map(|i| s.stack[i]);
        let buf_at = |k: usize| {
            let p = s.next + k;
            let n = s.n();
            match p {
                p if p <= n => Some(p),
                p if p == n + 1 => Some(ROOT),
                _ => None,
            }
        };
        let word = |t: Option<usize>| t.map_or(NONE_ID, |t| sent.words[t]);
        let tag = |t: Option<usize>| t.map_or(NONE_ID, |t| sent.tags[t]);
        let dep_label = |d: Option<usize>| d.map_or(NONE_ID, |d| 2 + s.labels[d]);
        let stacks = [stack_at(0), stack_at(1), stack_at(2)];
        out.extend(stacks.iter().map(|&t| word(t)));
        out.extend(stacks.iter().map(|&t| tag(t)));
        let bufs = [buf_at(0), buf_at(1)];
        out.extend(bufs.iter().map(|&t| word(t)));
        out.extend(bufs.iter().map(|&t| tag(t)));
        for t in [stacks[0], stacks[1]] {
            out.push(dep_label(t.and_then(|t| s.leftmost_dep(t))));
            out.push(dep_label(t.and_then(|t| s.rightmost_dep(t))));
        }
    }

    fn metric(&self, inputs: &[&ParseInput], golds: &[&EncodedTree], outputs: &[ParsedTree]) -> f64 {
        let mut stats = LasStats::default();
        for ((x, g), o) in inputs.iter().zip(golds).zip(outputs) {
            stats.add(&encoded_las_stats(x, g, o));
        }
        stats.score()
    }
}

impl TaskMeta for ParseTask {
    const NAME: &'static str = "parse";

    fn meta(&self) -> serde_json::Value {
        serde_json::to_value(ParseMeta {
            words: self.words.clone(),
            tags: self.tags.clone(),
            labels: self.labels.clone(),
            punct: self.punct.clone(),
        })
        .expect("vocabularies serialise")
    }

    fn from_meta(meta: &serde_json::Value) -> Result<Self> {
        let m: ParseMeta = serde_json::from_value(meta.clone())?;
        Ok(Self::with_vocabs(m.words, m.tags, m.labels, m.punct))
    }
}

/// Labelled-attachment counts over non-punctuation tokens.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LasStats {
    pub correct: usize,
    pub total: usize,
}

impl LasStats {
    pub fn add(&mut self, o: &LasStats) {
        self.correct += o.correct;
        self.total += o.total;
    }

    /// Percentage; 100 when there is nothing to score.
    pub fn score(&self) -> f64 {
        if self.total == 0 {
            100.0
        } else {
            100.0 * self.correct as f64 / self.total as f64
        }
    }
}

fn encoded_las_stats(x: &EncodedSentence, g: &EncodedTree, o: &ParsedTree) -> LasStats {
    let mut st = LasStats::default();
    for d in 1..g.heads.len() {
        if x.punct[d] {
            continue;
        }
        st.total += 1;
        if o.heads[d] == g.heads[d] && g.labels[d] == Some(o.labels[d]) {
            st.correct += 1;
        }
    }
    st
}

/// Per-sentence LAS counts for a predicted arc set.
pub fn las_stats(predicted: &[DepArc], sentence: &Sentence, gold: &GoldTree, punct: &PunctFilter) -> Result<LasStats> {
    let n = sentence.len();
    let mut pred: Vec<Option<&DepArc>> = vec![None; n + 1];
    for a in predicted {
        if a.dependent == 0 || a.dependent > n {
            return Err(Error::Invariant(format!("arc dependent {} out of range", a.dependent)));
        }
        if pred[a.dependent].replace(a).is_some() {
            return Err(Error::Invariant(format!("token {} has two predicted heads", a.dependent)));
        }
    }
    let mut st = LasStats::default();
    for d in 1..=n {
        let arc = pred[d].ok_or_else(|| Error::Invariant(format!("token {d} has no predicted head")))?;
        if punct.is_punct(&sentence.token(d).upos) {
            continue;
        }
        st.total += 1;
        if arc.head == gold.head(d) && arc.label == gold.label(d) {
            st.correct += 1;
        }
    }
    Ok(st)
}

/// Labelled attachment score in `[0, 100]`, punctuation excluded.
pub fn las(predicted: &[DepArc], sentence: &Sentence, gold: &GoldTree, punct: &PunctFilter) -> Result<f64> {
    Ok(las_stats(predicted, sentence, gold, punct)?.score())
}

/// Unique tokens used in `data`, for quick corpus summaries.
pub fn vocabulary_size(data: &[(Sentence, GoldTree)]) -> usize {
    data.iter()
        .flat_map(|(s, _)| s.tokens.iter().map(|t| t.form.as_str()))
        .collect::<HashSet<_>>()
        .len()
}
