//! Generator for a small English-like treebank with controllable
//! prepositional-phrase attachment ambiguity.
//!
//! Whether a phrase prefers the verb or the nearest noun as its head is a
//! fixed bilinear function of latent vectors of the verb, the noun and the
//! preposition, so rare words leave the preference uncertain.
//! With probability `ambiguity_rate` a phrase instead draws its head at
//! random, taking the dispreferred head with probability
//! [`DISPREFERRED_PROB`]. Clauses may end in a `that`-complement clause. All
//! trees are projective.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{GoldTree, Sentence, Token, ROOT};
use crate::error::{Error, Result};
use crate::seed;

pub const DISPREFERRED_PROB: f64 = 0.35;

const NOUNS: usize = 150;
const VERBS: usize = 60;
const ADJS: usize = 20;
const DETS: usize = 4;
const PREPS: usize = 12;
const ADVS: usize = 10;
const GRAMMAR_SEED: u64 = 0x5eed;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTreebank {
    pub train: Vec<(Sentence, GoldTree)>,
    pub dev: Vec<(Sentence, GoldTree)>,
    pub test: Vec<(Sentence, GoldTree)>,
}

struct Lexicon {
    nouns: WeightedIndex<f64>,
    verbs: WeightedIndex<f64>,
    adjs: WeightedIndex<f64>,
    dets: WeightedIndex<f64>,
    preps: WeightedIndex<f64>,
    advs: WeightedIndex<f64>,
    /// Latent attachment vectors; see [`prefers_verb`].
    verb_vec: Vec<[f64; 2]>,
    noun_vec: Vec<[f64; 2]>,
    prep_verb: Vec<[f64; 2]>,
    prep_noun: Vec<[f64; 2]>,
}

fn zipf(n: usize) -> WeightedIndex<f64> {
    WeightedIndex::new((1..=n).map(|r| 1.0 / r as f64)).expect("positive weights")
}

impl Lexicon {
    fn new() -> Self {
        let mut rng = seed::rng(GRAMMAR_SEED);
        let mut vecs = |n: usize| -> Vec<[f64; 2]> {
            (0..n).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect()
        };
        Lexicon {
            nouns: zipf(NOUNS),
            verbs: zipf(VERBS),
            adjs: zipf(ADJS),
            dets: zipf(DETS),
            preps: zipf(PREPS),
            advs: zipf(ADVS),
            verb_vec: vecs(VERBS),
            noun_vec: vecs(NOUNS),
            prep_verb: vecs(PREPS),
            prep_noun: vecs(PREPS),
        }
    }
}

/// Whether a phrase headed by preposition `prep` prefers the verb `verb`
/// over the noun `noun` (all lexicon indices).
pub fn prefers_verb(verb: usize, noun: usize, prep: usize) -> bool {
    thread_local! {
        static LEX: Lexicon = Lexicon::new();
    }
    let dot = |a: [f64; 2], b: [f64; 2]| a[0] * b[0] + a[1] * b[1];
    LEX.with(|l| dot(l.verb_vec[verb], l.prep_verb[prep]) > dot(l.noun_vec[noun], l.prep_noun[prep]))
}

struct Builder {
    tokens: Vec<Token>,
    heads: Vec<usize>,
    labels: Vec<String>,
}

impl Builder {
    fn push(&mut self, form: String, upos: &str, label: &str) -> usize {
        self.tokens.push(Token {
            form,
            upos: upos.to_string(),
        });
        self.heads.push(usize::MAX);
        self.labels.push(label.to_string());
        self.tokens.len()
    }

    fn attach(&mut self, dep: usize, head: usize, label: &str) {
        self.heads[dep - 1] = head;
        self.labels[dep - 1] = label.to_string();
    }

    /// `[DET] ADJ* NOUN`; returns the noun token and its lexicon index.
    fn noun_phrase(&mut self, lex: &Lexicon, rng: &mut ChaCha8Rng) -> (usize, usize) {
        let mut mods = Vec::new();
        if rng.gen_bool(0.7) {
            let d = lex.dets.sample(rng);
            mods.push((self.push(format!("the{d}"), "DET", ""), "det"));
        }
        let adjs = if rng.gen_bool(0.35) { 1 + usize::from(rng.gen_bool(0.25)) } else { 0 };
        for _ in 0..adjs {
            let a = lex.adjs.sample(rng);
            mods.push((self.push(format!("adj{a}"), "ADJ", ""), "amod"));
        }
        let n = lex.nouns.sample(rng);
        let noun = self.push(format!("noun{n}"), "NOUN", "");
        for (m, l) in mods {
            self.attach(m, noun, l);
        }
        (noun, n)
    }

    /// Subject, optional adverb, verb, optional object, up to three
    /// prepositional phrases and an optional complement clause. Returns the
    /// verb token.
    fn clause(&mut self, lex: &Lexicon, rng: &mut ChaCha8Rng, ambiguity_rate: f64, depth: usize) -> usize {
        let (subj, _) = self.noun_phrase(lex, rng);
        let adv = rng.gen_bool(0.15).then(|| {
            let a = lex.advs.sample(rng);
            self.push(format!("adv{a}"), "ADV", "")
        });
        let v = lex.verbs.sample(rng);
        let verb = self.push(format!("verb{v}"), "VERB", "");
        self.attach(subj, verb, "nsubj");
        if let Some(a) = adv {
            self.attach(a, verb, "advmod");
        }
        // Heads a new phrase may attach to without crossing arcs, with the
        // lexicon index of nouns.
        let mut spine: Vec<(usize, Option<usize>)> = vec![(verb, None)];
        if rng.gen_bool(0.7) {
            let (obj, n) = self.noun_phrase(lex, rng);
            self.attach(obj, verb, "obj");
            spine.push((obj, Some(n)));
        }
        let pps = [0.6, 0.4, 0.2].iter().take_while(|&&p| rng.gen_bool(p)).count();
        for _ in 0..pps {
            let p = lex.preps.sample(rng);
            let prep = self.push(format!("prep{p}"), "ADP", "");
            let (noun, n) = self.noun_phrase(lex, rng);
            self.attach(prep, noun, "case");
            let (preferred, other) = match spine.last().copied() {
                Some((h, Some(hn))) if prefers_verb(v, hn, p) => (verb, h),
                Some((h, Some(_))) => (h, verb),
                _ => (verb, verb),
            };
            let head = if rng.gen_bool(ambiguity_rate) && rng.gen_bool(DISPREFERRED_PROB) {
                other
            } else {
                preferred
            };
            self.attach(noun, head, if head == verb { "obl" } else { "nmod" });
            let keep = spine.iter().position(|&(h, _)| h == head).expect("head is on the spine");
            spine.truncate(keep + 1);
            spine.push((noun, Some(n)));
        }
        if depth == 0 && rng.gen_bool(0.25) {
            let mark = self.push("that".into(), "SCONJ", "");
            let inner = self.clause(lex, rng, ambiguity_rate, depth + 1);
            self.attach(mark, inner, "mark");
            self.attach(inner, verb, "ccomp");
        } else if rng.gen_bool(0.2) {
            let a = lex.advs.sample(rng);
            let adv = self.push(format!("adv{a}"), "ADV", "");
            self.attach(adv, verb, "advmod");
        }
        verb
    }
}

fn sentence(lex: &Lexicon, rng: &mut ChaCha8Rng, ambiguity_rate: f64) -> (Sentence, GoldTree) {
    let mut b = Builder {
        tokens: Vec::new(),
        heads: Vec::new(),
        labels: Vec::new(),
    };
    let verb = b.clause(lex, rng, ambiguity_rate, 0);
    b.attach(verb, ROOT, "root");
    if rng.gen_bool(0.8) {
        let p = b.push(".".into(), "PUNCT", "");
        b.attach(p, verb, "punct");
    }
    let tree = GoldTree {
        heads: b.heads,
        labels: b.labels,
    };
    debug_assert!(tree.validate().is_ok() && tree.is_projective());
    (Sentence { tokens: b.tokens }, tree)
}

fn split(seed: u64, part: u64, count: usize, ambiguity_rate: f64) -> Vec<(Sentence, GoldTree)> {
    let lex = Lexicon::new();
    let mut rng = seed::rng(seed::derive(seed, seed::STREAM_CORPUS, &[0, part]));
    (0..count).map(|_| sentence(&lex, &mut rng, ambiguity_rate)).collect()
}

/// `size` training sentences plus dev and test sets of `size / 4` each.
pub fn make_synthetic_treebank(seed: u64, size: usize, ambiguity_rate: f64) -> Result<SyntheticTreebank> {
    if size < 10 {
        return Err(Error::Config(format!("synthetic corpus size must be at least 10, got {size}")));
    }
    if !(0.0..=1.0).contains(&ambiguity_rate) {
        return Err(Error::Config(format!("ambiguity rate must be in [0, 1], got {ambiguity_rate}")));
    }
    let held_out = size / 4;
    Ok(SyntheticTreebank {
        train: split(seed, 0, size, ambiguity_rate),
        dev: split(seed, 1, held_out, ambiguity_rate),
        test: split(seed, 2, held_out, ambiguity_rate),
    })
}
