//! Exact dynamic oracle for arc-standard parsing.
//!
//! From any state, the trees still reachable are projective trees over the
//! sequence `stack ++ buffer` in which ROOT (always last) takes a single
//! child, subject to a restriction on words buried in the stack (see
//! `max_gold_arcs`); arcs already built are fixed. The best achievable
//! labelled loss is therefore the committed loss plus the number of active
//! tokens whose gold arc cannot be kept, where the maximum number of gold
//! arcs kept is found with Eisner's first-order projective algorithm.

use super::{EncodedTree, ParseTask, ParserState, ROOT};
use crate::error::{Error, Result};
use crate::search::{ActionId, Task};

/// Optimal next actions at a state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OracleSet {
    pub actions: Vec<ActionId>,
    /// Best labelled loss reachable from the state itself.
    pub best_loss: usize,
    /// Best reachable loss after each legal action.
    pub costs: Vec<(ActionId, usize)>,
}

fn committed_loss(s: &ParserState, gold: &EncodedTree) -> usize {
    (1..=s.n())
        .filter(|&d| match s.head_of(d) {
            Some(h) => h != gold.heads[d] || gold.labels[d] != s.label_of(d),
            None => false,
        })
        .count()
}

/// Most gold arcs a tree reachable from a stack of `stack_len` words
/// followed by the buffer can contain, with ROOT taking exactly one child.
///
/// Reachable trees are the projective trees over `words` in which every
/// stack word below the top that takes no new right dependent also takes no
/// new left dependent and is attached to a head on its right. First-order
/// Eisner spans enforce this by keeping, for such words, a left-attachment
/// variant whose right half is non-trivial.
fn max_gold_arcs(words: &[usize], stack_len: usize, gold: &EncodedTree) -> i32 {
    const NEG: i32 = i32::MIN / 4;
    let m = words.len();
    if m == 0 {
        return 0;
    }
    let buried = |p: usize| p + 1 < stack_len;
    let gain = |h: usize, d: usize| i32::from(gold.heads[d] == h && gold.labels[d].is_some());
    let idx = |i: usize, j: usize| i * m + j;
    // complete / incomplete spans; `r` = head on the left, `l` = head on the right
    let mut cr = vec![NEG; m * m];
    let mut cl = vec![NEG; m * m];
    let mut ir = vec![NEG; m * m];
    let mut il = vec![NEG; m * m];
    // `il` restricted to a dependent with a non-trivial right half
    let mut il_wide = vec![NEG; m * m];
    for i in 0..m {
        cr[idx(i, i)] = 0;
        cl[idx(i, i)] = 0;
    }
    for len in 1..m {
        for i in 0..m - len {
            let j = i + len;
            let mut best = NEG;
            let mut wide = NEG;
            for k in i..j {
                let v = cr[idx(i, k)] + cl[idx(k + 1, j)];
                best = best.max(v);
                if k > i {
                    wide = wide.max(v);
                }
            }
            il[idx(i, j)] = best + gain(words[j], words[i]);
            il_wide[idx(i, j)] = wide + gain(words[j], words[i]);
            ir[idx(i, j)] = best + gain(words[i], words[j]);
            let mut bl = NEG;
            for k in i..j {
                let attach = if buried(k) && k > i { il_wide[idx(k, j)] } else { il[idx(k, j)] };
                bl = bl.max(cl[idx(i, k)] + attach);
            }
            cl[idx(i, j)] = bl;
            let mut br = NEG;
            for k in i + 1..=j {
                if buried(k) && k == j {
                    continue;
                }
                br = br.max(ir[idx(i, k)] + cr[idx(k, j)]);
            }
            cr[idx(i, j)] = br;
        }
    }
    (0..m)
        .map(|c| gain(ROOT, words[c]) + cl[idx(0, c)] + cr[idx(c, m - 1)])
        .max()
        .expect("m > 0")
}

/// Smallest labelled loss (tokens with wrong head or label) of any tree
/// reachable from `s`.
pub fn best_loss(s: &ParserState, gold: &EncodedTree) -> usize {
    let mut words: Vec<usize> = s.stack().iter().copied().filter(|&t| t != ROOT).collect();
    let stack_len = words.len();
    words.extend(s.buffer().into_iter().filter(|&t| t != ROOT));
    let kept = max_gold_arcs(&words, stack_len, gold) as usize;
    committed_loss(s, gold) + words.len() - kept
}

/// Legal actions whose successor keeps the best achievable loss.
pub fn dynamic_oracle(task: &ParseTask, s: &ParserState, gold: &EncodedTree) -> Result<OracleSet> {
    if s.is_terminal() {
        return Err(Error::TerminalState);
    }
    let legal = task.legal_actions(s);
    let costs = legal
        .iter()
        .map(|&a| Ok((a, best_loss(&task.transition(s, a)?, gold))))
        .collect::<Result<Vec<_>>>()?;
    let min = costs.iter().map(|c| c.1).min().expect("non-terminal states have a legal action");
    let actions: Vec<ActionId> = costs.iter().filter(|c| c.1 == min).map(|c| c.0).collect();
    Ok(OracleSet {
        actions,
        best_loss: best_loss(s, gold),
        costs,
    })
}
