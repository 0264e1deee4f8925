//! CoNLL-X / CoNLL-U reading and writing.
//!
//! Columns used: ID (0), FORM (1), UPOS/CPOSTAG (3), HEAD (6), DEPREL (7).
//! Comment lines (`#`), multiword ranges (`1-2`) and empty nodes (`1.1`) are
//! skipped.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{GoldTree, Sentence, Token};
use crate::error::{Error, Result};

/// Counts produced while filtering a treebank.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConllReport {
    pub sentences: usize,
    pub skipped_nonprojective: usize,
}

pub fn read_conll(path: impl AsRef<Path>) -> Result<Vec<(Sentence, GoldTree)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    read_conll_str(&text, &path.display().to_string())
}

/// Parses CoNLL text; `origin` names the source in error messages.
pub fn read_conll_str(text: &str, origin: &str) -> Result<Vec<(Sentence, GoldTree)>> {
    let err = |line: usize, msg: String| Error::Parse {
        path: origin.to_string(),
        line,
        msg,
    };
    let mut out = Vec::new();
    let mut tokens = Vec::new();
    let mut heads = Vec::new();
    let mut labels = Vec::new();
    let mut start_line = 1;

    let mut flush = |tokens: &mut Vec<Token>, heads: &mut Vec<usize>, labels: &mut Vec<String>, start: usize| {
        if tokens.is_empty() {
            return Ok(());
        }
        let tree = GoldTree {
            heads: std::mem::take(heads),
            labels: std::mem::take(labels),
        };
        let sentence = Sentence {
            tokens: std::mem::take(tokens),
        };
        tree.validate().map_err(|e| {
            let preview: Vec<&str> = sentence.tokens.iter().take(5).map(|t| t.form.as_str()).collect();
            err(
                start,
                format!("sentence {} (\"{} ...\"): {e}", out.len() + 1, preview.join(" ")),
            )
        })?;
        out.push((sentence, tree));
        Ok::<(), Error>(())
    };

    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut tokens, &mut heads, &mut labels, start_line)?;
            start_line = lineno + 1;
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(err(lineno, format!("expected 10 tab-separated columns, found {}", cols.len())));
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let id: usize = cols[0]
            .parse()
            .map_err(|_| err(lineno, format!("non-integer ID `{}`", cols[0])))?;
        if id != tokens.len() + 1 {
            return Err(err(lineno, format!("expected token ID {}, found {id}", tokens.len() + 1)));
        }
        let head: usize = cols[6]
            .parse()
            .map_err(|_| err(lineno, format!("non-integer HEAD `{}`", cols[6])))?;
        tokens.push(Token {
            form: cols[1].to_string(),
            upos: cols[3].to_string(),
        });
        heads.push(head);
        labels.push(cols[7].to_string());
    }
    flush(&mut tokens, &mut heads, &mut labels, start_line)?;
    Ok(out)
}

/// Drops non-projective sentences and reports how many were removed.
pub fn filter_projective(data: Vec<(Sentence, GoldTree)>) -> (Vec<(Sentence, GoldTree)>, ConllReport) {
    let total = data.len();
    let kept: Vec<_> = data.into_iter().filter(|(_, t)| t.is_projective()).collect();
    let report = ConllReport {
        sentences: kept.len(),
        skipped_nonprojective: total - kept.len(),
    };
    (kept, report)
}

/// CoNLL-U text with `_` in the unused columns.
pub fn write_conll(data: &[(Sentence, GoldTree)]) -> String {
    let mut s = String::new();
    for (sent, tree) in data {
        for (i, tok) in sent.tokens.iter().enumerate() {
            writeln!(
                s,
                "{}\t{}\t_\t{}\t_\t_\t{}\t{}\t_\t_",
                i + 1,
                tok.form,
                tok.upos,
                tree.heads[i],
                tree.labels[i]
            )
            .unwrap();
        }
        s.push('\n');
    }
    s
}
