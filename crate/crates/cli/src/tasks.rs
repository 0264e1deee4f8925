//! Per-task corpus IO and scoring used by the commands.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use searchkd::classifier::TaskMeta;
use searchkd::eval::CorpusStats;
use searchkd::parser::{
    filter_projective, las_stats, read_conll, read_conll_str, write_conll, GoldTree, LasStats, ParseTask,
    PunctFilter, Sentence,
};
use searchkd::transducer::{read_parallel_tsv, BleuStats, ParallelPair, TransduceTask};

pub trait CliTask: TaskMeta + Send + Sync + 'static
where
    Self::Input: Send + Sync,
    Self::Gold: Send + Sync,
{
    /// A corpus item as read from disk.
    type Raw: Clone + Send + Sync;
    type Stats: CorpusStats;
    /// Extension of prediction files.
    const EXT: &'static str;

    fn read(path: &Path, skip_nonprojective: bool) -> Result<Vec<Self::Raw>>;

    fn build(train: &[Self::Raw]) -> Self;

    fn encode_raw(&self, raw: &[Self::Raw]) -> Vec<(Self::Input, Self::Gold)>;

    /// Per-sentence metric statistics of `output` against the raw gold.
    fn stats(&self, raw: &Self::Raw, output: &Self::Output) -> Result<Self::Stats>;

    /// Renders outputs in the corpus format.
    fn render(&self, raw: &[Self::Raw], outputs: &[Self::Output]) -> String;

    /// Scores a pre-computed hypothesis file against `raw`.
    fn hypothesis_stats(&self, path: &Path, raw: &[Self::Raw]) -> Result<Vec<Self::Stats>>;
}

impl CliTask for ParseTask {
    type Raw = (Sentence, GoldTree);
    type Stats = LasStats;
    const EXT: &'static str = "conllu";

    fn read(path: &Path, skip_nonprojective: bool) -> Result<Vec<Self::Raw>> {
        let data = read_conll(path).with_context(|| format!("reading {}", path.display()))?;
        let (kept, report) = filter_projective(data);
        if report.skipped_nonprojective > 0 {
            if !skip_nonprojective {
                bail!(
                    "{} has {} non-projective sentences; pass --skip-nonprojective to drop them",
                    path.display(),
                    report.skipped_nonprojective
                );
            }
            log::warn!("{}: skipped {} non-projective sentences", path.display(), report.skipped_nonprojective);
        }
        Ok(kept)
    }

    fn build(train: &[Self::Raw]) -> Self {
        ParseTask::from_treebank(train, PunctFilter::default())
    }

    fn encode_raw(&self, raw: &[Self::Raw]) -> Vec<(Self::Input, Self::Gold)> {
        self.encode(raw)
    }

    fn stats(&self, (s, g): &Self::Raw, output: &Self::Output) -> Result<LasStats> {
        Ok(las_stats(&self.arcs(output), s, g, self.punct())?)
    }

    fn render(&self, raw: &[Self::Raw], outputs: &[Self::Output]) -> String {
        let predicted: Vec<(Sentence, GoldTree)> = raw
            .iter()
            .zip(outputs)
            .map(|((s, _), o)| {
                let arcs = self.arcs(o);
                let mut heads = vec![0; s.len()];
                let mut labels = vec![String::new(); s.len()];
                for a in arcs {
                    heads[a.dependent - 1] = a.head;
                    labels[a.dependent - 1] = a.label;
                }
                (s.clone(), GoldTree { heads, labels })
            })
            .collect();
        write_conll(&predicted)
    }

    fn hypothesis_stats(&self, path: &Path, raw: &[Self::Raw]) -> Result<Vec<LasStats>> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let hyps = read_conll_str(&text, &path.display().to_string())?;
        if hyps.len() != raw.len() {
            bail!("{} has {} sentences but the test set has {}", path.display(), hyps.len(), raw.len());
        }
        hyps.iter()
            .zip(raw)
            .enumerate()
            .map(|(i, ((hs, ht), (s, g)))| {
                if hs.len() != s.len() {
                    bail!("hypothesis sentence {} has {} tokens, gold has {}", i + 1, hs.len(), s.len());
                }
                let arcs: Vec<_> = (1..=hs.len())
                    .map(|d| searchkd::parser::DepArc {
                        head: ht.head(d),
                        dependent: d,
                        label: ht.label(d).to_string(),
                    })
                    .collect();
                Ok(las_stats(&arcs, s, g, self.punct())?)
            })
            .collect()
    }
}

impl CliTask for TransduceTask {
    type Raw = ParallelPair;
    type Stats = BleuStats;
    const EXT: &'static str = "txt";

    fn read(path: &Path, _skip_nonprojective: bool) -> Result<Vec<Self::Raw>> {
        read_parallel_tsv(path).with_context(|| format!("reading {}", path.display()))
    }

    fn build(train: &[Self::Raw]) -> Self {
        TransduceTask::from_corpus(train)
    }

    fn encode_raw(&self, raw: &[Self::Raw]) -> Vec<(Self::Input, Self::Gold)> {
        self.encode(raw)
    }

    fn stats(&self, raw: &ParallelPair, output: &Self::Output) -> Result<BleuStats> {
        Ok(BleuStats::sentence(&self.decode_target(output), &raw.target))
    }

    fn render(&self, _raw: &[Self::Raw], outputs: &[Self::Output]) -> String {
        outputs.iter().map(|o| self.decode_target(o).join(" ") + "\n").collect()
    }

    fn hypothesis_stats(&self, path: &Path, raw: &[Self::Raw]) -> Result<Vec<BleuStats>> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() != raw.len() {
            bail!("{} has {} lines but the test set has {}", path.display(), lines.len(), raw.len());
        }
        Ok(lines
            .iter()
            .zip(raw)
            .map(|(l, p)| {
                let hyp: Vec<String> = l.split_whitespace().map(str::to_string).collect();
                BleuStats::sentence(&hyp, &p.target)
            })
            .collect())
    }
}

/// Corpus score of per-sentence statistics.
pub fn corpus_score<S: CorpusStats>(stats: &[S]) -> f64 {
    let mut total = S::default();
    for s in stats {
        total.accumulate(s);
    }
    total.corpus_score()
}

/// Whether `task`'s model header matches `T`.
pub fn check_task<T: TaskMeta>(header_task: &str) -> Result<()> {
    if header_task != T::NAME {
        bail!("model was trained for task `{header_task}`, not `{}`", T::NAME);
    }
    Ok(())
}
