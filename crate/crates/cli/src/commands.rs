use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use rayon::prelude::*;
use searchkd::classifier::TaskMeta;
use searchkd::distill::{distill, train_baseline};
use searchkd::ensemble::{member_seeds, train_ensemble, EnsembleManifest};
use searchkd::eval::{
    map_csv, map_score, paired_bootstrap, parse_grid, sample_problematic_states, spread, stability_report,
    stability_scores_csv, stability_summary_csv, sweep, sweep_csv, RunStats, SweepParameter,
};
use searchkd::parser::synthetic::make_synthetic_treebank;
use searchkd::parser::{write_conll, ParseTask};
use searchkd::search::{decode_all, evaluate};
use searchkd::transducer::{make_synthetic_corpus, write_parallel_tsv, TransduceTask};
use searchkd::{
    ActionDistribution, ClassifierModel, DistillConfig, EnsembleModel, ModelConfig, Regime, Scorer, Task,
    TrainConfig, TrainOutcome,
};
use serde_json::{json, Map, Value};

use crate::output::{manifest_for, OutputDir, MANIFEST};
use crate::tasks::{check_task, corpus_score, CliTask};
use crate::{
    config, default_alpha, default_temperature, parse_args, parse_mix, parse_topk, AnalyzeArgs, Command,
    DataArgs, DistillArgs, EvalArgs, MakeSyntheticArgs, RegimeArg, RerunArgs, StabilityArgs, SweepArgs,
    SweepParam, TaskKind, TrainArgs, TrainEnsembleArgs,
};

const PATH_KEYS: &[&str] = &["train", "dev", "test", "ensemble", "model", "hypotheses", "compare", "data", "baseline"];

macro_rules! dispatch {
    ($kind:expr, $f:ident, $($arg:expr),*) => {
        match $kind {
            TaskKind::Parse => $f::<ParseTask>($($arg),*),
            TaskKind::Transduce => $f::<TransduceTask>($($arg),*),
        }
    };
}

pub fn run(command: Command) -> Result<String> {
    let name = command.name();
    if let Command::Rerun(args) = command {
        return rerun(&args);
    }
    let jobs = match &command {
        Command::MakeSynthetic(a) => a.common.jobs,
        Command::Train(a) => a.common.jobs,
        Command::TrainEnsemble(a) => a.train.common.jobs,
        Command::Distill(a) => a.train.common.jobs,
        Command::Eval(a) => a.common.jobs,
        Command::AnalyzeStates(a) => a.common.jobs,
        Command::Sweep(a) => a.distill.train.common.jobs,
        Command::Stability(a) => a.distill.train.common.jobs,
        Command::Rerun(_) => unreachable!(),
    };
    ensure!(jobs >= 1, "--jobs must be at least 1");
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    let (out, mut summary) = pool.install(|| -> Result<(PathBuf, Map<String, Value>)> {
        match command {
            Command::MakeSynthetic(a) => make_synthetic(a),
            Command::Train(a) => dispatch!(a.data.task, train, a),
            Command::TrainEnsemble(a) => dispatch!(a.train.data.task, train_ens, a),
            Command::Distill(a) => dispatch!(a.train.data.task, distill_cmd, a),
            Command::Eval(a) => dispatch!(a.task, eval_cmd, a),
            Command::AnalyzeStates(a) => analyze_states(a),
            Command::Sweep(a) => dispatch!(a.distill.train.data.task, sweep_cmd, a),
            Command::Stability(a) => dispatch!(a.distill.train.data.task, stability_cmd, a),
            Command::Rerun(_) => unreachable!(),
        }
    })?;
    let mut line = Map::new();
    line.insert("command".into(), json!(name));
    line.insert("out".into(), json!(out.display().to_string()));
    line.append(&mut summary);
    Ok(Value::Object(line).to_string())
}

/// Writes the manifest and summary and moves the directory into place.
fn finish(out: OutputDir, manifest: config::Config, summary: Map<String, Value>) -> Result<(PathBuf, Map<String, Value>)> {
    out.write(MANIFEST, manifest.render())?;
    out.write_json("summary.json", &summary)?;
    Ok((out.commit()?, summary))
}

fn train_config(a: &TrainArgs, seed: u64) -> TrainConfig {
    let m = &a.model;
    TrainConfig {
        model: ModelConfig {
            embed_dim: m.embed_dim,
            hidden_dim: m.hidden_dim,
            seed,
        },
        lr: m.lr,
        clip: m.clip,
        max_epochs: m.epochs,
        patience: m.patience,
        halve_on_stall: m.halve_on_stall,
        seed,
    }
}

type Split<T> = Vec<(<T as Task>::Input, <T as Task>::Gold)>;

/// Training and dev sets encoded with `task` (or a task built from the
/// training data when `task` is `None`).
fn load_data<T: CliTask>(d: &DataArgs, task: Option<T>) -> Result<(T, Split<T>, Split<T>)>
where
    T::Input: Send + Sync,
    T::Gold: Send + Sync,
{
    let train_raw = T::read(&d.train, d.skip_nonprojective)?;
    ensure!(!train_raw.is_empty(), "{} contains no training items", d.train.display());
    let task = task.unwrap_or_else(|| T::build(&train_raw));
    let train = task.encode_raw(&train_raw);
    let dev = match &d.dev {
        Some(p) => task.encode_raw(&T::read(p, d.skip_nonprojective)?),
        None => Vec::new(),
    };
    Ok((task, train, dev))
}

fn outcome_summary(o: &TrainOutcome) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("best_dev".into(), json!(o.best_dev));
    m.insert("best_epoch".into(), json!(o.best_epoch));
    m.insert("epochs_run".into(), json!(o.log.len()));
    m.insert("truncated_trajectories".into(), json!(o.truncated));
    m.insert(
        "loss_audit".into(),
        json!({
            "reference_nll": o.audit.reference_nll,
            "reference_interpolated": o.audit.reference_interpolated,
            "exploration_kd": o.audit.exploration_kd,
        }),
    );
    m
}

fn make_synthetic(a: MakeSyntheticArgs) -> Result<(PathBuf, Map<String, Value>)> {
    let out = OutputDir::create(a.common.out.as_deref(), "make-synthetic")?;
    let seed = a.common.seed;
    let sizes = match a.task {
        TaskKind::Parse => {
            let tb = make_synthetic_treebank(seed, a.size, a.ambiguity)?;
            out.write("train.conllu", write_conll(&tb.train))?;
            out.write("dev.conllu", write_conll(&tb.dev))?;
            out.write("test.conllu", write_conll(&tb.test))?;
            [tb.train.len(), tb.dev.len(), tb.test.len()]
        }
        TaskKind::Transduce => {
            let c = make_synthetic_corpus(seed, a.size, a.ambiguity)?;
            out.write("train.tsv", write_parallel_tsv(&c.train.pairs))?;
            out.write("dev.tsv", write_parallel_tsv(&c.dev.pairs))?;
            out.write("test.tsv", write_parallel_tsv(&c.test.pairs))?;
            [c.train.pairs.len(), c.dev.pairs.len(), c.test.pairs.len()]
        }
    };
    let mut s = Map::new();
    s.insert("task".into(), json!(a.task));
    s.insert("train".into(), json!(sizes[0]));
    s.insert("dev".into(), json!(sizes[1]));
    s.insert("test".into(), json!(sizes[2]));
    finish(out, manifest_for("make-synthetic", &a, PATH_KEYS)?, s)
}

fn train<T: CliTask>(a: TrainArgs) -> Result<(PathBuf, Map<String, Value>)>
where
    T::Input: Send + Sync,
    T::Gold: Send + Sync,
{
    let manifest = manifest_for("train", &a, PATH_KEYS)?;
    let (task, train, dev) = load_data::<T>(&a.data, None)?;
    let out = OutputDir::create(a.common.out.as_deref(), "train")?;
    let o = train_baseline(&task, &train, &dev, &train_config(&a, a.common.seed))?;
    o.model.save(out.path("model.bin"))?;
    out.write("train_log.tsv", o.log_tsv())?;
    let mut s = outcome_summary(&o);
    s.insert("model".into(), json!("model.bin"));
    finish(out, manifest, s)
}

fn train_ens<T: CliTask>(a: TrainEnsembleArgs) -> Result<(PathBuf, Map<String, Value>)>
where
    T::Input: Send + Sync,
    T::Gold: Send + Sync,
{
    let manifest = manifest_for("train-ensemble", &a, PATH_KEYS)?;
    ensure!(a.m >= 1, "--m must be at least 1");
    let (task, train, dev) = load_data::<T>(&a.train.data, None)?;
    let out = OutputDir::create(a.train.common.out.as_deref(), "train-ensemble")?;
    let base = a.train.common.seed;
    let (ensemble, outcomes) = train_ensemble(&task, &train, &dev, &train_config(&a.train, base), a.m, base)?;
    let mut members = Vec::new();
    for (i, o) in outcomes.iter().enumerate() {
        let rel = format!("members/member-{i}.bin");
        out.write(&rel, o.model.to_bytes()?)?;
        out.write(&format!("members/member-{i}.log.tsv"), o.log_tsv())?;
        members.push(PathBuf::from(rel));
    }
    EnsembleManifest {
        m: a.m,
        base_seed: base,
        seeds: member_seeds(base, a.m),
        members,
    }
    .write(out.path("ensemble.json"))?;
    let member_dev: Vec<f64> = outcomes.iter().map(|o| o.best_dev).collect();
    let mut s = Map::new();
    s.insert("member_dev".into(), json!(member_dev));
    s.insert("member_mean_dev".into(), json!(member_dev.iter().sum::<f64>() / member_dev.len() as f64));
    if !dev.is_empty() {
        s.insert("ensemble_dev".into(), json!(evaluate(&task, &dev, &ensemble)?));
    }
    s.insert("ensemble".into(), json!("ensemble.json"));
    finish(out, manifest, s)
}

/// Teacher, task rebuilt from the teacher's vocabularies, and the resolved
/// distillation settings.
fn teacher_and_config<T: CliTask>(a: &mut DistillArgs) -> Result<(EnsembleModel, T, DistillConfig)>
where
    T::Input: Send + Sync,
    T::Gold: Send + Sync,
{
    let (teacher, _) = EnsembleModel::load_manifest(&a.distill.ensemble)
        .with_context(|| format!("loading ensemble {}", a.distill.ensemble.display()))?;
    check_task::<T>(&teacher.members[0].header.task)?;
    let task = T::from_model(&teacher.members[0])?;
    let kind = a.train.data.task;
    let alpha = *a.distill.alpha.get_or_insert(default_alpha(kind));
    let temperature = *a.distill.temperature.get_or_insert(default_temperature(kind));
    let regime = match a.distill.regime {
        RegimeArg::Reference => Regime::Reference,
        RegimeArg::Exploration => Regime::Exploration,
        RegimeArg::Both => Regime::Both,
    };
    let mut dc = DistillConfig::new(regime, alpha, temperature, parse_topk(&a.distill.topk)?);
    dc.mix = parse_mix(&a.distill.mix_ratio)?;
    dc.resample_every_epoch = a.distill.resample_every_epoch;
    dc.validate()?;
    Ok((teacher, task, dc))
}

fn distill_cmd<T: CliTask>(mut a: DistillArgs) -> Result<(PathBuf, Map<String, Value>)>
where
    T::Input: Send + Sync,
    T::Gold: Send + Sync,
{
    let (teacher, task, dc) = teacher_and_config::<T>(&mut a)?;
    let manifest = manifest_for("distill", &a, PATH_KEYS)?;
    let (task, train, dev) = load_data(&a.train.data, Some(task))?;
    let out = OutputDir::create(a.train.common.out.as_deref(), "distill")?;
    let o = distill(&task, &teacher, &train, &dev, &train_config(&a.train, a.train.common.seed), &dc)?;
    o.model.save(out.path("model.bin"))?;
    out.write("train_log.tsv", o.log_tsv())?;
    let mut s = outcome_summary(&o);
    s.insert("regime".into(), json!(dc.regime.to_string()));
    s.insert("alpha".into(), json!(dc.alpha));
    s.insert("temperature".into(), json!(dc.temperature));
    s.insert("model".into(), json!("model.bin"));
    finish(out, manifest, s)
}

/// A model file or an ensemble manifest.
enum System {
    Model(ClassifierModel),
    Ensemble(EnsembleModel),
}

impl System {
    fn load(path: &Path) -> Result<Self> {
        if path.extension().is_some_and(|e| e == "json") {
            let (e, _) = EnsembleModel::load_manifest(path).with_context(|| format!("loading ensemble {}", path.display()))?;
            Ok(System::Ensemble(e))
        } else {
            Ok(System::Model(
                ClassifierModel::load(path).with_context(|| format!("loading model {}", path.display()))?,
            ))
        }
    }

    fn header_model(&self) -> &ClassifierModel {
        match self {
            System::Model(m) => m,
            System::Ensemble(e) => &e.members[0],
        }
    }
}

impl<T: Task> Scorer<T> for System {
    fn distribution(&self, task: &T, state: &T::State) -> searchkd::Result<ActionDistribution> {
        match self {
            System::Model(m) => Scorer::<T>::distribution(m, task, state),
            System::Ensemble(e) => Scorer::<T>::distribution(e, task, state),
        }
    }
}

/// Decodes `raw` with `system` and returns per-sentence statistics and the
/// rendered predictions.
fn decode_stats<T: CliTask>(system: &System, raw: &[T::Raw]) -> Result<(Vec<T::Stats>, String)>
where
    T::Input: Send + Sync,
    T::Gold: Send + Sync,
{
    let model = system.header_model();
    check_task::<T>(&model.header.task)?;
    let task = T::from_model(model)?;
    let data = task.encode_raw(raw);
    let (outputs, _, _) = decode_all(&task, &data, system)?;
    let stats = raw.iter().zip(&outputs).map(|(r, o)| task.stats(r, o)).collect::<Result<Vec<_>>>()?;
    Ok((stats, task.render(raw, &outputs)))
}

fn eval_cmd<T: CliTask>(a: EvalArgs) -> Result<(PathBuf, Map<String, Value>)>
where
    T::Input: Send + Sync,
    T::Gold: Send + Sync,
{
    let manifest = manifest_for("eval", &a, PATH_KEYS)?;
    let sources = [&a.model, &a.ensemble, &a.hypotheses].iter().filter(|p| p.is_some()).count();
    ensure!(sources == 1, "pass exactly one of --model, --ensemble or --hypotheses");
    let raw = T::read(&a.test, true)?;
    ensure!(!raw.is_empty(), "{} contains no items", a.test.display());
    let out = OutputDir::create(a.common.out.as_deref(), "eval")?;
    let stats = if let Some(h) = &a.hypotheses {
        // scoring needs only the raw gold; any task instance will do
        T::build(&raw).hypothesis_stats(h, &raw)?
    } else {
        let path = a.model.as_ref().or(a.ensemble.as_ref()).expect("one source is set");
        let (stats, rendered) = decode_stats::<T>(&System::load(path)?, &raw)?;
        out.write(&format!("predictions.{}", T::EXT), rendered)?;
        stats
    };
    let mut s = Map::new();
    s.insert("task".into(), json!(T::NAME));
    s.insert("sentences".into(), json!(raw.len()));
    s.insert("score".into(), json!(corpus_score(&stats)));
    if let Some(c) = &a.compare {
        let (other, rendered) = decode_stats::<T>(&System::load(c)?, &raw)?;
        out.write(&format!("compare_predictions.{}", T::EXT), rendered)?;
        s.insert("compare_score".into(), json!(corpus_score(&other)));
        s.insert("p_value".into(), json!(paired_bootstrap(&stats, &other, a.resamples, a.common.seed)?));
        s.insert("resamples".into(), json!(a.resamples));
    }
    out.write_json("eval.json", &s)?;
    finish(out, manifest, s)
}

fn parse_systems(spec: &str) -> Result<Vec<(String, PathBuf)>> {
    spec.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|item| {
            let (name, path) = item
                .split_once('=')
                .with_context(|| format!("--systems entry `{item}` is not name=path"))?;
            let path = std::fs::canonicalize(path.trim()).with_context(|| format!("{} does not exist", path.trim()))?;
            Ok((name.trim().to_string(), path))
        })
        .collect()
}

fn analyze_states(mut a: AnalyzeArgs) -> Result<(PathBuf, Map<String, Value>)> {
    let systems = parse_systems(&a.systems)?;
    ensure!(!systems.is_empty(), "--systems lists no systems");
    a.systems = systems.iter().map(|(n, p)| format!("{n}={}", p.display())).collect::<Vec<_>>().join(",");
    let manifest = manifest_for("analyze-states", &a, PATH_KEYS)?;
    let baseline = ClassifierModel::load(&a.baseline).with_context(|| format!("loading {}", a.baseline.display()))?;
    check_task::<ParseTask>(&baseline.header.task)?;
    let task = ParseTask::from_model(&baseline)?;
    let raw = <ParseTask as CliTask>::read(&a.data, a.skip_nonprojective)?;
    let data = task.encode(&raw);
    let out = OutputDir::create(a.common.out.as_deref(), "analyze-states")?;
    let samples = sample_problematic_states(&task, &baseline, &data, a.count, a.common.seed, a.sample_temperature)?;
    let mut states = String::from("index\tkind\tbest_loss\trelevant\n");
    for (i, s) in samples.iter().enumerate() {
        let names: Vec<String> = s.relevant.iter().map(|&r| task.action_name(r)).collect();
        states.push_str(&format!("{i}\t{}\t{}\t{}\n", s.kind, s.best_loss, names.join(" ")));
    }
    out.write("states.tsv", states)?;
    let mut rows = Vec::new();
    let mut per_system = Map::new();
    for (name, path) in &systems {
        let system = System::load(path)?;
        ensure!(
            system.header_model().header.task_meta == baseline.header.task_meta,
            "system `{name}` uses different vocabularies from the baseline"
        );
        let report = map_score(&task, &system, &samples)?;
        per_system.insert(
            name.clone(),
            json!({"ambiguous": report.ambiguous.map, "non_optimal": report.non_optimal.map}),
        );
        rows.push((name.clone(), report));
    }
    out.write("map.csv", map_csv(&rows))?;
    let mut s = Map::new();
    let n_amb = rows.first().map_or(0, |r| r.1.ambiguous.n_states);
    s.insert("ambiguous_states".into(), json!(n_amb));
    s.insert("non_optimal_states".into(), json!(samples.len() - n_amb));
    s.insert("map".into(), Value::Object(per_system));
    finish(out, manifest, s)
}

fn sweep_cmd<T: CliTask>(mut a: SweepArgs) -> Result<(PathBuf, Map<String, Value>)>
where
    T::Input: Send + Sync,
    T::Gold: Send + Sync,
{
    let (teacher, task, dc) = teacher_and_config::<T>(&mut a.distill)?;
    let manifest = manifest_for("sweep", &a, PATH_KEYS)?;
    let (task, train, dev) = load_data(&a.distill.train.data, Some(task))?;
    ensure!(!dev.is_empty(), "sweep needs --dev");
    let parameter = match a.parameter {
        SweepParam::Alpha => SweepParameter::Alpha,
        SweepParam::Temperature => SweepParameter::Temperature,
        SweepParam::Topk => SweepParameter::TopK,
    };
    let grid_spec = a.grid.replace("all", &task.num_actions().to_string());
    let grid = parse_grid(&grid_spec)?;
    if parameter == SweepParameter::TopK {
        for &k in &grid {
            ensure!(k >= 1.0 && k.fract() == 0.0, "top-K grid values must be positive integers, got {k}");
        }
    }
    let out = OutputDir::create(a.distill.train.common.out.as_deref(), "sweep")?;
    let cfg = train_config(&a.distill.train, a.distill.train.common.seed);
    let rows = sweep(&grid, |v| {
        let mut c = dc.clone();
        match parameter {
            SweepParameter::Alpha => c.alpha = v,
            SweepParameter::Temperature => c.temperature = v,
            SweepParameter::TopK => c.top_k = v as usize,
        }
        Ok(distill(&task, &teacher, &train, &dev, &cfg, &c)?.best_dev)
    })?;
    out.write("sweep.csv", sweep_csv(parameter, &rows))?;
    let mut s = Map::new();
    s.insert("parameter".into(), json!(parameter.to_string()));
    s.insert("points".into(), json!(rows.len()));
    s.insert("spread".into(), json!(spread(&rows)));
    s.insert("rows".into(), json!(rows));
    finish(out, manifest, s)
}

fn stability_cmd<T: CliTask>(mut a: StabilityArgs) -> Result<(PathBuf, Map<String, Value>)>
where
    T::Input: Send + Sync,
    T::Gold: Send + Sync,
{
    ensure!(a.runs >= 2, "--runs must be at least 2");
    let (teacher, task, dc) = teacher_and_config::<T>(&mut a.distill)?;
    let manifest = manifest_for("stability", &a, PATH_KEYS)?;
    let (task, train, dev) = load_data(&a.distill.train.data, Some(task))?;
    ensure!(!dev.is_empty(), "stability needs --dev");
    let out = OutputDir::create(a.distill.train.common.out.as_deref(), "stability")?;
    let seeds = member_seeds(a.distill.train.common.seed, a.runs);
    let targs = &a.distill.train;
    let scores = |distilled: bool| -> Result<Vec<(u64, f64)>> {
        seeds
            .par_iter()
            .map(|&s| {
                let cfg = train_config(targs, s);
                let o = if distilled {
                    distill(&task, &teacher, &train, &dev, &cfg, &dc)?
                } else {
                    train_baseline(&task, &train, &dev, &cfg)?
                };
                Ok((s, o.best_dev))
            })
            .collect()
    };
    let systems = vec![
        ("baseline".to_string(), scores(false)?),
        (format!("distill-{}", dc.regime), scores(true)?),
    ];
    let report = stability_report(&systems)?;
    out.write("stability_scores.csv", stability_scores_csv(&systems))?;
    out.write("stability_summary.csv", stability_summary_csv(&report))?;
    let mut s = Map::new();
    for (name, st) in &report {
        s.insert(name.clone(), run_stats_json(st));
    }
    finish(out, manifest, s)
}

fn run_stats_json(st: &RunStats) -> Value {
    json!({"scores": st.scores, "min": st.min, "max": st.max, "mean": st.mean, "std": st.std})
}

fn rerun(a: &RerunArgs) -> Result<String> {
    let cfg = config::parse_config(&a.manifest)?;
    let Some(command) = cfg.get("command") else {
        bail!("{} has no `command` entry", a.manifest.display());
    };
    if command == "rerun" {
        bail!("a rerun manifest cannot name `rerun`");
    }
    let argv = [
        "searchkd".to_string(),
        command.to_string(),
        "--config".to_string(),
        a.manifest.display().to_string(),
        "--out".to_string(),
        a.out.display().to_string(),
        "--jobs".to_string(),
        a.jobs.to_string(),
    ];
    let cli = parse_args(argv).map_err(|e| anyhow::anyhow!("{}", e.to_string().lines().next().unwrap_or("bad manifest")))?;
    run(cli.command)
}
