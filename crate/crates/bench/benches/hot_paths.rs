use criterion::{criterion_group, criterion_main, Criterion};
use searchkd::distill::train_baseline;
use searchkd::parser::synthetic::make_synthetic_treebank;
use searchkd::parser::{dynamic_oracle, ParseTask, PunctFilter};
use searchkd::search::{decode_greedy, rollout_reference};
use searchkd::transducer::{bleu, make_synthetic_corpus};
use searchkd::{ModelConfig, Task, TrainConfig};
use std::hint::black_box;

fn parser(c: &mut Criterion) {
    let tb = make_synthetic_treebank(7, 200, 0.3).unwrap();
    let task = ParseTask::from_treebank(&tb.train, PunctFilter::default());
    let data = task.encode(&tb.train);
    let cfg = TrainConfig {
        model: ModelConfig {
            embed_dim: 16,
            hidden_dim: 32,
            seed: 1,
        },
        max_epochs: 1,
        ..Default::default()
    };
    let model = train_baseline(&task, &data, &data[..20], &cfg).unwrap().model;
    let (x, y) = &data[0];
    let states: Vec<_> = rollout_reference(&task, x, y).unwrap().into_iter().map(|r| r.state).collect();
    let examples: Vec<_> = states.iter().map(|s| task.example(s)).collect();

    c.bench_function("classifier_forward", |b| {
        b.iter(|| {
            for ex in &examples {
                black_box(model.forward(ex).unwrap());
            }
        })
    });
    c.bench_function("dynamic_oracle", |b| {
        b.iter(|| {
            for s in &states {
                black_box(dynamic_oracle(&task, s, y).unwrap());
            }
        })
    });
    c.bench_function("greedy_parse", |b| b.iter(|| black_box(decode_greedy(&task, x, &model).unwrap())));
}

fn bleu_bench(c: &mut Criterion) {
    let corpus = make_synthetic_corpus(7, 1000, 0.3).unwrap();
    let refs: Vec<Vec<String>> = corpus.train.pairs.iter().map(|p| p.target.clone()).collect();
    let mut hyps = refs.clone();
    for h in hyps.iter_mut().step_by(3) {
        h.reverse();
    }
    c.bench_function("corpus_bleu_1000", |b| b.iter(|| black_box(bleu(&hyps, &refs).unwrap())));
}

criterion_group!(benches, parser, bleu_bench);
criterion_main!(benches);
