use std::collections::BTreeSet;

use cold::constraints::ConstraintFn;
use cold::corpus::grammar_vocabulary;
use cold::lm::{Direction, LanguageModel, LmParams, TrainingMeta};
use cold::sampler::{init_soft_sequence, sample_chains, sample_chains_sequential, DecodeConfig, EnergySpec, EnergyTerm};
use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_lm(direction: Direction, rng: &mut ChaCha8Rng) -> LanguageModel {
    let vocab = grammar_vocabulary();
    let mut p = LmParams::zeros(vocab.len(), 32);
    for a in p.arrays_mut() {
        for v in a.data_mut() {
            *v = rng.random_range(-0.3..0.3);
        }
    }
    LanguageModel::new(vocab, direction, p, TrainingMeta::default()).unwrap()
}

fn bench_chains(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let fwd = random_lm(Direction::Forward, &mut rng);
    let rev = random_lm(Direction::Reverse, &mut rng);
    let vocab = fwd.vocab().clone();
    let keywords: BTreeSet<_> = (5..8).collect();
    let config = DecodeConfig {
        iters: 50,
        num_samples: 8,
        trace_every: 50,
        ..DecodeConfig::default()
    };
    let spec = EnergySpec::new(
        vec![
            EnergyTerm::new("f_lm_lr", ConstraintFn::fluency_forward(&fwd, &[]).unwrap(), 0.3),
            EnergyTerm::new("f_lm_rl", ConstraintFn::fluency_reverse(&rev, &[]).unwrap(), 0.2),
            EnergyTerm::new("f_pred", ConstraintFn::keywords(&vocab, &keywords).unwrap(), 0.45),
        ],
        config.constraint_options(),
    )
    .unwrap();
    let init = init_soft_sequence(&fwd, &[], config.length).unwrap();

    let mut group = c.benchmark_group("chains");
    group.sample_size(10);
    group.bench_function("parallel", |b| b.iter(|| sample_chains(&spec, &config, &init).unwrap()));
    group.bench_function("sequential", |b| {
        b.iter(|| sample_chains_sequential(&spec, &config, &init).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_chains);
criterion_main!(benches);
