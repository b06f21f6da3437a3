use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hivechat_bench::{sentence, store, table};
use hivechat_core::embedding::Centroid;
use hivechat_core::reward::{operating_points, sweep_thresholds, MisfireParams};
use hivechat_core::selector::{rank_bots, BetaShape, BotProfile};
use hivechat_core::sim::monte_carlo_reward;
use hivechat_core::voter::{train_raw, TrainConfig};
use hivechat_core::voting::{acceptance_holds, VoteTally};
use hivechat_core::{RewardSchema, Timestamp, VoteWeights};

fn voting(c: &mut Criterion) {
    let w = VoteWeights::default();
    let tallies: Vec<VoteTally> = (0..64)
        .map(|i| VoteTally {
            human_up: i % 4,
            human_down: (i / 4) % 3,
            machine_up: (i / 12) % 2,
            machine_down: 0,
        })
        .collect();
    c.bench_function("acceptance_holds/64 tallies", |b| {
        b.iter(|| {
            tallies
                .iter()
                .filter(|t| acceptance_holds(black_box(t), 5, &w, true, 2))
                .count()
        })
    });
}

fn selection(c: &mut Criterion) {
    let t = table(50, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut group = c.benchmark_group("rank_bots");
    for n in [4usize, 32, 256] {
        let profiles: Vec<BotProfile> = (0..n)
            .map(|i| {
                let examples = (0..3).map(|_| sentence(&mut rng, 6)).collect();
                BotProfile::register(format!("bot{i}"), examples, &t, Timestamp::ZERO)
            })
            .collect();
        let mut overall = Centroid::new(50);
        for _ in 0..100 {
            overall.add(&t.embed(&sentence(&mut rng, 6)));
        }
        let msg = t.embed(&sentence(&mut rng, 6));
        let shape = BetaShape::default();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| rank_bots(black_box(&msg), &profiles, &overall, &shape).unwrap())
        });
    }
    group.finish();
}

fn retrieval(c: &mut Criterion) {
    let t = table(50, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut group = c.benchmark_group("top_k");
    for n in [1_000usize, 10_000] {
        let s = store(n, &t, 5);
        let q = t.embed(&sentence(&mut rng, 8));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| s.top_k(black_box(&q), 3))
        });
    }
    group.finish();
}

fn classifier(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let rows: Vec<Vec<f64>> = (0..2_000)
        .map(|_| (0..20).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let targets: Vec<bool> = rows.iter().map(|r| r[0] + 0.5 * r[1] > 0.0).collect();
    let cfg = TrainConfig {
        epochs: 20,
        ..TrainConfig::default()
    };
    c.bench_function("train_raw/2000x20, 20 epochs", |b| {
        b.iter(|| train_raw(&rows, &targets, 0, &cfg).unwrap())
    });
    let scored: Vec<(f64, bool)> = (0..5_000)
        .map(|i| (rng.random::<f64>(), i % 3 != 0))
        .collect();
    let schema = RewardSchema::default();
    let params = MisfireParams::default();
    c.bench_function("operating_points+sweep/5000", |b| {
        b.iter(|| {
            sweep_thresholds(&operating_points(black_box(&scored)), &schema, &params).unwrap()
        })
    });
}

fn monte_carlo(c: &mut Criterion) {
    let schema = RewardSchema::default();
    let params = MisfireParams::default();
    c.bench_function("monte_carlo_reward/1e5", |b| {
        b.iter(|| monte_carlo_reward(0.745, 0.1, &schema, &params, 100_000, 7))
    });
}

criterion_group!(
    benches,
    voting,
    selection,
    retrieval,
    classifier,
    monte_carlo
);
criterion_main!(benches);
