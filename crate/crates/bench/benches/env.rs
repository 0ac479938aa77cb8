use aoc_core::{Action, EnvConfig, FourRooms, GridLayout};
use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn step(c: &mut Criterion) {
    let layout = Arc::new(GridLayout::four_rooms());
    let mut env = FourRooms::new(layout, EnvConfig::default(), 0, None, ChaCha8Rng::seed_from_u64(1)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    c.bench_function("env_step", |b| {
        b.iter(|| {
            let r = env.step(Action::ALL[rng.gen_range(0..4)]).unwrap();
            if r.done || r.truncated {
                env.reset();
            }
        })
    });
}

criterion_group!(benches, step);
criterion_main!(benches);
