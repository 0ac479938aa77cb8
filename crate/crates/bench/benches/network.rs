use aoc_core::agent::{Agent, AgentConfig, NullSink, Task, Trainer};
use aoc_core::{EnvConfig, GoalSpec, GridLayout, NetShape, NetworkParams};
use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn forward(c: &mut Criterion) {
    let params = NetworkParams::init(NetShape::new(104, 4, 4), &mut ChaCha8Rng::seed_from_u64(0));
    let mut input = vec![0.0; 104];
    input[17] = 0.7;
    c.bench_function("forward_one_hot", |b| {
        b.iter(|| params.forward(black_box(&input)).unwrap())
    });
}

fn update(c: &mut Criterion) {
    let layout = Arc::new(GridLayout::four_rooms());
    for (name, config) in [("aoc_update", AgentConfig::default()), ("oc_update", AgentConfig::oc())] {
        let task = Task::resolve(layout.clone(), EnvConfig::default(), GoalSpec::Random, None, 0).unwrap();
        let agent = Agent::new(config, &layout, 0).unwrap();
        let mut trainer = Trainer::new(agent, task, 0).unwrap();
        c.bench_function(name, |b| b.iter(|| trainer.step(&mut NullSink).unwrap()));
    }
}

criterion_group!(benches, forward, update);
criterion_main!(benches);
