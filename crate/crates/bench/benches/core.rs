use std::hint::black_box;

use bsac::numerics::{Mlp, Tape};
use bsac::{seeded_rng, Activation, BsnGraph, FlatSac, Squash};
use bsac_bench::{agent, chain4, config, filled_buffer, ACTION_DIM, STATE_DIM};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn update_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("update");
    group.sample_size(20);
    let buffer = filled_buffer(4096, &mut seeded_rng(1));
    for (hidden, batch) in [(64, 128), (256, 256)] {
        let label = format!("h{hidden}_b{batch}");
        let mut sac = FlatSac::new(STATE_DIM, ACTION_DIM, Squash::Tanh, config(hidden, batch), &mut seeded_rng(0)).unwrap();
        let mut rng = seeded_rng(2);
        group.bench_function(BenchmarkId::new("flat_sac", &label), |b| b.iter(|| sac.update(&buffer, &mut rng).unwrap()));
        let mut chain = agent(chain4(), hidden, batch);
        group.bench_function(BenchmarkId::new("bsac_chain4", &label), |b| b.iter(|| chain.update(&buffer, &mut rng).unwrap()));
        let mut single = agent(BsnGraph::single(ACTION_DIM).unwrap(), hidden, batch);
        group.bench_function(BenchmarkId::new("bsac_single", &label), |b| b.iter(|| single.update(&buffer, &mut rng).unwrap()));
    }
    group.finish();
}

fn tape_backward(c: &mut Criterion) {
    let mut rng = seeded_rng(3);
    let net = Mlp::new("net", &[STATE_DIM + ACTION_DIM, 256, 256, 1], Activation::Relu, &mut rng).unwrap();
    let x = rng.normal_tensor(256, STATE_DIM + ACTION_DIM);
    c.bench_function("mlp_forward_backward_256x256_b256", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let y = net.forward_taped(&mut tape, xv, true).unwrap();
            let loss = tape.mean(y);
            black_box(tape.backward(loss).unwrap())
        })
    });
}

fn joint_sample(c: &mut Criterion) {
    let a = agent(chain4(), 64, 128);
    let mut rng = seeded_rng(4);
    let states = rng.normal_tensor(128, STATE_DIM);
    let noise = a.policy.draw_noise(128, &mut rng);
    c.bench_function("joint_sample_chain4_h64_b128", |b| b.iter(|| black_box(a.policy.joint_sample(&states, &noise).unwrap())));
    let actions = a.policy.joint_sample(&states, &noise).unwrap().action;
    c.bench_function("joint_log_prob_chain4_h64_b128", |b| b.iter(|| black_box(a.policy.joint_log_prob(&states, &actions).unwrap())));
}

fn replay_sample(c: &mut Criterion) {
    let buffer = filled_buffer(4096, &mut seeded_rng(5));
    let mut rng = seeded_rng(6);
    c.bench_function("replay_sample_batch_256", |b| b.iter(|| black_box(buffer.sample_batch(256, &mut rng).unwrap())));
}

criterion_group!(benches, update_step, tape_backward, joint_sample, replay_sample);
criterion_main!(benches);
