//! Fixtures shared by the benchmarks.

use bsac::{parse_bsn, seeded_rng, Activation, Agent, AgentConfig, BsnGraph, ReplayBuffer, SeededRng, Squash, Transition};

pub const STATE_DIM: usize = 10;
pub const ACTION_DIM: usize = 4;

/// Four single-joint nodes in a chain.
pub fn chain4() -> BsnGraph {
    parse_bsn("node j1 dims 0\nnode j2 dims 1 parents j1\nnode j3 dims 2 parents j2\nnode j4 dims 3 parents j3").unwrap()
}

pub fn config(hidden: usize, batch: usize) -> AgentConfig {
    AgentConfig {
        hidden: vec![hidden, hidden],
        batch_size: batch,
        warmup_steps: batch,
        activation: Activation::Relu,
        buffer_capacity: 4096,
        ..AgentConfig::default()
    }
}

pub fn agent(graph: BsnGraph, hidden: usize, batch: usize) -> Agent {
    Agent::new(graph, STATE_DIM, Squash::Tanh, config(hidden, batch), &mut seeded_rng(0)).unwrap()
}

/// Buffer of random transitions with reacher-4 widths.
pub fn filled_buffer(n: usize, rng: &mut SeededRng) -> ReplayBuffer {
    let mut buf = ReplayBuffer::new(n, STATE_DIM, ACTION_DIM).unwrap();
    for _ in 0..n {
        buf.push(Transition {
            state: rng.normal_tensor(1, STATE_DIM).reshape(vec![STATE_DIM]).unwrap(),
            action: rng.normal_tensor(1, ACTION_DIM).map(f64::tanh).reshape(vec![ACTION_DIM]).unwrap(),
            reward: rng.normal(),
            next_state: rng.normal_tensor(1, STATE_DIM).reshape(vec![STATE_DIM]).unwrap(),
            done: rng.uniform() < 0.01,
        })
        .unwrap();
    }
    buf
}
