//! A single-node graph must reproduce flat SAC exactly.

use bsac::training::{INIT_STREAM, TRAIN_STREAM};
use bsac::*;

fn reacher2() -> EnvConfig {
    EnvConfig { name: "chain-reacher".into(), params: EnvParams::from([("k".into(), "2".into())]), seed: 0 }
}

fn config() -> AgentConfig {
    AgentConfig { hidden: vec![16, 16], batch_size: 32, warmup_steps: 64, ..AgentConfig::default() }
}

#[test]
fn identical_initialization() {
    let spec = reacher2().build().unwrap().spec().clone();
    let flat = FlatSac::new(spec.state_dim, 2, Squash::Tanh, config(), &mut seeded_rng(3)).unwrap();
    let node = Agent::new(BsnGraph::single(2).unwrap(), spec.state_dim, Squash::Tanh, config(), &mut seeded_rng(3)).unwrap();
    let sub = &node.policy.sub_policies()[0].net;
    for (a, b) in flat.actor.layers().iter().zip(sub.layers()) {
        assert_eq!(a.weight, b.weight);
        assert_eq!(a.bias, b.bias);
    }
    assert_eq!(flat.critics, node.critics);
}

#[test]
fn losses_actions_and_parameters_match_bitwise() {
    let mut flat = Trainer::new(reacher2(), None, config(), 11).unwrap();
    let mut node = Trainer::new(reacher2(), Some(BsnGraph::single(2).unwrap()), config(), 11).unwrap();
    let mut updates = 0;
    for _ in 0..364 {
        let a = flat.step().unwrap();
        let b = node.step().unwrap();
        assert_eq!(a.reward, b.reward, "step {}", a.step);
        match (a.metrics, b.metrics) {
            (Some(x), Some(y)) => {
                updates += 1;
                assert_eq!(x.critic_loss, y.critic_loss, "update {updates}");
                assert_eq!(x.policy_loss, y.policy_loss, "update {updates}");
                assert_eq!(x.mean_q, y.mean_q);
                assert_eq!(x.joint_log_prob, y.joint_log_prob);
            }
            (None, None) => {}
            _ => panic!("update cadence differs"),
        }
    }
    assert_eq!(updates, 300);
    let (AnyLearner::Sac(f), AnyLearner::Bsac(n)) = (&flat.learner, &node.learner) else { panic!() };
    assert_eq!(f.critics, n.critics);
    for (a, b) in f.actor.layers().iter().zip(n.policy.sub_policies()[0].net.layers()) {
        assert_eq!(a.weight, b.weight);
    }
    let s = Tensor::vector(vec![0.1, -0.2, 0.0, 0.3, 1.5, 0.4]);
    assert_eq!(f.act_greedy(&s).unwrap(), n.act_greedy(&s).unwrap());
    let mut r1 = seeded_rng(derive_seed(1, TRAIN_STREAM, INIT_STREAM));
    let mut r2 = r1.clone();
    assert_eq!(f.act(&s, &mut r1).unwrap(), n.act(&s, &mut r2).unwrap());
}

#[test]
fn evaluation_curves_match() {
    let mut flat = Trainer::new(reacher2(), None, config(), 4).unwrap();
    let mut node = Trainer::new(reacher2(), Some(BsnGraph::single(2).unwrap()), config(), 4).unwrap();
    for _ in 0..3 {
        for _ in 0..50 {
            flat.step().unwrap();
            node.step().unwrap();
        }
        assert_eq!(flat.evaluate(2).unwrap(), node.evaluate(2).unwrap());
    }
}
