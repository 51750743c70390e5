//! Bayesian soft actor-critic: max-entropy RL with a joint policy factored
//! over a DAG of action groups. A single-node graph is plain SAC.

pub mod agent;
pub mod bsn;
pub mod checkpoint;
pub mod critic;
pub mod envs;
pub mod error;
pub mod numerics;
pub mod policy;
pub mod replay;
pub mod sac;
pub mod training;

pub use agent::{Agent, AgentConfig, UpdateMetrics};
pub use bsn::{parse_bsn, topo_order, BsnGraph, BsnNode};
pub use checkpoint::Checkpoint;
pub use critic::{CriticEnsemble, CriticMode, QSelect};
pub use envs::{make_env, Env, EnvConfig, EnvParams, EnvSnapshot, EnvSpec, StepResult};
pub use error::{Error, Result};
pub use numerics::{derive_seed, seeded_rng, Activation, SeededRng, Tensor};
pub use policy::{joint_log_prob, joint_sample, JointPolicy, JointSample, Squash, SubPolicy};
pub use replay::{Batch, ReplayBuffer, Transition};
pub use sac::FlatSac;
pub use training::{evaluate_policy, AnyLearner, EvalStats, Learner, Trainer};
