//! BSAC learner: critic regression onto the soft backup, joint policy
//! improvement with the α/m entropy weight, optional temperature tuning.

use serde::{Deserialize, Serialize};

use crate::bsn::BsnGraph;
use crate::critic::{CriticEnsemble, CriticMode, QSelect};
use crate::error::{Error, Result};
use crate::numerics::{Activation, AdamState, Gradients, ParamKey, Parameters, SeededRng, Tape, Tensor, Var};
use crate::policy::{JointPolicy, NodeNoise, Squash, LOG_STD_MAX, LOG_STD_MIN};
use crate::replay::{Batch, ReplayBuffer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub batch_size: usize,
    pub warmup_steps: usize,
    pub update_every: usize,
    pub auto_alpha: bool,
    /// Per-node average entropy target; `None` means `-D/m`.
    pub target_entropy: Option<f64>,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub critic: CriticMode,
    pub buffer_capacity: usize,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            alpha: 0.2,
            gamma: 0.99,
            tau: 0.005,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            alpha_lr: 3e-4,
            batch_size: 256,
            warmup_steps: 1000,
            update_every: 1,
            auto_alpha: false,
            target_entropy: None,
            hidden: vec![256, 256],
            activation: Activation::Relu,
            critic: CriticMode::Twin,
            buffer_capacity: 1_000_000,
            log_std_min: LOG_STD_MIN,
            log_std_max: LOG_STD_MAX,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be finite and >= 0, got {}", self.alpha));
        }
        if self.auto_alpha && self.alpha <= 0.0 {
            return bad("auto_alpha needs a positive initial alpha".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        for (name, lr) in [("actor_lr", self.actor_lr), ("critic_lr", self.critic_lr), ("alpha_lr", self.alpha_lr)] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {lr}"));
            }
        }
        if self.batch_size == 0 || self.update_every == 0 {
            return bad("batch_size and update_every must be positive".into());
        }
        if self.warmup_steps < self.batch_size {
            return bad(format!(
                "warmup_steps {} is smaller than batch_size {}",
                self.warmup_steps, self.batch_size
            ));
        }
        if self.buffer_capacity < self.batch_size {
            return bad("buffer_capacity must hold at least one batch".into());
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return bad("hidden layer widths must be positive".into());
        }
        if !(self.log_std_min < self.log_std_max) {
            return bad("log_std_min must be below log_std_max".into());
        }
        if let Some(t) = self.target_entropy {
            if !t.is_finite() {
                return bad("target_entropy must be finite".into());
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateMetrics {
    pub critic_loss: f64,
    pub policy_loss: f64,
    pub mean_q: f64,
    pub joint_log_prob: f64,
    /// `(node id, batch-mean log-density)` in topological order.
    pub node_log_probs: Vec<(String, f64)>,
    pub alpha: f64,
}

impl UpdateMetrics {
    pub fn is_finite(&self) -> bool {
        [self.critic_loss, self.policy_loss, self.mean_q, self.joint_log_prob, self.alpha]
            .iter()
            .chain(self.node_log_probs.iter().map(|(_, v)| v))
            .all(|v| v.is_finite())
    }
}

/// Loss of one critic update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticStep {
    pub loss: f64,
    pub mean_q: f64,
}

/// Loss of one policy update, with the sampled log-densities it used.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyStep {
    pub loss: f64,
    pub joint_log_prob: f64,
    pub node_log_probs: Vec<(String, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub policy: JointPolicy,
    pub critics: CriticEnsemble,
    actor_opt: AdamState,
    critic_opt: AdamState,
    alpha_opt: AdamState,
    alpha: f64,
    log_alpha: f64,
    config: AgentConfig,
    updates: u64,
}

pub(crate) const LOG_ALPHA_KEY: &str = "log_alpha";

impl Agent {
    /// Initializes the policy (nodes in topological order), then q1, then q2.
    pub fn new(graph: BsnGraph, state_dim: usize, squash: Squash, config: AgentConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let bounds = (config.log_std_min, config.log_std_max);
        let policy = JointPolicy::new(graph, state_dim, &config.hidden, config.activation, squash, bounds, rng)?;
        let critics = CriticEnsemble::new(
            state_dim,
            policy.action_dim(),
            &config.hidden,
            config.activation,
            config.critic,
            config.tau,
            rng,
        )?;
        Agent::from_parts(policy, critics, config)
    }

    pub fn from_parts(policy: JointPolicy, critics: CriticEnsemble, config: AgentConfig) -> Result<Self> {
        config.validate()?;
        if policy.action_dim() != critics.action_dim() || policy.state_dim() != critics.state_dim() {
            return Err(Error::shape(format!(
                "policy is {}->{} but critics take state {} and action {}",
                policy.state_dim(),
                policy.action_dim(),
                critics.state_dim(),
                critics.action_dim()
            )));
        }
        Ok(Agent {
            actor_opt: AdamState::new(config.actor_lr),
            critic_opt: AdamState::new(config.critic_lr),
            alpha_opt: AdamState::new(config.alpha_lr),
            alpha: config.alpha,
            // only read under auto_alpha, where alpha > 0
            log_alpha: if config.auto_alpha { config.alpha.ln() } else { 0.0 },
            policy,
            critics,
            config,
            updates: 0,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Number of sub-policies `m`.
    pub fn node_count(&self) -> usize {
        self.policy.node_count()
    }

    /// Per-node entropy weight `α/m`.
    pub fn entropy_coefficient(&self) -> f64 {
        self.alpha / self.node_count() as f64
    }

    pub fn target_entropy(&self) -> f64 {
        self.config
            .target_entropy
            .unwrap_or(-(self.policy.action_dim() as f64) / self.node_count() as f64)
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn actor_optimizer(&self) -> &AdamState {
        &self.actor_opt
    }

    pub fn critic_optimizer(&self) -> &AdamState {
        &self.critic_opt
    }

    /// Stochastic action for one state.
    pub fn act(&self, state: &Tensor, rng: &mut SeededRng) -> Result<Tensor> {
        let noise = self.policy.draw_noise(1, rng);
        Ok(self.policy.joint_sample(state, &noise)?.action)
    }

    pub fn act_greedy(&self, state: &Tensor) -> Result<Tensor> {
        self.policy.greedy_action(state)
    }

    /// `y = r + γ (1 - done) V(s')`, `[b, 1]`. Always consumes next-state noise.
    pub fn critic_target(&self, batch: &Batch, rng: &mut SeededRng) -> Result<Tensor> {
        let noise = self.policy.draw_noise(batch.len(), rng);
        self.critic_target_with(batch, &noise)
    }

    pub fn critic_target_with(&self, batch: &Batch, noise: &NodeNoise) -> Result<Tensor> {
        let v = self.critics.soft_value(&self.policy, &batch.next_states, noise, self.alpha)?;
        bellman_target(&batch.rewards, &batch.dones, &v, self.config.gamma)
    }

    pub fn critic_update(&mut self, batch: &Batch, rng: &mut SeededRng) -> Result<CriticStep> {
        let y = self.critic_target(batch, rng)?;
        let (loss, mean_q, grads) = critic_loss(&self.critics, batch, &y)?;
        check_loss("critic", loss, batch)?;
        self.critic_opt.update(self.critics.params_mut(), &grads)?;
        Ok(CriticStep { loss, mean_q })
    }

    /// Twin-critic regression loss onto `y` and its gradient for the online critics.
    pub fn critic_loss(&self, batch: &Batch, y: &Tensor) -> Result<(f64, Gradients)> {
        let (loss, _, grads) = critic_loss(&self.critics, batch, y)?;
        Ok((loss, grads))
    }

    pub fn policy_update(&mut self, batch: &Batch, rng: &mut SeededRng) -> Result<PolicyStep> {
        let noise = self.policy.draw_noise(batch.len(), rng);
        self.policy_update_with(batch, &noise)
    }

    pub fn policy_update_with(&mut self, batch: &Batch, noise: &NodeNoise) -> Result<PolicyStep> {
        let (step, grads) = self.policy_loss(&batch.states, noise)?;
        check_loss("policy", step.loss, batch)?;
        self.actor_opt.update(self.policy.params_mut(), &grads)?;
        Ok(step)
    }

    /// `mean((α/m) Σ_i log π_i - min Q)` and its gradient for every sub-policy.
    pub fn policy_loss(&self, states: &Tensor, noise: &NodeNoise) -> Result<(PolicyStep, Gradients)> {
        let mut tape = Tape::new();
        let s = tape.constant(states.clone());
        let sample = self.policy.sample_taped(&mut tape, s, noise, true)?;
        let q = self.critics.q_eval_taped(&mut tape, s, sample.action, QSelect::MinOnline, false)?;
        let weighted = tape.scale(sample.log_prob, self.entropy_coefficient());
        let gap = tape.sub(weighted, q)?;
        let loss = tape.mean(gap);

        let loss_value = tape.value(loss).item()?;
        let joint_log_prob = tape.value(sample.log_prob).mean();
        let node_log_probs = self
            .policy
            .graph()
            .order()
            .iter()
            .map(|&i| (self.policy.graph().nodes()[i].id.clone(), tape.value(sample.node_log_probs[i]).mean()))
            .collect();
        let grads = tape.backward(loss)?;
        Ok((PolicyStep { loss: loss_value, joint_log_prob, node_log_probs }, grads))
    }

    /// Gradient of the temperature loss with respect to `log α`.
    pub fn alpha_gradient(&self, mean_joint_log_prob: f64) -> f64 {
        -(mean_joint_log_prob / self.node_count() as f64 + self.target_entropy())
    }

    /// One Adam step on `log α` given the batch-mean joint log-density. Returns the new α.
    pub fn alpha_step(&mut self, mean_joint_log_prob: f64) -> Result<f64> {
        if !self.config.auto_alpha {
            return Err(Error::usage("alpha_update called with auto_alpha disabled"));
        }
        let g = self.alpha_gradient(mean_joint_log_prob);
        let mut grads = Gradients::default();
        grads.insert(ParamKey::new(LOG_ALPHA_KEY), Tensor::scalar(g));
        let mut log_alpha = Tensor::scalar(self.log_alpha);
        self.alpha_opt.update(vec![(ParamKey::new(LOG_ALPHA_KEY), &mut log_alpha)], &grads)?;
        self.log_alpha = log_alpha.item()?;
        self.alpha = self.log_alpha.exp();
        Ok(self.alpha)
    }

    /// Temperature step using fresh policy samples at the batch states.
    pub fn alpha_update(&mut self, batch: &Batch, rng: &mut SeededRng) -> Result<f64> {
        let noise = self.policy.draw_noise(batch.len(), rng);
        let lp = self.policy.joint_sample(&batch.states, &noise)?.log_prob.mean();
        self.alpha_step(lp)
    }

    /// Critic step, policy step, optional temperature step, then Polyak.
    pub fn update(&mut self, buffer: &ReplayBuffer, rng: &mut SeededRng) -> Result<UpdateMetrics> {
        let batch = buffer.sample_batch(self.config.batch_size, rng)?;
        self.update_on(&batch, rng)
    }

    pub fn update_on(&mut self, batch: &Batch, rng: &mut SeededRng) -> Result<UpdateMetrics> {
        let alpha_used = self.alpha;
        let critic = self.critic_update(batch, rng)?;
        let policy = self.policy_update(batch, rng)?;
        if self.config.auto_alpha {
            self.alpha_step(policy.joint_log_prob)?;
        }
        self.critics.polyak_update(self.config.tau)?;
        self.updates += 1;
        Ok(UpdateMetrics {
            critic_loss: critic.loss,
            policy_loss: policy.loss,
            mean_q: critic.mean_q,
            joint_log_prob: policy.joint_log_prob,
            node_log_probs: policy.node_log_probs,
            alpha: alpha_used,
        })
    }
}

pub(crate) fn bellman_target(rewards: &Tensor, dones: &Tensor, next_value: &Tensor, gamma: f64) -> Result<Tensor> {
    let not_done = dones.map(|d| 1.0 - d);
    let bootstrap = not_done.zip_map(next_value, |nd, v| gamma * nd * v)?;
    rewards.zip_map(&bootstrap, |r, b| r + b)
}

/// `mse(q1, y) + mse(q2, y)` over the online critics, its gradients, and mean q1.
pub(crate) fn critic_loss(critics: &CriticEnsemble, batch: &Batch, y: &Tensor) -> Result<(f64, f64, Gradients)> {
    let mut tape = Tape::new();
    let s = tape.constant(batch.states.clone());
    let a = tape.constant(batch.actions.clone());
    let y = tape.constant(y.clone());
    let mse = |tape: &mut Tape, q: Var| -> Result<Var> {
        let d = tape.sub(q, y)?;
        let d2 = tape.square(d);
        Ok(tape.mean(d2))
    };
    let q1 = critics.q_eval_taped(&mut tape, s, a, QSelect::Q1, true)?;
    let mut loss = mse(&mut tape, q1)?;
    if critics.q2.is_some() {
        let q2 = critics.q_eval_taped(&mut tape, s, a, QSelect::Q2, true)?;
        let l2 = mse(&mut tape, q2)?;
        loss = tape.add(loss, l2)?;
    }
    let value = tape.value(loss).item()?;
    let mean_q = tape.value(q1).mean();
    let grads = tape.backward(loss)?;
    Ok((value, mean_q, grads))
}

pub(crate) fn check_loss(which: &str, loss: f64, batch: &Batch) -> Result<()> {
    if loss.is_finite() {
        return Ok(());
    }
    Err(Error::Numeric(format!(
        "{which} loss is {loss} (batch {}: max |r| {:.3e}, max |s| {:.3e}, max |a| {:.3e})",
        batch.len(),
        batch.rewards.max_abs(),
        batch.states.max_abs(),
        batch.actions.max_abs()
    )))
}
