//! Flat soft actor-critic: one tanh-Gaussian actor over the whole action
//! vector, no graph machinery. Serves as the reference learner for the
//! single-node case.

use serde::{Deserialize, Serialize};

use crate::agent::{bellman_target, check_loss, critic_loss, AgentConfig, UpdateMetrics};
use crate::critic::{CriticEnsemble, QSelect};
use crate::error::{Error, Result};
use crate::numerics::tensor;
use crate::numerics::{AdamState, Gradients, Mlp, ParamKey, Parameters, SeededRng, Tape, Tensor, Var};
use crate::policy::{Squash, HALF_LN_2PI, SQUASH_EPS};
use crate::replay::{Batch, ReplayBuffer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatSac {
    pub actor: Mlp,
    pub critics: CriticEnsemble,
    actor_opt: AdamState,
    critic_opt: AdamState,
    alpha_opt: AdamState,
    alpha: f64,
    log_alpha: f64,
    squash: Squash,
    state_dim: usize,
    action_dim: usize,
    config: AgentConfig,
    updates: u64,
}

impl FlatSac {
    /// Initializes the actor, then q1, then q2.
    pub fn new(state_dim: usize, action_dim: usize, squash: Squash, config: AgentConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let mut sizes = vec![state_dim];
        sizes.extend_from_slice(&config.hidden);
        sizes.push(2 * action_dim);
        let actor = Mlp::new("actor", &sizes, config.activation, rng)?;
        let critics = CriticEnsemble::new(
            state_dim,
            action_dim,
            &config.hidden,
            config.activation,
            config.critic,
            config.tau,
            rng,
        )?;
        Ok(FlatSac {
            actor,
            critics,
            actor_opt: AdamState::new(config.actor_lr),
            critic_opt: AdamState::new(config.critic_lr),
            alpha_opt: AdamState::new(config.alpha_lr),
            alpha: config.alpha,
            log_alpha: if config.auto_alpha { config.alpha.ln() } else { 0.0 },
            squash,
            state_dim,
            action_dim,
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

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn squash(&self) -> Squash {
        self.squash
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn target_entropy(&self) -> f64 {
        self.config.target_entropy.unwrap_or(-(self.action_dim as f64))
    }

    /// Reparameterized sample and log-density, `[b, D]` and `[b, 1]`.
    fn sample(&self, tape: &mut Tape, state: Var, noise: &Tensor, trainable: bool) -> Result<(Var, Var)> {
        let d = self.action_dim;
        let out = self.actor.forward_taped(tape, state, trainable)?;
        if !tape.value(out).is_finite() {
            return Err(Error::Numeric("actor produced a non-finite output".into()));
        }
        if noise.shape() != [tape.value(out).rows(), d] {
            return Err(Error::shape(format!("noise shape {:?} for a {d}-dim actor", noise.shape())));
        }
        let mu = tape.slice_cols(out, 0, d)?;
        let raw = tape.slice_cols(out, d, 2 * d)?;
        let log_std = tape.clamp(raw, self.config.log_std_min, self.config.log_std_max);
        let std = tape.exp(log_std);
        let eps = tape.constant(noise.clone());
        let spread = tape.mul(std, eps)?;
        let u = tape.add(mu, spread)?;
        let neg_log_std = tape.scale(log_std, -1.0);
        let quad = tape.constant(noise.map(|e| -0.5 * e * e - HALF_LN_2PI));
        let per_coord = tape.add(neg_log_std, quad)?;
        let gauss = tape.sum_cols(per_coord)?;
        match self.squash {
            Squash::Off => Ok((u, gauss)),
            Squash::Tanh => {
                let a = tape.tanh(u);
                let jac = tape.sech2(u);
                let inner = tape.shift(jac, SQUASH_EPS);
                let log_jac = tape.ln(inner);
                let corr = tape.sum_cols(log_jac)?;
                let log_prob = tape.sub(gauss, corr)?;
                Ok((a, log_prob))
            }
        }
    }

    fn sample_values(&self, state: &Tensor, noise: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let s = tape.constant(state.as_row()?);
        let (a, lp) = self.sample(&mut tape, s, noise, false)?;
        Ok((tape.value(a).clone(), tape.value(lp).clone()))
    }

    pub fn act(&self, state: &Tensor, rng: &mut SeededRng) -> Result<Tensor> {
        let noise = rng.normal_tensor(1, self.action_dim);
        let (a, _) = self.sample_values(state, &noise)?;
        if state.rank() == 1 {
            a.reshape(vec![self.action_dim])
        } else {
            Ok(a)
        }
    }

    pub fn act_greedy(&self, state: &Tensor) -> Result<Tensor> {
        let out = self.actor.forward(&state.as_row()?)?;
        let mu = tensor::slice_cols(&out, 0, self.action_dim)?;
        let a = match self.squash {
            Squash::Tanh => mu.map(f64::tanh),
            Squash::Off => mu,
        };
        if state.rank() == 1 {
            a.reshape(vec![self.action_dim])
        } else {
            Ok(a)
        }
    }

    pub fn critic_target(&self, batch: &Batch, rng: &mut SeededRng) -> Result<Tensor> {
        let noise = rng.normal_tensor(batch.len(), self.action_dim);
        let (a, lp) = self.sample_values(&batch.next_states, &noise)?;
        let q = self.critics.q_eval(&batch.next_states, &a, QSelect::MinTarget)?;
        let alpha = self.alpha;
        let v = q.zip_map(&lp, |q, lp| q - alpha * lp)?;
        bellman_target(&batch.rewards, &batch.dones, &v, self.config.gamma)
    }

    /// `mean(α log π - min Q)` and its actor gradient; also the mean log-density.
    pub fn policy_loss(&self, states: &Tensor, noise: &Tensor) -> Result<(f64, f64, Gradients)> {
        let mut tape = Tape::new();
        let s = tape.constant(states.clone());
        let (a, lp) = self.sample(&mut tape, s, noise, true)?;
        let q = self.critics.q_eval_taped(&mut tape, s, a, QSelect::MinOnline, false)?;
        let weighted = tape.scale(lp, self.alpha);
        let gap = tape.sub(weighted, q)?;
        let loss = tape.mean(gap);
        let value = tape.value(loss).item()?;
        let mean_lp = tape.value(lp).mean();
        Ok((value, mean_lp, tape.backward(loss)?))
    }

    pub fn update(&mut self, buffer: &ReplayBuffer, rng: &mut SeededRng) -> Result<UpdateMetrics> {
        let batch = buffer.sample_batch(self.config.batch_size, rng)?;
        self.update_on(&batch, rng)
    }

    pub fn update_on(&mut self, batch: &Batch, rng: &mut SeededRng) -> Result<UpdateMetrics> {
        let alpha_used = self.alpha;

        let y = self.critic_target(batch, rng)?;
        let (critic_loss, mean_q, grads) = critic_loss(&self.critics, batch, &y)?;
        check_loss("critic", critic_loss, batch)?;
        self.critic_opt.update(self.critics.params_mut(), &grads)?;

        let noise = rng.normal_tensor(batch.len(), self.action_dim);
        let (policy_loss, mean_lp, grads) = self.policy_loss(&batch.states, &noise)?;
        check_loss("policy", policy_loss, batch)?;
        self.actor_opt.update(self.actor.params_mut(), &grads)?;

        if self.config.auto_alpha {
            let g = -(mean_lp + self.target_entropy());
            let mut grads = Gradients::default();
            grads.insert(ParamKey::new("log_alpha"), Tensor::scalar(g));
            let mut la = Tensor::scalar(self.log_alpha);
            self.alpha_opt.update(vec![(ParamKey::new("log_alpha"), &mut la)], &grads)?;
            self.log_alpha = la.item()?;
            self.alpha = self.log_alpha.exp();
        }
        self.critics.polyak_update(self.config.tau)?;
        self.updates += 1;
        Ok(UpdateMetrics {
            critic_loss,
            policy_loss,
            mean_q,
            joint_log_prob: mean_lp,
            node_log_probs: vec![("actor".to_string(), mean_lp)],
            alpha: alpha_used,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_rng;
    use crate::replay::Transition;

    fn cfg() -> AgentConfig {
        AgentConfig { hidden: vec![8, 8], batch_size: 8, warmup_steps: 8, ..AgentConfig::default() }
    }

    #[test]
    fn greedy_action_is_squashed_mean() {
        let mut rng = seeded_rng(0);
        let sac = FlatSac::new(3, 2, Squash::Tanh, cfg(), &mut rng).unwrap();
        let s = Tensor::vector(vec![0.3, -0.1, 0.7]);
        let out = sac.actor.forward(&s).unwrap();
        let a = sac.act_greedy(&s).unwrap();
        assert_eq!(a.shape(), [2]);
        for j in 0..2 {
            assert_eq!(a.data()[j], out.data()[j].tanh());
        }
    }

    #[test]
    fn sampled_actions_stay_in_box() {
        let mut rng = seeded_rng(1);
        let sac = FlatSac::new(3, 2, Squash::Tanh, cfg(), &mut rng).unwrap();
        for _ in 0..100 {
            let a = sac.act(&Tensor::vector(vec![1.0, 2.0, 3.0]), &mut rng).unwrap();
            assert!(a.data().iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn update_changes_actor_and_critics() {
        let mut rng = seeded_rng(2);
        let mut sac = FlatSac::new(3, 2, Squash::Tanh, cfg(), &mut rng).unwrap();
        let mut buf = ReplayBuffer::new(32, 3, 2).unwrap();
        for i in 0..32 {
            buf.push(Transition {
                state: Tensor::vector(vec![rng.normal(), rng.normal(), rng.normal()]),
                action: Tensor::vector(vec![rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)]),
                reward: i as f64 * 0.01,
                next_state: Tensor::vector(vec![rng.normal(), rng.normal(), rng.normal()]),
                done: i % 7 == 0,
            })
            .unwrap();
        }
        let before = sac.clone();
        let m = sac.update(&buf, &mut rng).unwrap();
        assert!(m.is_finite());
        assert_ne!(sac.actor, before.actor);
        assert_ne!(sac.critics.q1, before.critics.q1);
        assert_ne!(sac.critics.target_q1, before.critics.target_q1);
        assert_eq!(sac.updates(), 1);
    }
}
