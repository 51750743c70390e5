//! Shared soft Q-critic: twin online networks with Polyak-averaged targets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::tensor;
use crate::numerics::{Activation, Mlp, ParamKey, Parameters, SeededRng, Tape, Tensor, Var};
use crate::policy::{JointPolicy, NodeNoise};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriticMode {
    /// Clipped double-Q: two online/target pairs, minimum taken.
    Twin,
    /// A single Q network; `min-*` selections fall back to it.
    Single,
}

impl CriticMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "twin" => Ok(CriticMode::Twin),
            "single" => Ok(CriticMode::Single),
            other => Err(Error::Config(format!("unknown critic mode `{other}` (twin|single)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CriticMode::Twin => "twin",
            CriticMode::Single => "single",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QSelect {
    Q1,
    Q2,
    MinOnline,
    MinTarget,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticEnsemble {
    pub q1: Mlp,
    pub q2: Option<Mlp>,
    pub target_q1: Mlp,
    pub target_q2: Option<Mlp>,
    pub tau: f64,
    state_dim: usize,
    action_dim: usize,
}

impl CriticEnsemble {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        activation: Activation,
        mode: CriticMode,
        tau: f64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        check_tau(tau)?;
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let q1 = Mlp::new("critic.q1", &sizes, activation, rng)?;
        let q2 = match mode {
            CriticMode::Twin => Some(Mlp::new("critic.q2", &sizes, activation, rng)?),
            CriticMode::Single => None,
        };
        let target_q1 = q1.renamed("critic.target_q1");
        let target_q2 = q2.as_ref().map(|q| q.renamed("critic.target_q2"));
        Ok(CriticEnsemble { q1, q2, target_q1, target_q2, tau, state_dim, action_dim })
    }

    /// Build from explicit online networks taking `[state ⧺ action]` with a
    /// `state_dim`-wide state; targets start as copies.
    pub fn from_networks(q1: Mlp, q2: Option<Mlp>, state_dim: usize, tau: f64) -> Result<Self> {
        check_tau(tau)?;
        if q1.out_dim() != 1 || q2.as_ref().is_some_and(|q| q.out_dim() != 1 || q.in_dim() != q1.in_dim()) {
            return Err(Error::shape("critics must map the same input width to one value"));
        }
        if q1.in_dim() <= state_dim {
            return Err(Error::shape(format!("critic input {} leaves no room for actions", q1.in_dim())));
        }
        let action_dim = q1.in_dim() - state_dim;
        let target_q1 = q1.renamed("critic.target_q1");
        let target_q2 = q2.as_ref().map(|q| q.renamed("critic.target_q2"));
        Ok(CriticEnsemble { q1, q2, target_q1, target_q2, tau, state_dim, action_dim })
    }

    pub fn mode(&self) -> CriticMode {
        if self.q2.is_some() {
            CriticMode::Twin
        } else {
            CriticMode::Single
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn check(&self, state: &Tensor, action: &Tensor) -> Result<()> {
        if action.cols() != self.action_dim {
            return Err(Error::shape(format!("action width {} but critic expects {}", action.cols(), self.action_dim)));
        }
        if state.cols() != self.state_dim {
            return Err(Error::shape(format!("state width {} but critic expects {}", state.cols(), self.state_dim)));
        }
        if state.rows() != action.rows() {
            return Err(Error::shape(format!("{} states vs {} actions", state.rows(), action.rows())));
        }
        Ok(())
    }

    fn q2_or(&self, which: &str) -> Result<(&Mlp, &Mlp)> {
        match (&self.q2, &self.target_q2) {
            (Some(q), Some(t)) => Ok((q, t)),
            _ => Err(Error::usage(format!("{which} requested from a single-critic ensemble"))),
        }
    }

    /// `[b, 1]` Q-values for `state` `[b, s]` and `action` `[b, a]` (rank 1 allowed).
    pub fn q_eval(&self, state: &Tensor, action: &Tensor, which: QSelect) -> Result<Tensor> {
        let (s, a) = (state.as_row()?, action.as_row()?);
        self.check(&s, &a)?;
        let x = tensor::concat_cols(&[&s, &a])?;
        match which {
            QSelect::Q1 => self.q1.forward(&x),
            QSelect::Q2 => self.q2_or("q2")?.0.forward(&x),
            QSelect::MinOnline => match &self.q2 {
                None => self.q1.forward(&x),
                Some(q2) => self.q1.forward(&x)?.zip_map(&q2.forward(&x)?, f64::min),
            },
            QSelect::MinTarget => match &self.target_q2 {
                None => self.target_q1.forward(&x),
                Some(t2) => self.target_q1.forward(&x)?.zip_map(&t2.forward(&x)?, f64::min),
            },
        }
    }

    /// Taped evaluation. `trainable` registers the selected online weights as parameters.
    pub fn q_eval_taped(&self, tape: &mut Tape, state: Var, action: Var, which: QSelect, trainable: bool) -> Result<Var> {
        self.check(tape.value(state), tape.value(action))?;
        let x = tape.concat_cols(&[state, action])?;
        match which {
            QSelect::Q1 => self.q1.forward_taped(tape, x, trainable),
            QSelect::Q2 => self.q2_or("q2")?.0.forward_taped(tape, x, trainable),
            QSelect::MinOnline => {
                let a = self.q1.forward_taped(tape, x, trainable)?;
                match &self.q2 {
                    None => Ok(a),
                    Some(q2) => {
                        let b = q2.forward_taped(tape, x, trainable)?;
                        tape.min(a, b)
                    }
                }
            }
            QSelect::MinTarget => {
                let a = self.target_q1.forward_taped(tape, x, false)?;
                match &self.target_q2 {
                    None => Ok(a),
                    Some(t2) => {
                        let b = t2.forward_taped(tape, x, false)?;
                        tape.min(a, b)
                    }
                }
            }
        }
    }

    /// Single-sample soft value per row of `next_state`:
    /// `min-target Q(s', A') - (α/m) Σ_i log π_i(a'_i | s', parents)` with `A' ~ π(·|s')`.
    pub fn soft_value(&self, policy: &JointPolicy, next_state: &Tensor, noise: &NodeNoise, alpha: f64) -> Result<Tensor> {
        if !(alpha >= 0.0) {
            return Err(Error::usage(format!("temperature must be non-negative, got {alpha}")));
        }
        let sample = policy.joint_sample(next_state, noise)?;
        let q = self.q_eval(next_state, &sample.action, QSelect::MinTarget)?;
        let coef = alpha / policy.node_count() as f64;
        q.zip_map(&sample.log_prob, |q, lp| q - coef * lp)
    }

    /// `target <- tau * online + (1 - tau) * target` for every pair.
    pub fn polyak_update(&mut self, tau: f64) -> Result<()> {
        check_tau(tau)?;
        self.target_q1.blend_from(&self.q1, tau)?;
        if let (Some(t), Some(q)) = (&mut self.target_q2, &self.q2) {
            t.blend_from(q, tau)?;
        }
        Ok(())
    }

    pub fn target_params(&self) -> Vec<(ParamKey, &Tensor)> {
        let mut out = self.target_q1.params();
        if let Some(t) = &self.target_q2 {
            out.extend(t.params());
        }
        out
    }
}

/// Online networks only; targets are never optimizer-owned.
impl Parameters for CriticEnsemble {
    fn params(&self) -> Vec<(ParamKey, &Tensor)> {
        let mut out = self.q1.params();
        if let Some(q) = &self.q2 {
            out.extend(q.params());
        }
        out
    }

    fn params_mut(&mut self) -> Vec<(ParamKey, &mut Tensor)> {
        let mut out = self.q1.params_mut();
        if let Some(q) = &mut self.q2 {
            out.extend(q.params_mut());
        }
        out
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::usage(format!("polyak tau must lie in (0, 1], got {tau}")));
    }
    Ok(())
}

pub fn q_eval(ensemble: &CriticEnsemble, state: &Tensor, action: &Tensor, which: QSelect) -> Result<Tensor> {
    ensemble.q_eval(state, action, which)
}

pub fn soft_value(ensemble: &CriticEnsemble, policy: &JointPolicy, next_state: &Tensor, noise: &NodeNoise, alpha: f64) -> Result<Tensor> {
    ensemble.soft_value(policy, next_state, noise, alpha)
}

pub fn polyak_update(ensemble: &mut CriticEnsemble, tau: f64) -> Result<()> {
    ensemble.polyak_update(tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{seeded_rng, Dense};

    fn ensemble(seed: u64) -> CriticEnsemble {
        let mut rng = seeded_rng(seed);
        CriticEnsemble::new(3, 2, &[16, 16], Activation::Relu, CriticMode::Twin, 0.005, &mut rng).unwrap()
    }

    fn max_gap(a: &Mlp, b: &Mlp) -> f64 {
        a.params()
            .iter()
            .zip(b.params())
            .flat_map(|((_, x), (_, y))| x.data().iter().zip(y.data()).map(|(p, q)| (p - q).abs()).collect::<Vec<_>>())
            .fold(0.0, f64::max)
    }

    #[test]
    fn fresh_targets_equal_online() {
        let c = ensemble(1);
        let mut rng = seeded_rng(2);
        let s = rng.normal_tensor(8, 3);
        let a = rng.normal_tensor(8, 2);
        let mut t1 = c.clone();
        std::mem::swap(&mut t1.q1, &mut t1.target_q1);
        assert_eq!(c.q_eval(&s, &a, QSelect::Q1).unwrap(), t1.q_eval(&s, &a, QSelect::Q1).unwrap());
    }

    #[test]
    fn min_online_bounds_and_symmetry() {
        let c = ensemble(3);
        let mut rng = seeded_rng(4);
        let s = rng.normal_tensor(32, 3);
        let a = rng.normal_tensor(32, 2);
        let m = c.q_eval(&s, &a, QSelect::MinOnline).unwrap();
        let q1 = c.q_eval(&s, &a, QSelect::Q1).unwrap();
        let q2 = c.q_eval(&s, &a, QSelect::Q2).unwrap();
        for i in 0..32 {
            assert!(m.data()[i] <= q1.data()[i] && m.data()[i] <= q2.data()[i]);
        }
        let mut swapped = c.clone();
        let q2net = swapped.q2.take().unwrap();
        swapped.q2 = Some(std::mem::replace(&mut swapped.q1, q2net));
        assert_eq!(swapped.q_eval(&s, &a, QSelect::MinOnline).unwrap(), m);
    }

    #[test]
    fn zero_final_layer_yields_bias() {
        let mut c = ensemble(5);
        let last = c.q1.layers_mut().last_mut().unwrap();
        *last = Dense::new(Tensor::zeros(&[1, 16]), Tensor::vector(vec![1.25]), Activation::Identity).unwrap();
        let mut rng = seeded_rng(6);
        let q = c.q_eval(&rng.normal_tensor(10, 3), &rng.normal_tensor(10, 2), QSelect::Q1).unwrap();
        assert!(q.data().iter().all(|&v| v == 1.25));
    }

    #[test]
    fn shape_errors() {
        let c = ensemble(7);
        let err = c.q_eval(&Tensor::vector(vec![0.0; 3]), &Tensor::vector(vec![0.0; 3]), QSelect::Q1).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn polyak_tau_one_copies_and_range_checked() {
        let mut c = ensemble(8);
        c.q1 = ensemble(9).q1;
        c.polyak_update(1.0).unwrap();
        assert_eq!(max_gap(&c.q1, &c.target_q1), 0.0);
        assert!(matches!(c.polyak_update(0.0), Err(Error::Usage(_))));
        assert!(matches!(c.polyak_update(1.5), Err(Error::Usage(_))));
    }

    #[test]
    fn polyak_contracts_geometrically() {
        let mut c = ensemble(10);
        c.q1 = ensemble(11).q1.renamed("critic.q1");
        let tau: f64 = 0.005;
        let g0 = max_gap(&c.q1, &c.target_q1);
        let half_life = (0.5f64.ln() / (1.0 - tau).ln()).ceil() as usize;
        for _ in 0..half_life {
            c.polyak_update(tau).unwrap();
        }
        let ratio = max_gap(&c.q1, &c.target_q1) / g0;
        let expect = (1.0 - tau).powi(half_life as i32);
        assert!((ratio - expect).abs() < 1e-9, "{ratio} vs {expect}");
        assert!(ratio <= 0.5 && ratio > 0.49);
    }

    #[test]
    fn single_mode_falls_back_to_q1() {
        let mut rng = seeded_rng(12);
        let c = CriticEnsemble::new(2, 1, &[8], Activation::Relu, CriticMode::Single, 0.01, &mut rng).unwrap();
        let s = rng.normal_tensor(4, 2);
        let a = rng.normal_tensor(4, 1);
        assert_eq!(c.q_eval(&s, &a, QSelect::MinOnline).unwrap(), c.q_eval(&s, &a, QSelect::Q1).unwrap());
        assert!(matches!(c.q_eval(&s, &a, QSelect::Q2), Err(Error::Usage(_))));
        assert_eq!(c.mode(), CriticMode::Single);
    }
}
