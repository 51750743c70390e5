use super::{check_action, EnvParams, EnvSnapshot, EnvSpec, ParamReader, StepResult};
use crate::error::{Error, Result};
use crate::numerics::{seeded_rng, Tensor};
use crate::policy::Squash;
use crate::Env;

const DT: f64 = 0.05;
const CONTROL_COST: f64 = 0.01;
const REACH_RADIUS: f64 = 0.05;
const INIT_SPREAD: f64 = 0.1;
/// Joint angle used to place the default target.
const DEFAULT_TARGET_ANGLE: f64 = 0.15;

/// End effector of a planar chain with unit links.
pub fn forward_kinematics(theta: &[f64]) -> (f64, f64) {
    let (mut x, mut y, mut phi) = (0.0, 0.0, 0.0);
    for t in theta {
        phi += t;
        x += phi.cos();
        y += phi.sin();
    }
    (x, y)
}

/// `k`-link planar arm driven by joint accelerations; state is
/// `[θ, θ̇, target_x, target_y]`.
#[derive(Clone, Debug)]
pub struct ChainReacher {
    spec: EnvSpec,
    target: (f64, f64),
    theta: Vec<f64>,
    theta_dot: Vec<f64>,
    steps: usize,
    ready: bool,
}

impl ChainReacher {
    pub fn new(k: usize, target: (f64, f64), max_steps: usize) -> Result<Self> {
        if k == 0 || max_steps == 0 {
            return Err(Error::Config("chain-reacher needs k >= 1 and max_steps >= 1".into()));
        }
        if !(target.0.is_finite() && target.1.is_finite()) {
            return Err(Error::Config("chain-reacher target must be finite".into()));
        }
        Ok(ChainReacher {
            spec: EnvSpec {
                name: "chain-reacher".into(),
                state_dim: 2 * k + 2,
                action_dim: k,
                action_bounds: vec![(-1.0, 1.0); k],
                max_episode_steps: max_steps,
                squash: Squash::Tanh,
            },
            target,
            theta: vec![0.0; k],
            theta_dot: vec![0.0; k],
            steps: 0,
            ready: false,
        })
    }

    /// `k` (default 2), `max_steps` (default 200) and `target_x`/`target_y`
    /// (default: the end effector with every joint at 0.15 rad).
    pub fn from_params(params: &EnvParams) -> Result<Self> {
        let p = ParamReader::new("chain-reacher", params, &["k", "target_x", "target_y", "max_steps"])?;
        let k: usize = p.get("k", 2)?;
        let (dx, dy) = forward_kinematics(&vec![DEFAULT_TARGET_ANGLE; k]);
        let target = (p.get("target_x", dx)?, p.get("target_y", dy)?);
        ChainReacher::new(k, target, p.get("max_steps", 200)?)
    }

    pub fn k(&self) -> usize {
        self.theta.len()
    }

    pub fn target(&self) -> (f64, f64) {
        self.target
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_dot(&self) -> &[f64] {
        &self.theta_dot
    }

    /// Overwrite joint state and start a fresh episode from it.
    pub fn set_state(&mut self, theta: &[f64], theta_dot: &[f64]) -> Result<Tensor> {
        if theta.len() != self.k() || theta_dot.len() != self.k() {
            return Err(Error::shape(format!("chain-reacher has {} joints", self.k())));
        }
        self.theta = theta.to_vec();
        self.theta_dot = theta_dot.to_vec();
        self.steps = 0;
        self.ready = true;
        Ok(self.observe())
    }

    pub fn distance(&self) -> f64 {
        let (x, y) = forward_kinematics(&self.theta);
        ((x - self.target.0).powi(2) + (y - self.target.1).powi(2)).sqrt()
    }

    fn observe(&self) -> Tensor {
        let mut s = Vec::with_capacity(self.spec.state_dim);
        s.extend_from_slice(&self.theta);
        s.extend_from_slice(&self.theta_dot);
        s.push(self.target.0);
        s.push(self.target.1);
        Tensor::vector(s)
    }
}

impl Env for ChainReacher {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Tensor {
        let mut rng = seeded_rng(seed);
        for t in &mut self.theta {
            *t = rng.uniform_in(-INIT_SPREAD, INIT_SPREAD);
        }
        self.theta_dot.iter_mut().for_each(|v| *v = 0.0);
        self.steps = 0;
        self.ready = true;
        self.observe()
    }

    fn step(&mut self, action: &Tensor) -> Result<StepResult> {
        if !self.ready {
            return Err(Error::usage("chain-reacher: step after episode end; call reset"));
        }
        check_action(&self.spec, action)?;
        let mut effort = 0.0;
        for ((th, om), &a) in self.theta.iter_mut().zip(&mut self.theta_dot).zip(action.data()) {
            let a = a.clamp(-1.0, 1.0);
            effort += a * a;
            *om = (*om + DT * a).clamp(-1.0, 1.0);
            *th += DT * *om;
        }
        self.steps += 1;
        let dist = self.distance();
        let terminal = dist < REACH_RADIUS;
        let truncated = !terminal && self.steps >= self.spec.max_episode_steps;
        self.ready = !(terminal || truncated);
        Ok(StepResult {
            next_state: self.observe(),
            reward: -dist - CONTROL_COST * effort,
            terminal,
            truncated,
        })
    }

    fn snapshot(&self) -> EnvSnapshot {
        EnvSnapshot { values: [&self.theta[..], &self.theta_dot[..]].concat(), steps: self.steps, ready: self.ready }
    }

    fn restore(&mut self, snap: &EnvSnapshot) -> Result<Tensor> {
        let k = self.k();
        if snap.values.len() != 2 * k {
            return Err(Error::Checkpoint(format!("chain-reacher-{k} snapshot has {} values", snap.values.len())));
        }
        self.theta.copy_from_slice(&snap.values[..k]);
        self.theta_dot.copy_from_slice(&snap.values[k..]);
        self.steps = snap.steps;
        self.ready = snap.ready;
        Ok(self.observe())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_arm_reward_is_distance() {
        let mut env = ChainReacher::new(2, (1.0, 1.0), 200).unwrap();
        env.set_state(&[0.0, 0.0], &[0.0, 0.0]).unwrap();
        let r = env.step(&Tensor::vector(vec![0.0, 0.0])).unwrap();
        assert_eq!(r.reward, -(1.0f64 + 1.0).sqrt());
        assert_eq!(r.next_state.data(), &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn zero_action_is_pure_integrator() {
        let mut env = ChainReacher::new(3, (-3.0, 0.0), 200).unwrap();
        env.set_state(&[0.0; 3], &[0.2, -0.4, 0.6]).unwrap();
        for n in 1..=10 {
            env.step(&Tensor::vector(vec![0.0; 3])).unwrap();
            assert_eq!(env.theta_dot(), &[0.2, -0.4, 0.6]);
            let expect = [0.2, -0.4, 0.6].map(|w| w * DT * n as f64);
            for (t, e) in env.theta().iter().zip(expect) {
                assert!((t - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn velocity_clips_and_actions_clip() {
        let mut env = ChainReacher::new(1, (-1.0, 0.0), 500).unwrap();
        env.set_state(&[0.0], &[0.99]).unwrap();
        let r = env.step(&Tensor::vector(vec![5.0])).unwrap();
        assert_eq!(env.theta_dot(), &[1.0]);
        assert!((r.reward + env.distance() + CONTROL_COST).abs() < 1e-15);
    }

    #[test]
    fn reset_draws_small_angles_deterministically() {
        let mut a = ChainReacher::new(3, (0.0, 1.0), 200).unwrap();
        let mut b = a.clone();
        let sa = a.reset(7);
        assert_eq!(sa, b.reset(7));
        assert!(sa.data()[..3].iter().all(|t| t.abs() <= INIT_SPREAD));
        assert_eq!(&sa.data()[3..6], &[0.0; 3]);
        assert_ne!(sa, a.reset(8));
    }

    #[test]
    fn truncation_is_not_terminal() {
        let mut env = ChainReacher::new(2, (-2.0, 0.0), 3).unwrap();
        env.reset(0);
        let flags: Vec<_> = (0..3)
            .map(|_| {
                let r = env.step(&Tensor::vector(vec![0.0, 0.0])).unwrap();
                (r.terminal, r.truncated)
            })
            .collect();
        assert_eq!(flags, [(false, false), (false, false), (false, true)]);
        assert!(matches!(env.step(&Tensor::vector(vec![0.0, 0.0])), Err(Error::Usage(_))));
    }

    #[test]
    fn reaching_target_terminates() {
        let (x, y) = forward_kinematics(&[0.3, 0.0]);
        let mut env = ChainReacher::new(2, (x, y), 200).unwrap();
        env.set_state(&[0.3, 0.0], &[0.0, 0.0]).unwrap();
        let r = env.step(&Tensor::vector(vec![0.0, 0.0])).unwrap();
        assert!(r.terminal && !r.truncated);
        assert_eq!(r.reward, 0.0);
    }

    #[test]
    fn default_target_is_reachable() {
        let env = ChainReacher::from_params(&EnvParams::new()).unwrap();
        let (x, y) = env.target();
        assert!((x * x + y * y).sqrt() < 2.0);
    }
}
