use super::{check_action, EnvParams, EnvSnapshot, EnvSpec, ParamReader, StepResult};
use crate::error::{Error, Result};
use crate::numerics::{seeded_rng, Tensor};
use crate::policy::Squash;
use crate::Env;

/// One-step bandit on a constant state with reward `-‖a - a*‖²`.
///
/// Every step is terminal, so the max-entropy optimum at temperature α is
/// `N(a*, α/2 · I)`.
#[derive(Clone, Debug)]
pub struct QuadraticBandit {
    spec: EnvSpec,
    a_star: Vec<f64>,
    ready: bool,
}

impl QuadraticBandit {
    pub fn new(a_star: Vec<f64>, bound: f64) -> Result<Self> {
        if a_star.is_empty() {
            return Err(Error::Config("quadratic-bandit needs d >= 1".into()));
        }
        if !(bound > 0.0 && bound.is_finite()) {
            return Err(Error::Config(format!("quadratic-bandit bound must be positive, got {bound}")));
        }
        if let Some(v) = a_star.iter().find(|v| !(v.abs() <= bound)) {
            return Err(Error::Config(format!("a_star coordinate {v} exceeds bound {bound}")));
        }
        let d = a_star.len();
        Ok(QuadraticBandit {
            spec: EnvSpec {
                name: "quadratic-bandit".into(),
                state_dim: 1,
                action_dim: d,
                action_bounds: vec![(f64::NEG_INFINITY, f64::INFINITY); d],
                max_episode_steps: 1,
                squash: Squash::Off,
            },
            a_star,
            ready: false,
        })
    }

    /// `d`, `bound` (default 1) and `a_star` (comma list; drawn uniformly
    /// in `[-bound, bound]^d` from `seed` when absent).
    pub fn from_params(params: &EnvParams, seed: u64) -> Result<Self> {
        let p = ParamReader::new("quadratic-bandit", params, &["d", "a_star", "bound"])?;
        let bound = p.get("bound", 1.0)?;
        let a_star = match p.list("a_star")? {
            Some(a) => {
                let d = p.get("d", a.len())?;
                if d != a.len() {
                    return Err(Error::Config(format!("a_star has {} entries but d = {d}", a.len())));
                }
                a
            }
            None => {
                let d: usize = p.get("d", 2)?;
                let mut rng = seeded_rng(seed);
                (0..d).map(|_| rng.uniform_in(-bound, bound)).collect()
            }
        };
        QuadraticBandit::new(a_star, bound)
    }

    pub fn a_star(&self) -> &[f64] {
        &self.a_star
    }

    pub fn reward(&self, action: &[f64]) -> f64 {
        -action.iter().zip(&self.a_star).map(|(a, s)| (a - s) * (a - s)).sum::<f64>()
    }
}

impl Env for QuadraticBandit {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> Tensor {
        self.ready = true;
        Tensor::vector(vec![0.0])
    }

    fn step(&mut self, action: &Tensor) -> Result<StepResult> {
        if !self.ready {
            return Err(Error::usage("quadratic-bandit: step after episode end; call reset"));
        }
        check_action(&self.spec, action)?;
        self.ready = false;
        Ok(StepResult {
            next_state: Tensor::vector(vec![0.0]),
            reward: self.reward(action.data()),
            terminal: true,
            truncated: false,
        })
    }

    fn snapshot(&self) -> EnvSnapshot {
        EnvSnapshot { values: Vec::new(), steps: 0, ready: self.ready }
    }

    fn restore(&mut self, snap: &EnvSnapshot) -> Result<Tensor> {
        if !snap.values.is_empty() {
            return Err(Error::Checkpoint("quadratic-bandit snapshot carries no values".into()));
        }
        self.ready = snap.ready;
        Ok(Tensor::vector(vec![0.0]))
    }
}
