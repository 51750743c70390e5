//! Closed-form continuous-control environments with a reset/step contract.

mod bandit;
mod reacher;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::policy::Squash;

pub use bandit::QuadraticBandit;
pub use reacher::{forward_kinematics, ChainReacher};

#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub name: String,
    pub state_dim: usize,
    pub action_dim: usize,
    /// `(low, high)` per action coordinate; infinite when unbounded.
    pub action_bounds: Vec<(f64, f64)>,
    pub max_episode_steps: usize,
    pub squash: Squash,
}

impl EnvSpec {
    /// Map a policy action into the environment's bounds. Tanh policies emit
    /// `[-1, 1]`, rescaled affinely unless the bounds are already `±1`.
    pub fn scale_action(&self, action: &Tensor) -> Result<Tensor> {
        if self.squash == Squash::Off || self.action_bounds.iter().all(|&b| b == (-1.0, 1.0)) {
            return Ok(action.clone());
        }
        if action.len() != self.action_dim {
            return Err(Error::shape(format!("action width {} for {}", action.len(), self.name)));
        }
        let data = action
            .data()
            .iter()
            .zip(&self.action_bounds)
            .map(|(&a, &(lo, hi))| lo + 0.5 * (a + 1.0) * (hi - lo))
            .collect();
        Ok(Tensor::vector(data))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub next_state: Tensor,
    pub reward: f64,
    /// Genuine end of the task; bootstrapping stops.
    pub terminal: bool,
    /// Time limit hit; the state is not terminal.
    pub truncated: bool,
}

impl StepResult {
    pub fn episode_over(&self) -> bool {
        self.terminal || self.truncated
    }
}

/// Mutable episode state of an environment, for exact resume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSnapshot {
    pub values: Vec<f64>,
    pub steps: usize,
    pub ready: bool,
}

pub trait Env: Send {
    fn spec(&self) -> &EnvSpec;
    fn reset(&mut self, seed: u64) -> Tensor;
    fn step(&mut self, action: &Tensor) -> Result<StepResult>;
    fn snapshot(&self) -> EnvSnapshot;
    /// Restore a snapshot and return the current observation.
    fn restore(&mut self, snap: &EnvSnapshot) -> Result<Tensor>;
}

/// String key/value parameters as they appear in config files.
pub type EnvParams = BTreeMap<String, String>;

/// Environment name and parameters; enough to rebuild an instance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub name: String,
    pub params: EnvParams,
    /// Seed passed to `make_env` (used by environments with drawn constants).
    pub seed: u64,
}

impl EnvConfig {
    pub fn build(&self) -> Result<Box<dyn Env>> {
        make_env(&self.name, &self.params, self.seed)
    }
}

pub const ENV_NAMES: [&str; 2] = ["quadratic-bandit", "chain-reacher"];

pub fn make_env(name: &str, params: &EnvParams, seed: u64) -> Result<Box<dyn Env>> {
    match name {
        "quadratic-bandit" => Ok(Box::new(QuadraticBandit::from_params(params, seed)?)),
        "chain-reacher" => Ok(Box::new(ChainReacher::from_params(params)?)),
        other => Err(Error::usage(format!(
            "unknown environment `{other}`; available: {} (MuJoCo tasks are out of scope)",
            ENV_NAMES.join(", ")
        ))),
    }
}

pub(crate) struct ParamReader<'a> {
    env: &'static str,
    params: &'a EnvParams,
    known: &'static [&'static str],
}

impl<'a> ParamReader<'a> {
    pub(crate) fn new(env: &'static str, params: &'a EnvParams, known: &'static [&'static str]) -> Result<Self> {
        if let Some(k) = params.keys().find(|k| !known.contains(&k.as_str())) {
            return Err(Error::Config(format!("{env} has no parameter `{k}` (known: {})", known.join(", "))));
        }
        Ok(ParamReader { env, params, known })
    }

    pub(crate) fn get<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        debug_assert!(self.known.contains(&key));
        match self.params.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{}: cannot parse {key} = `{raw}`", self.env))),
        }
    }

    pub(crate) fn list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        let Some(raw) = self.params.get(key) else {
            return Ok(None);
        };
        raw.split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("{}: cannot parse {key} = `{raw}`", self.env)))
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }
}

pub(crate) fn check_action(spec: &EnvSpec, action: &Tensor) -> Result<()> {
    if action.rank() != 1 || action.len() != spec.action_dim {
        return Err(Error::shape(format!(
            "{} takes {} action coordinates, got shape {:?}",
            spec.name,
            spec.action_dim,
            action.shape()
        )));
    }
    if !action.is_finite() {
        return Err(Error::Domain(format!("non-finite action {:?} for {}", action.data(), spec.name)));
    }
    Ok(())
}
