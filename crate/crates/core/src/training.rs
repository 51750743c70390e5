//! Environment interaction loop, greedy evaluation and resumable sessions.

use serde::{Deserialize, Serialize};

use crate::agent::{Agent, AgentConfig, UpdateMetrics};
use crate::bsn::BsnGraph;
use crate::envs::{Env, EnvConfig, EnvSnapshot, EnvSpec};
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, seeded_rng, SeededRng, Tensor};
use crate::policy::Squash;
use crate::replay::{ReplayBuffer, Transition};
use crate::sac::FlatSac;

/// Seed streams derived from a run seed.
pub const INIT_STREAM: u64 = 1;
pub const TRAIN_STREAM: u64 = 2;
pub const RESET_STREAM: u64 = 3;
pub const EVAL_STREAM: u64 = 4;

pub trait Learner {
    fn act(&self, state: &Tensor, rng: &mut SeededRng) -> Result<Tensor>;
    fn act_greedy(&self, state: &Tensor) -> Result<Tensor>;
    fn update(&mut self, buffer: &ReplayBuffer, rng: &mut SeededRng) -> Result<UpdateMetrics>;
    fn config(&self) -> &AgentConfig;
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn squash(&self) -> Squash;
}

impl Learner for Agent {
    fn act(&self, state: &Tensor, rng: &mut SeededRng) -> Result<Tensor> {
        Agent::act(self, state, rng)
    }

    fn act_greedy(&self, state: &Tensor) -> Result<Tensor> {
        Agent::act_greedy(self, state)
    }

    fn update(&mut self, buffer: &ReplayBuffer, rng: &mut SeededRng) -> Result<UpdateMetrics> {
        Agent::update(self, buffer, rng)
    }

    fn config(&self) -> &AgentConfig {
        Agent::config(self)
    }

    fn state_dim(&self) -> usize {
        self.policy.state_dim()
    }

    fn action_dim(&self) -> usize {
        self.policy.action_dim()
    }

    fn squash(&self) -> Squash {
        self.policy.squash()
    }
}

impl Learner for FlatSac {
    fn act(&self, state: &Tensor, rng: &mut SeededRng) -> Result<Tensor> {
        FlatSac::act(self, state, rng)
    }

    fn act_greedy(&self, state: &Tensor) -> Result<Tensor> {
        FlatSac::act_greedy(self, state)
    }

    fn update(&mut self, buffer: &ReplayBuffer, rng: &mut SeededRng) -> Result<UpdateMetrics> {
        FlatSac::update(self, buffer, rng)
    }

    fn config(&self) -> &AgentConfig {
        FlatSac::config(self)
    }

    fn state_dim(&self) -> usize {
        FlatSac::state_dim(self)
    }

    fn action_dim(&self) -> usize {
        FlatSac::action_dim(self)
    }

    fn squash(&self) -> Squash {
        FlatSac::squash(self)
    }
}

/// Either learner, as stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AnyLearner {
    Bsac(Agent),
    Sac(FlatSac),
}

impl AnyLearner {
    /// BSAC over `graph`, or flat SAC when `graph` is `None`.
    pub fn new(spec: &EnvSpec, graph: Option<BsnGraph>, config: AgentConfig, rng: &mut SeededRng) -> Result<Self> {
        match graph {
            None => Ok(AnyLearner::Sac(FlatSac::new(spec.state_dim, spec.action_dim, spec.squash, config, rng)?)),
            Some(g) => {
                g.check_action_dim(spec.action_dim).map_err(|e| Error::Config(e.to_string()))?;
                Ok(AnyLearner::Bsac(Agent::new(g, spec.state_dim, spec.squash, config, rng)?))
            }
        }
    }

    fn inner(&self) -> &dyn Learner {
        match self {
            AnyLearner::Bsac(a) => a,
            AnyLearner::Sac(s) => s,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            AnyLearner::Bsac(_) => "bsac",
            AnyLearner::Sac(_) => "sac",
        }
    }

    /// Check that an environment accepts this learner's states and actions.
    pub fn check_env(&self, spec: &EnvSpec) -> Result<()> {
        if spec.state_dim != self.state_dim() || spec.action_dim != self.action_dim() || spec.squash != self.squash() {
            return Err(Error::Config(format!(
                "learner is {}->{} ({:?}) but {} is {}->{} ({:?})",
                self.state_dim(),
                self.action_dim(),
                self.squash(),
                spec.name,
                spec.state_dim,
                spec.action_dim,
                spec.squash
            )));
        }
        Ok(())
    }
}

impl Learner for AnyLearner {
    fn act(&self, state: &Tensor, rng: &mut SeededRng) -> Result<Tensor> {
        self.inner().act(state, rng)
    }

    fn act_greedy(&self, state: &Tensor) -> Result<Tensor> {
        self.inner().act_greedy(state)
    }

    fn update(&mut self, buffer: &ReplayBuffer, rng: &mut SeededRng) -> Result<UpdateMetrics> {
        match self {
            AnyLearner::Bsac(a) => a.update(buffer, rng),
            AnyLearner::Sac(s) => s.update(buffer, rng),
        }
    }

    fn config(&self) -> &AgentConfig {
        self.inner().config()
    }

    fn state_dim(&self) -> usize {
        self.inner().state_dim()
    }

    fn action_dim(&self) -> usize {
        self.inner().action_dim()
    }

    fn squash(&self) -> Squash {
        self.inner().squash()
    }
}

/// Uniform on `[-1, 1]` under tanh, standard normal otherwise.
pub fn random_action(dim: usize, squash: Squash, rng: &mut SeededRng) -> Tensor {
    Tensor::vector(
        (0..dim)
            .map(|_| match squash {
                Squash::Tanh => rng.uniform_in(-1.0, 1.0),
                Squash::Off => rng.normal(),
            })
            .collect(),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub mean: f64,
    /// Population standard deviation over episodes.
    pub std: f64,
    pub returns: Vec<f64>,
}

/// Greedy (policy-mean) rollouts; episode `e` resets from `derive_seed(seed, EVAL_STREAM, e)`.
pub fn evaluate_policy<L: Learner + ?Sized>(learner: &L, env: &mut dyn Env, episodes: usize, seed: u64) -> Result<EvalStats> {
    if episodes == 0 {
        return Err(Error::usage("evaluation needs at least one episode"));
    }
    let spec = env.spec().clone();
    if spec.state_dim != learner.state_dim() || spec.action_dim != learner.action_dim() {
        return Err(Error::Config(format!(
            "checkpoint is {}->{} but {} is {}->{}",
            learner.state_dim(),
            learner.action_dim(),
            spec.name,
            spec.state_dim,
            spec.action_dim
        )));
    }
    let mut returns = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let mut state = env.reset(derive_seed(seed, EVAL_STREAM, e as u64));
        let mut total = 0.0;
        for _ in 0..spec.max_episode_steps {
            let a = spec.scale_action(&learner.act_greedy(&state)?)?;
            let r = env.step(&a)?;
            total += r.reward;
            if r.episode_over() {
                break;
            }
            state = r.next_state;
        }
        returns.push(total);
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let std = (returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n).sqrt();
    Ok(EvalStats { mean, std, returns })
}

/// What one environment step produced.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub step: u64,
    pub reward: f64,
    /// Return of the episode that ended on this step.
    pub episode_return: Option<f64>,
    pub metrics: Option<UpdateMetrics>,
}

/// Everything besides the learner needed to continue a run exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub seed: u64,
    pub steps: u64,
    pub episode: u64,
    pub episode_return: f64,
    pub observation: Tensor,
    pub env: EnvSnapshot,
    pub rng: SeededRng,
    pub buffer: ReplayBuffer,
}

/// One seeded training run: learner, environment, replay and RNG.
pub struct Trainer {
    pub learner: AnyLearner,
    env_config: EnvConfig,
    env: Box<dyn Env>,
    eval_env: Box<dyn Env>,
    buffer: ReplayBuffer,
    rng: SeededRng,
    seed: u64,
    steps: u64,
    episode: u64,
    episode_return: f64,
    observation: Tensor,
}

impl Trainer {
    /// Networks are initialized from `derive_seed(seed, INIT_STREAM, 0)`;
    /// actions and minibatches draw from `derive_seed(seed, TRAIN_STREAM, 0)`.
    pub fn new(env_config: EnvConfig, graph: Option<BsnGraph>, config: AgentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let env = env_config.build()?;
        let mut init = seeded_rng(derive_seed(seed, INIT_STREAM, 0));
        let learner = AnyLearner::new(env.spec(), graph, config, &mut init)?;
        Trainer::with_learner(env_config, learner, seed)
    }

    pub fn with_learner(env_config: EnvConfig, learner: AnyLearner, seed: u64) -> Result<Self> {
        let mut env = env_config.build()?;
        learner.check_env(env.spec())?;
        let eval_env = env_config.build()?;
        let spec = env.spec().clone();
        let buffer = ReplayBuffer::new(learner.config().buffer_capacity, spec.state_dim, spec.action_dim)?;
        let observation = env.reset(derive_seed(seed, RESET_STREAM, 0));
        Ok(Trainer {
            learner,
            env_config,
            env,
            eval_env,
            buffer,
            rng: seeded_rng(derive_seed(seed, TRAIN_STREAM, 0)),
            seed,
            steps: 0,
            episode: 0,
            episode_return: 0.0,
            observation,
        })
    }

    pub fn resume(env_config: EnvConfig, learner: AnyLearner, session: SessionState) -> Result<Self> {
        let mut t = Trainer::with_learner(env_config, learner, session.seed)?;
        let obs = t.env.restore(&session.env)?;
        if obs != session.observation {
            return Err(Error::Checkpoint("environment snapshot disagrees with stored observation".into()));
        }
        t.buffer = session.buffer;
        t.rng = session.rng;
        t.steps = session.steps;
        t.episode = session.episode;
        t.episode_return = session.episode_return;
        t.observation = session.observation;
        Ok(t)
    }

    pub fn session(&self) -> SessionState {
        SessionState {
            seed: self.seed,
            steps: self.steps,
            episode: self.episode,
            episode_return: self.episode_return,
            observation: self.observation.clone(),
            env: self.env.snapshot(),
            rng: self.rng.clone(),
            buffer: self.buffer.clone(),
        }
    }

    pub fn env_config(&self) -> &EnvConfig {
        &self.env_config
    }

    pub fn spec(&self) -> &EnvSpec {
        self.env.spec()
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    /// One environment step; after warm-up, every `update_every` steps, one learner update.
    pub fn step(&mut self) -> Result<StepOutcome> {
        let cfg = self.learner.config();
        let (warmup, every) = (cfg.warmup_steps as u64, cfg.update_every as u64);
        let t = self.steps + 1;
        let spec = self.env.spec().clone();
        let action = if t <= warmup {
            random_action(spec.action_dim, spec.squash, &mut self.rng)
        } else {
            self.learner.act(&self.observation, &mut self.rng)?
        };
        let result = self.env.step(&spec.scale_action(&action)?)?;
        self.buffer.push(Transition {
            state: self.observation.clone(),
            action,
            reward: result.reward,
            next_state: result.next_state.clone(),
            done: result.terminal,
        })?;
        self.episode_return += result.reward;
        let mut episode_return = None;
        if result.episode_over() {
            episode_return = Some(self.episode_return);
            self.episode += 1;
            self.episode_return = 0.0;
            self.observation = self.env.reset(derive_seed(self.seed, RESET_STREAM, self.episode));
        } else {
            self.observation = result.next_state;
        }
        self.steps = t;

        let metrics = if t > warmup && (t - warmup) % every == 0 {
            Some(self.learner.update(&self.buffer, &mut self.rng)?)
        } else {
            None
        };
        Ok(StepOutcome { step: t, reward: result.reward, episode_return, metrics })
    }

    /// Greedy evaluation on a separate environment instance.
    pub fn evaluate(&mut self, episodes: usize) -> Result<EvalStats> {
        evaluate_policy(&self.learner, self.eval_env.as_mut(), episodes, self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsn::parse_bsn;
    use crate::envs::EnvParams;

    fn reacher(k: usize) -> EnvConfig {
        EnvConfig { name: "chain-reacher".into(), params: EnvParams::from([("k".into(), k.to_string())]), seed: 0 }
    }

    fn tiny() -> AgentConfig {
        AgentConfig { hidden: vec![8], batch_size: 8, warmup_steps: 20, ..AgentConfig::default() }
    }

    #[test]
    fn warmup_changes_nothing_then_updates_start() {
        let mut t = Trainer::new(reacher(2), None, tiny(), 1).unwrap();
        let before = t.learner.clone();
        for _ in 0..20 {
            assert!(t.step().unwrap().metrics.is_none());
        }
        assert_eq!(t.learner, before);
        assert!(t.step().unwrap().metrics.is_some());
        assert_eq!(t.buffer().len(), 21);
    }

    #[test]
    fn update_every_spacing() {
        let cfg = AgentConfig { update_every: 3, ..tiny() };
        let mut t = Trainer::new(reacher(2), None, cfg, 2).unwrap();
        let updated: Vec<u64> = (0..32).map(|_| t.step().unwrap()).filter(|o| o.metrics.is_some()).map(|o| o.step).collect();
        assert_eq!(updated, [23, 26, 29, 32]);
    }

    #[test]
    fn same_seed_same_stream() {
        let g = parse_bsn("node a dims 0\nnode b dims 1 parents a").unwrap();
        let run = || {
            let mut t = Trainer::new(reacher(2), Some(g.clone()), tiny(), 5).unwrap();
            (0..40).map(|_| t.step().unwrap().metrics).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn mismatched_graph_is_config_error() {
        let g = parse_bsn("node a dims 0").unwrap();
        assert!(matches!(Trainer::new(reacher(2), Some(g), tiny(), 0), Err(Error::Config(_))));
    }

    #[test]
    fn evaluation_statistics() {
        let mut t = Trainer::new(reacher(2), None, tiny(), 3).unwrap();
        let one = t.evaluate(1).unwrap();
        assert_eq!(one.std, 0.0);
        let a = t.evaluate(4).unwrap();
        let b = t.evaluate(4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.returns.len(), 4);
    }
}
