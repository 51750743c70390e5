//! Flat `key = value` experiment files.
//!
//! ```text
//! # 4-joint reacher, chain-structured policy
//! name = reacher4-bsac
//! env = chain-reacher
//! env.k = 4
//! bsn = ../bsn/reacher4-chain.bsn
//! hidden = 64,64
//! total_steps = 100000
//! seeds = 0..5
//! ```
//!
//! `bsn` is a path relative to the config file, or `flat` for plain SAC.
//! Every other key maps onto a field of [`TrainConfig`] or [`AgentConfig`];
//! unknown and repeated keys are errors.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use bsac::{make_env, parse_bsn, Activation, AgentConfig, BsnGraph, CriticMode, EnvConfig, EnvParams, Error, Result};
use sha2::{Digest, Sha256};

pub const KEYS: &[&str] = &[
    "name",
    "env",
    "env_seed",
    "bsn",
    "alpha",
    "gamma",
    "tau",
    "actor_lr",
    "critic_lr",
    "alpha_lr",
    "batch_size",
    "warmup_steps",
    "update_every",
    "auto_alpha",
    "target_entropy",
    "hidden",
    "activation",
    "critic",
    "buffer_capacity",
    "log_std_min",
    "log_std_max",
    "total_steps",
    "eval_every",
    "eval_episodes",
    "seeds",
    "out",
    "threshold",
];

/// Where the policy structure comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum PolicyGraph {
    Flat,
    Bsn { path: PathBuf, graph: BsnGraph },
}

impl PolicyGraph {
    pub fn graph(&self) -> Option<&BsnGraph> {
        match self {
            PolicyGraph::Flat => None,
            PolicyGraph::Bsn { graph, .. } => Some(graph),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub name: String,
    pub env: EnvConfig,
    pub policy: PolicyGraph,
    pub agent: AgentConfig,
    pub total_steps: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    /// Return level used for steps-to-threshold in comparisons.
    pub threshold: Option<f64>,
}

fn config_err(line: usize, msg: impl Display) -> Error {
    Error::Config(format!("line {line}: {msg}"))
}

fn parse_value<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| config_err(line, format!("cannot parse `{value}` for `{key}`")))
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" => Ok(true),
        "false" | "no" | "off" => Ok(false),
        _ => Err(config_err(line, format!("`{key}` expects true or false, got `{value}`"))),
    }
}

/// `0,3,7` or the half-open range `0..5`.
pub fn parse_seeds(value: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("bad seed list `{value}`"));
    let seeds: Vec<u64> = if let Some((lo, hi)) = value.split_once("..") {
        let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: u64 = hi.trim().parse().map_err(|_| bad())?;
        (lo..hi).collect()
    } else {
        value.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    let mut sorted = seeds.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != seeds.len() {
        return Err(Error::Config(format!("repeated seed in `{value}`")));
    }
    Ok(seeds)
}

/// Split into `(line number, key, value)`, rejecting malformed and repeated keys.
fn entries(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut seen = BTreeMap::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| config_err(line, format!("expected `key = value`, got `{content}`")))?;
        let (key, value) = (key.trim().to_string(), value.trim().to_string());
        if key.is_empty() || value.is_empty() {
            return Err(config_err(line, format!("empty key or value in `{content}`")));
        }
        if let Some(first) = seen.insert(key.clone(), line) {
            return Err(config_err(line, format!("`{key}` already set on line {first}")));
        }
        out.push((line, key, value));
    }
    Ok(out)
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
        TrainConfig::parse(&text, base, stem)
    }

    /// `base` resolves a relative `bsn` path; `default_name` applies when `name` is absent.
    pub fn parse(text: &str, base: &Path, default_name: &str) -> Result<Self> {
        let mut agent = AgentConfig::default();
        let mut name = default_name.to_string();
        let mut env_name = None;
        let mut env_params = EnvParams::new();
        let mut env_seed = 0;
        let mut policy = None;
        let mut total_steps = 100_000;
        let mut eval_every = 5_000;
        let mut eval_episodes = 10;
        let mut seeds = vec![0];
        let mut out = PathBuf::from("runs");
        let mut threshold = None;

        for (line, key, value) in entries(text)? {
            if let Some(param) = key.strip_prefix("env.") {
                env_params.insert(param.to_string(), value);
                continue;
            }
            let v = value.as_str();
            match key.as_str() {
                "name" => name = value.clone(),
                "env" => env_name = Some(value.clone()),
                "env_seed" => env_seed = parse_value(line, &key, v)?,
                "bsn" => {
                    policy = Some(if v == "flat" {
                        PolicyGraph::Flat
                    } else {
                        let path = base.join(v);
                        let text = fs::read_to_string(&path)
                            .map_err(|e| config_err(line, format!("cannot read BSN file {}: {e}", path.display())))?;
                        let graph = parse_bsn(&text).map_err(|e| config_err(line, format!("{}: {e}", path.display())))?;
                        PolicyGraph::Bsn { path, graph }
                    })
                }
                "alpha" => agent.alpha = parse_value(line, &key, v)?,
                "gamma" => agent.gamma = parse_value(line, &key, v)?,
                "tau" => agent.tau = parse_value(line, &key, v)?,
                "actor_lr" => agent.actor_lr = parse_value(line, &key, v)?,
                "critic_lr" => agent.critic_lr = parse_value(line, &key, v)?,
                "alpha_lr" => agent.alpha_lr = parse_value(line, &key, v)?,
                "batch_size" => agent.batch_size = parse_value(line, &key, v)?,
                "warmup_steps" => agent.warmup_steps = parse_value(line, &key, v)?,
                "update_every" => agent.update_every = parse_value(line, &key, v)?,
                "auto_alpha" => agent.auto_alpha = parse_bool(line, &key, v)?,
                "target_entropy" => {
                    agent.target_entropy = if v == "auto" { None } else { Some(parse_value(line, &key, v)?) }
                }
                "hidden" => {
                    agent.hidden = v.split(',').map(|h| parse_value(line, &key, h.trim())).collect::<Result<_>>()?
                }
                "activation" => agent.activation = Activation::parse(v).map_err(|e| config_err(line, e))?,
                "critic" => agent.critic = CriticMode::parse(v).map_err(|e| config_err(line, e))?,
                "buffer_capacity" => agent.buffer_capacity = parse_value(line, &key, v)?,
                "log_std_min" => agent.log_std_min = parse_value(line, &key, v)?,
                "log_std_max" => agent.log_std_max = parse_value(line, &key, v)?,
                "total_steps" => total_steps = parse_value(line, &key, v)?,
                "eval_every" => eval_every = parse_value(line, &key, v)?,
                "eval_episodes" => eval_episodes = parse_value(line, &key, v)?,
                "seeds" => seeds = parse_seeds(v).map_err(|e| config_err(line, e))?,
                "out" => out = PathBuf::from(v),
                "threshold" => threshold = Some(parse_value(line, &key, v)?),
                _ => {
                    return Err(config_err(line, format!("unknown key `{key}`; known keys: {}, env.<param>", KEYS.join(", "))))
                }
            }
        }

        let env_name = env_name.ok_or_else(|| Error::Config("missing required key `env`".into()))?;
        let policy = policy.ok_or_else(|| Error::Config("missing required key `bsn` (a .bsn path or `flat`)".into()))?;
        let cfg = TrainConfig {
            name,
            env: EnvConfig { name: env_name, params: env_params, seed: env_seed },
            policy,
            agent,
            total_steps,
            eval_every,
            eval_episodes,
            seeds,
            out,
            threshold,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Everything that can be checked without training, including BSN/env agreement.
    pub fn validate(&self) -> Result<()> {
        self.agent.validate()?;
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config(format!("name `{}` must be non-empty and contain no path separators", self.name)));
        }
        if self.total_steps == 0 || self.eval_every == 0 || self.eval_episodes == 0 {
            return Err(Error::Config("total_steps, eval_every and eval_episodes must be positive".into()));
        }
        if let Some(t) = self.threshold {
            if !t.is_finite() {
                return Err(Error::Config("threshold must be finite".into()));
            }
        }
        let env = make_env(&self.env.name, &self.env.params, self.env.seed)?;
        if let Some(g) = self.policy.graph() {
            g.check_action_dim(env.spec().action_dim)
                .map_err(|e| Error::Config(format!("BSN does not fit `{}`: {e}", self.env.name)))?;
        }
        Ok(())
    }

    /// Sorted `key = value` lines covering every setting except `out` and
    /// `seeds`, with defaults filled in and the BSN inlined.
    pub fn canonical_lines(&self) -> Vec<String> {
        let a = &self.agent;
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut kv: Vec<(String, String)> = vec![
            ("name".into(), self.name.clone()),
            ("env".into(), self.env.name.clone()),
            ("env_seed".into(), self.env.seed.to_string()),
            (
                "bsn".into(),
                match self.policy.graph() {
                    None => "flat".into(),
                    Some(g) => g.to_text().lines().collect::<Vec<_>>().join("; "),
                },
            ),
            ("alpha".into(), a.alpha.to_string()),
            ("gamma".into(), a.gamma.to_string()),
            ("tau".into(), a.tau.to_string()),
            ("actor_lr".into(), a.actor_lr.to_string()),
            ("critic_lr".into(), a.critic_lr.to_string()),
            ("alpha_lr".into(), a.alpha_lr.to_string()),
            ("batch_size".into(), a.batch_size.to_string()),
            ("warmup_steps".into(), a.warmup_steps.to_string()),
            ("update_every".into(), a.update_every.to_string()),
            ("auto_alpha".into(), a.auto_alpha.to_string()),
            ("target_entropy".into(), a.target_entropy.map_or("auto".into(), |t| t.to_string())),
            ("hidden".into(), list(&a.hidden)),
            ("activation".into(), a.activation.name().into()),
            ("critic".into(), a.critic.name().into()),
            ("buffer_capacity".into(), a.buffer_capacity.to_string()),
            ("log_std_min".into(), a.log_std_min.to_string()),
            ("log_std_max".into(), a.log_std_max.to_string()),
            ("total_steps".into(), self.total_steps.to_string()),
            ("eval_every".into(), self.eval_every.to_string()),
            ("eval_episodes".into(), self.eval_episodes.to_string()),
            ("threshold".into(), self.threshold.map_or("none".into(), |t| t.to_string())),
        ];
        kv.extend(self.env.params.iter().map(|(k, v)| (format!("env.{k}"), v.clone())));
        kv.sort();
        kv.into_iter().map(|(k, v)| format!("{k} = {v}")).collect()
    }

    /// SHA-256 of the canonical lines, hex encoded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for line in self.canonical_lines() {
            h.update(line.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
