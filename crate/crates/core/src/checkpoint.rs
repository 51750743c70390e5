//! Versioned JSON container for a learner and, optionally, its training session.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::envs::EnvConfig;
use crate::error::{Error, Result};
use crate::training::{AnyLearner, SessionState, Trainer};

pub const CHECKPOINT_FORMAT: &str = "bsac-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub env: EnvConfig,
    pub learner: AnyLearner,
    /// Replay, RNG and environment state; present only for resumable checkpoints.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<SessionState>,
}

impl Checkpoint {
    pub fn new(env: EnvConfig, learner: AnyLearner) -> Self {
        Checkpoint { format: CHECKPOINT_FORMAT.into(), version: CHECKPOINT_VERSION, env, learner, session: None }
    }

    /// Learner only.
    pub fn of(trainer: &Trainer) -> Self {
        Checkpoint::new(trainer.env_config().clone(), trainer.learner.clone())
    }

    /// Learner plus everything needed to continue bit-compatibly.
    pub fn resumable(trainer: &Trainer) -> Self {
        Checkpoint { session: Some(trainer.session()), ..Checkpoint::of(trainer) }
    }

    pub fn into_trainer(self) -> Result<Trainer> {
        match self.session {
            Some(s) => Trainer::resume(self.env, self.learner, s),
            None => Err(Error::Checkpoint("checkpoint holds no training session".into())),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text)?;
        let format = raw.get("format").and_then(|v| v.as_str());
        let version = raw.get("version").and_then(|v| v.as_u64());
        if format != Some(CHECKPOINT_FORMAT) {
            return Err(Error::Checkpoint(format!("not a checkpoint (format {format:?})")));
        }
        if version != Some(CHECKPOINT_VERSION as u64) {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version:?}")));
        }
        Ok(serde_json::from_value(raw)?)
    }

    /// Writes to a sibling temporary file, then renames.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.partial");
        fs::write(&tmp, self.to_json()?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::AgentConfig;
    use crate::envs::EnvParams;

    fn trainer() -> Trainer {
        let env = EnvConfig { name: "chain-reacher".into(), params: EnvParams::new(), seed: 0 };
        let cfg = AgentConfig { hidden: vec![4], batch_size: 4, warmup_steps: 4, ..AgentConfig::default() };
        Trainer::new(env, None, cfg, 0).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let mut t = trainer();
        for _ in 0..10 {
            t.step().unwrap();
        }
        let c = Checkpoint::resumable(&t);
        assert_eq!(Checkpoint::from_json(&c.to_json().unwrap()).unwrap(), c);
    }

    #[test]
    fn rejects_foreign_and_future_files() {
        let c = Checkpoint::of(&trainer());
        let mut v: serde_json::Value = serde_json::from_str(&c.to_json().unwrap()).unwrap();
        v["version"] = 2.into();
        assert!(matches!(Checkpoint::from_json(&v.to_string()), Err(Error::Checkpoint(_))));
        assert!(matches!(Checkpoint::from_json("{\"format\":\"other\"}"), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn learner_only_checkpoint_cannot_resume() {
        assert!(matches!(Checkpoint::of(&trainer()).into_trainer(), Err(Error::Checkpoint(_))));
    }
}
