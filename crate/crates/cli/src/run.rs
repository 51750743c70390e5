//! Seeded training runs and their on-disk records.
//!
//! A run for seed `n` is written under `<out>/<name>/seed-n.incomplete/` and
//! renamed to `seed-n/` only once every file is complete:
//!
//! - `metrics.csv`: one row per update or evaluation step
//! - `record.json`: [`RunRecord`]
//! - `checkpoint.json`: final learner
//! - `config.txt`: canonical config lines

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use bsac::{Checkpoint, EnvConfig, Error, EvalStats, Result, Trainer, UpdateMetrics};
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;

pub const RECORD_FORMAT: &str = "bsac-run-record";
pub const RECORD_VERSION: u32 = 1;

pub const CSV_HEADER: [&str; 8] =
    ["step", "critic_loss", "policy_loss", "mean_q", "joint_logprob", "alpha", "eval_return_mean", "eval_return_std"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: u64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub format: String,
    pub version: u32,
    pub name: String,
    pub config_hash: String,
    pub seed: u64,
    pub env: EnvConfig,
    /// `bsac` or `sac`.
    pub learner: String,
    pub total_steps: u64,
    pub threshold: Option<f64>,
    pub updates: u64,
    pub evals: Vec<EvalPoint>,
    pub wall_clock_secs: f64,
    /// Relative to the run directory.
    pub metrics_csv: PathBuf,
    pub checkpoint: PathBuf,
}

impl RunRecord {
    pub fn load(path: &Path) -> Result<Self> {
        let rec: RunRecord = serde_json::from_str(&fs::read_to_string(path)?)?;
        if rec.format != RECORD_FORMAT || rec.version != RECORD_VERSION {
            return Err(Error::Usage(format!(
                "{}: not a version {RECORD_VERSION} run record",
                path.display()
            )));
        }
        Ok(rec)
    }
}

pub fn seed_dir(cfg: &TrainConfig, seed: u64) -> PathBuf {
    cfg.out.join(&cfg.name).join(format!("seed-{seed}"))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn write_row(w: &mut csv::Writer<fs::File>, step: u64, m: Option<&UpdateMetrics>, eval: Option<&EvalStats>) -> Result<()> {
    let num = |v: f64| v.to_string();
    let mut row = vec![step.to_string()];
    match m {
        Some(m) => row.extend([m.critic_loss, m.policy_loss, m.mean_q, m.joint_log_prob, m.alpha].map(num)),
        None => row.extend(std::iter::repeat_n(String::new(), 5)),
    }
    match eval {
        Some(e) => row.extend([num(e.mean), num(e.std)]),
        None => row.extend([String::new(), String::new()]),
    }
    w.write_record(&row).map_err(csv_err)
}

/// Progress callbacks for long runs.
pub trait Observer {
    fn on_eval(&mut self, _seed: u64, _point: &EvalPoint) {}
}

pub struct Silent;

impl Observer for Silent {}

/// Train one seed to completion. Evaluates every `eval_every` steps and at
/// `total_steps`.
pub fn run_seed(cfg: &TrainConfig, seed: u64, observer: &mut dyn Observer) -> Result<RunRecord> {
    cfg.validate()?;
    let done_dir = seed_dir(cfg, seed);
    if done_dir.exists() {
        return Err(Error::Usage(format!("{} already exists", done_dir.display())));
    }
    let dir = done_dir.with_extension("incomplete");
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.txt"), cfg.canonical_lines().join("\n") + "\n")?;

    let started = Instant::now();
    let mut trainer = Trainer::new(cfg.env.clone(), cfg.policy.graph().cloned(), cfg.agent.clone(), seed)?;
    let mut csv = csv::Writer::from_path(dir.join("metrics.csv")).map_err(csv_err)?;
    csv.write_record(CSV_HEADER).map_err(csv_err)?;
    let mut evals = Vec::new();
    let mut updates = 0;
    for _ in 0..cfg.total_steps {
        let out = trainer.step()?;
        if let Some(m) = &out.metrics {
            if !m.is_finite() {
                return Err(Error::Numeric(format!("non-finite metrics at step {}: {m:?}", out.step)));
            }
            updates += 1;
        }
        let eval = if out.step % cfg.eval_every == 0 || out.step == cfg.total_steps {
            let stats = trainer.evaluate(cfg.eval_episodes)?;
            let point = EvalPoint { step: out.step, mean: stats.mean, std: stats.std };
            observer.on_eval(seed, &point);
            evals.push(point);
            Some(stats)
        } else {
            None
        };
        if out.metrics.is_some() || eval.is_some() {
            write_row(&mut csv, out.step, out.metrics.as_ref(), eval.as_ref())?;
        }
    }
    csv.flush()?;
    drop(csv);

    Checkpoint::of(&trainer).save(&dir.join("checkpoint.json"))?;
    let record = RunRecord {
        format: RECORD_FORMAT.into(),
        version: RECORD_VERSION,
        name: cfg.name.clone(),
        config_hash: cfg.hash(),
        seed,
        env: cfg.env.clone(),
        learner: trainer.learner.kind().into(),
        total_steps: cfg.total_steps,
        threshold: cfg.threshold,
        updates,
        evals,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        metrics_csv: "metrics.csv".into(),
        checkpoint: "checkpoint.json".into(),
    };
    fs::write(dir.join("record.json"), serde_json::to_string_pretty(&record)?)?;
    fs::rename(&dir, &done_dir)?;
    Ok(record)
}

/// Every seed of the config, `jobs` at a time on independent threads.
pub fn run_all(cfg: &TrainConfig, jobs: usize, observer: &(dyn Fn(u64, &EvalPoint) + Sync)) -> Vec<(u64, Result<RunRecord>)> {
    struct Forward<'a>(&'a (dyn Fn(u64, &EvalPoint) + Sync));
    impl Observer for Forward<'_> {
        fn on_eval(&mut self, seed: u64, point: &EvalPoint) {
            (self.0)(seed, point)
        }
    }
    let mut results = Vec::new();
    for chunk in cfg.seeds.chunks(jobs.max(1)) {
        std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&seed| (seed, s.spawn(move || run_seed(cfg, seed, &mut Forward(observer)))))
                .collect();
            for (seed, h) in handles {
                let r = h.join().unwrap_or_else(|_| Err(Error::Usage(format!("seed {seed} worker panicked"))));
                results.push((seed, r));
            }
        });
    }
    results
}

/// Greedy evaluation of a saved learner. `env` overrides the checkpoint's
/// environment and must match its dimensions.
pub fn evaluate_checkpoint(path: &Path, env: Option<EnvConfig>, episodes: usize, seed: u64) -> Result<EvalStats> {
    if episodes == 0 {
        return Err(Error::Usage("episodes must be positive".into()));
    }
    let ckpt = Checkpoint::load(path)?;
    let env_cfg = env.unwrap_or(ckpt.env);
    let mut env = env_cfg.build()?;
    ckpt.learner
        .check_env(env.spec())
        .map_err(|e| Error::Config(format!("checkpoint does not fit `{}`: {e}", env_cfg.name)))?;
    bsac::evaluate_policy(&ckpt.learner, env.as_mut(), episodes, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_leave_missing_columns_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let mut w = csv::Writer::from_path(&path).unwrap();
        w.write_record(CSV_HEADER).unwrap();
        write_row(&mut w, 3, None, Some(&EvalStats { mean: -1.5, std: 0.25, returns: vec![] })).unwrap();
        let m = UpdateMetrics { critic_loss: 1.0, policy_loss: -2.0, mean_q: 0.5, joint_log_prob: -0.1, alpha: 0.2, ..Default::default() };
        write_row(&mut w, 4, Some(&m), None).unwrap();
        w.flush().unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "step,critic_loss,policy_loss,mean_q,joint_logprob,alpha,eval_return_mean,eval_return_std\n\
             3,,,,,,-1.5,0.25\n4,1,-2,0.5,-0.1,0.2,,\n"
        );
    }
}
