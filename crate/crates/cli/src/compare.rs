//! Seed-aggregated comparison of finished runs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use bsac::{Error, Result};

use crate::run::{EvalPoint, RunRecord};

pub const NOT_REACHED: &str = "not reached";

/// First evaluation step whose mean return is at least `threshold`.
pub fn steps_to_threshold(evals: &[EvalPoint], threshold: f64) -> Option<u64> {
    evals.iter().find(|e| e.mean >= threshold).map(|e| e.step)
}

/// Trapezoid area under the `(step, mean return)` curve.
pub fn auc(evals: &[EvalPoint]) -> f64 {
    evals.windows(2).map(|w| (w[1].step - w[0].step) as f64 * (w[0].mean + w[1].mean) / 2.0).sum()
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Median with unreached seeds ranked after every reached one; `None` when
/// the median itself is unreached.
pub fn median_steps(steps: &[Option<u64>]) -> Option<f64> {
    let mut v: Vec<f64> = steps.iter().map(|s| s.map_or(f64::INFINITY, |s| s as f64)).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return None;
    }
    let m = if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 };
    m.is_finite().then_some(m)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigSummary {
    pub dir: PathBuf,
    pub name: String,
    pub config_hash: String,
    pub learner: String,
    pub seeds: Vec<u64>,
    pub steps_to_threshold: Vec<Option<u64>>,
    pub median_steps: Option<f64>,
    pub final_return: (f64, f64),
    pub auc: (f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub threshold: f64,
    pub total_steps: u64,
    pub configs: Vec<ConfigSummary>,
}

/// Finished records under `dir`, ordered by seed. `*.incomplete` runs are skipped.
pub fn load_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::Usage(format!("{}: {e}", dir.display())))? {
        let path = entry?.path();
        let is_seed = path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("seed-") && !n.ends_with(".incomplete"));
        if is_seed && path.join("record.json").is_file() {
            out.push(RunRecord::load(&path.join("record.json"))?);
        }
    }
    if out.is_empty() {
        return Err(Error::Usage(format!("no finished runs under {}", dir.display())));
    }
    out.sort_by_key(|r| r.seed);
    Ok(out)
}

pub fn summarize(dir: &Path, records: &[RunRecord], threshold: f64) -> Result<ConfigSummary> {
    let first = &records[0];
    if let Some(r) = records.iter().find(|r| r.config_hash != first.config_hash) {
        return Err(Error::Usage(format!("{} mixes configs (seed {} differs from seed {})", dir.display(), r.seed, first.seed)));
    }
    if let Some(r) = records.iter().find(|r| r.evals.is_empty()) {
        return Err(Error::Usage(format!("seed {} in {} has no evaluations", r.seed, dir.display())));
    }
    let steps: Vec<Option<u64>> = records.iter().map(|r| steps_to_threshold(&r.evals, threshold)).collect();
    let finals: Vec<f64> = records.iter().map(|r| r.evals.last().map_or(f64::NAN, |e| e.mean)).collect();
    let aucs: Vec<f64> = records.iter().map(|r| auc(&r.evals)).collect();
    Ok(ConfigSummary {
        dir: dir.to_path_buf(),
        name: first.name.clone(),
        config_hash: first.config_hash.clone(),
        learner: first.learner.clone(),
        seeds: records.iter().map(|r| r.seed).collect(),
        median_steps: median_steps(&steps),
        steps_to_threshold: steps,
        final_return: mean_std(&finals),
        auc: mean_std(&aucs),
    })
}

/// Aggregate runs of at least two configs that share env and step budget.
/// `threshold` falls back to the one recorded in the configs.
pub fn compare(dirs: &[PathBuf], threshold: Option<f64>) -> Result<Comparison> {
    if dirs.len() < 2 {
        return Err(Error::Usage("compare needs at least two run directories".into()));
    }
    let sets: Vec<Vec<RunRecord>> = dirs.iter().map(|d| load_records(d)).collect::<Result<_>>()?;
    let reference = &sets[0][0];
    for (dir, set) in dirs.iter().zip(&sets) {
        for r in set {
            if r.env != reference.env {
                return Err(Error::Usage(format!(
                    "{} ran on {:?}, {} on {:?}",
                    dir.display(),
                    r.env,
                    dirs[0].display(),
                    reference.env
                )));
            }
            if r.total_steps != reference.total_steps {
                return Err(Error::Usage(format!(
                    "{} ran {} steps, {} ran {}",
                    dir.display(),
                    r.total_steps,
                    dirs[0].display(),
                    reference.total_steps
                )));
            }
        }
    }
    let threshold = match threshold {
        Some(t) => t,
        None => {
            let declared: Vec<Option<f64>> = sets.iter().flatten().map(|r| r.threshold).collect();
            match declared[0] {
                Some(t) if declared.iter().all(|d| *d == Some(t)) => t,
                _ => return Err(Error::Usage("no --threshold given and the runs do not declare one common threshold".into())),
            }
        }
    };
    let configs = dirs.iter().zip(&sets).map(|(d, s)| summarize(d, s, threshold)).collect::<Result<_>>()?;
    Ok(Comparison { threshold, total_steps: reference.total_steps, configs })
}

fn steps_cell(m: Option<f64>) -> String {
    m.map_or(NOT_REACHED.to_string(), |m| m.to_string())
}

impl Comparison {
    pub const CSV_HEADER: [&'static str; 13] = [
        "config",
        "learner",
        "seeds",
        "threshold",
        "steps_to_threshold_median",
        "reached",
        "final_return_mean",
        "final_return_std",
        "auc_mean",
        "auc_std",
        "steps_to_threshold_median_diff",
        "final_return_mean_diff",
        "auc_mean_diff",
    ];

    /// Differences are against the first config.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(Self::CSV_HEADER).map_err(io)?;
        let base = &self.configs[0];
        for c in &self.configs {
            let reached = c.steps_to_threshold.iter().filter(|s| s.is_some()).count();
            let diff = match (c.median_steps, base.median_steps) {
                (Some(a), Some(b)) => (a - b).to_string(),
                _ => NOT_REACHED.to_string(),
            };
            w.write_record([
                c.name.clone(),
                c.learner.clone(),
                c.seeds.len().to_string(),
                self.threshold.to_string(),
                steps_cell(c.median_steps),
                format!("{reached}/{}", c.seeds.len()),
                c.final_return.0.to_string(),
                c.final_return.1.to_string(),
                c.auc.0.to_string(),
                c.auc.1.to_string(),
                diff,
                (c.final_return.0 - base.final_return.0).to_string(),
                (c.auc.0 - base.auc.0).to_string(),
            ])
            .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "threshold {}  total steps {}", self.threshold, self.total_steps);
        let _ = writeln!(
            s,
            "{:<24} {:<5} {:>5} {:>18} {:>8} {:>22} {:>26}",
            "config", "kind", "seeds", "median steps", "reached", "final return", "AUC"
        );
        for c in &self.configs {
            let reached = c.steps_to_threshold.iter().filter(|x| x.is_some()).count();
            let _ = writeln!(
                s,
                "{:<24} {:<5} {:>5} {:>18} {:>8} {:>22} {:>26}",
                c.name,
                c.learner,
                c.seeds.len(),
                steps_cell(c.median_steps),
                format!("{reached}/{}", c.seeds.len()),
                format!("{:.3} ± {:.3}", c.final_return.0, c.final_return.1),
                format!("{:.1} ± {:.1}", c.auc.0, c.auc.1),
            );
        }
        let base = &self.configs[0];
        for c in &self.configs[1..] {
            let _ = writeln!(
                s,
                "{} vs {}: final return {:+.3}, AUC {:+.1}, median steps {}",
                c.name,
                base.name,
                c.final_return.0 - base.final_return.0,
                c.auc.0 - base.auc.0,
                match (c.median_steps, base.median_steps) {
                    (Some(a), Some(b)) => format!("{:+}", a - b),
                    _ => NOT_REACHED.into(),
                }
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[(u64, f64)]) -> Vec<EvalPoint> {
        v.iter().map(|&(step, mean)| EvalPoint { step, mean, std: 0.0 }).collect()
    }

    #[test]
    fn trapezoid_by_hand() {
        // (0,-10) (10,-6) (30,-2): 10*(-8) + 20*(-4) = -160
        assert_eq!(auc(&pts(&[(0, -10.0), (10, -6.0), (30, -2.0)])), -160.0);
        assert_eq!(auc(&pts(&[(5, 1.0)])), 0.0);
    }

    #[test]
    fn first_crossing_counts() {
        let e = pts(&[(100, -30.0), (200, -19.0), (300, -25.0), (400, -10.0)]);
        assert_eq!(steps_to_threshold(&e, -20.0), Some(200));
        assert_eq!(steps_to_threshold(&e, -5.0), None);
        assert_eq!(steps_to_threshold(&e, -19.0), Some(200));
    }

    #[test]
    fn median_handles_unreached() {
        assert_eq!(median_steps(&[Some(3), None, Some(1)]), Some(3.0));
        assert_eq!(median_steps(&[Some(3), None, None]), None);
        assert_eq!(median_steps(&[Some(2), Some(4)]), Some(3.0));
        assert_eq!(median_steps(&[Some(2), None]), None);
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[7.0]), (7.0, 0.0));
    }
}
