use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{similarity, GridLayout, Template, Trial};
use crate::error::{Error, Result};
use crate::seeding::stream;

/// Scripted searcher. The next object is drawn with probability proportional
/// to `exp(w_feature·sim − w_distance·manhattan − w_inhibition·inhibition)`,
/// where inhibition of a visited object fades linearly over `memory_span`
/// fixations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OraclePolicy {
    pub w_feature: f64,
    pub w_distance: f64,
    pub w_inhibition: f64,
    pub memory_span: usize,
    /// Chance of staying on the current (non-target) object.
    pub refix_prob: f64,
    /// Chance of one extra fixation on the target once found.
    pub confirm_prob: f64,
    pub max_len: usize,
}

impl Default for OraclePolicy {
    fn default() -> Self {
        OraclePolicy {
            w_feature: 5.0,
            w_distance: 1.6,
            w_inhibition: 6.0,
            memory_span: 8,
            refix_prob: 0.08,
            confirm_prob: 0.3,
            max_len: 30,
        }
    }
}

impl OraclePolicy {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("oracle.w_feature", self.w_feature),
            ("oracle.w_distance", self.w_distance),
            ("oracle.w_inhibition", self.w_inhibition),
        ] {
            if !v.is_finite() {
                return Err(Error::config(key, "must be finite"));
            }
        }
        for (key, v) in [
            ("oracle.refix_prob", self.refix_prob),
            ("oracle.confirm_prob", self.confirm_prob),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(key, "must be a probability"));
            }
        }
        if self.max_len == 0 {
            return Err(Error::config("oracle.max_len", "must be positive"));
        }
        if self.memory_span == 0 {
            return Err(Error::config("oracle.memory_span", "must be positive"));
        }
        Ok(())
    }
}

fn sample_log_weights<R: Rng>(scores: &[(usize, f64)], rng: &mut R) -> usize {
    let max = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scores.iter().map(|s| (s.1 - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (s, w) in scores.iter().zip(&weights) {
        if u < *w {
            return s.0;
        }
        u -= w;
    }
    scores.last().expect("non-empty candidate set").0
}

/// One search scanpath. `sims[j]` is the similarity of object `j+1` to the
/// target. The first fixation starts from the grid centre.
pub fn oracle_scanpath<R: Rng>(
    layout: &GridLayout,
    sims: &[f64],
    target_id: usize,
    policy: &OraclePolicy,
    rng: &mut R,
) -> Vec<usize> {
    let m = layout.m();
    let mut path: Vec<usize> = Vec::new();
    let mut last_visit: Vec<Option<usize>> = vec![None; m];
    let center = ((layout.cols as f64 - 1.0) / 2.0, (layout.rows as f64 - 1.0) / 2.0);
    while path.len() < policy.max_len {
        let step = path.len();
        let current = path.last().copied();
        if let Some(cur) = current {
            if cur != target_id && m > 1 && rng.gen::<f64>() < policy.refix_prob {
                path.push(cur);
                last_visit[cur - 1] = Some(step);
                continue;
            }
        }
        let mut scores = Vec::with_capacity(m);
        for id in 1..=m {
            if Some(id) == current && m > 1 {
                continue;
            }
            let dist = match current {
                Some(cur) => layout.manhattan(cur, id) as f64,
                None => {
                    let (x, y) = layout.position(id);
                    (x as f64 - center.0).abs() + (y as f64 - center.1).abs()
                }
            };
            let inhibition = last_visit[id - 1].map_or(0.0, |t| {
                let age = (step - t) as f64;
                (1.0 - (age - 1.0) / policy.memory_span as f64).max(0.0)
            });
            let score = policy.w_feature * sims[id - 1] - policy.w_distance * dist - policy.w_inhibition * inhibition;
            scores.push((id, score));
        }
        let next = sample_log_weights(&scores, rng);
        path.push(next);
        last_visit[next - 1] = Some(step);
        if next == target_id {
            if path.len() < policy.max_len && rng.gen::<f64>() < policy.confirm_prob {
                path.push(next);
            }
            break;
        }
    }
    path
}

/// `n` scanpaths for a synthetic trial, each on its own RNG stream.
pub fn oracle_scanpaths(
    layout: &GridLayout,
    templates: &[Template],
    trial: &Trial,
    policy: &OraclePolicy,
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    policy.validate()?;
    let items = trial
        .items
        .as_ref()
        .ok_or_else(|| Error::Contract(format!("trial {} has no item assignment", trial.trial_id)))?;
    let target = &templates[items[trial.target_id - 1]];
    let sims: Vec<f64> = items.iter().map(|&i| similarity(&templates[i], target)).collect();
    Ok((0..n)
        .map(|k| {
            let mut rng = stream(seed, &format!("oracle:{}", trial.trial_id), k as u64);
            oracle_scanpath(layout, &sims, trial.target_id, policy, &mut rng)
        })
        .collect())
}
