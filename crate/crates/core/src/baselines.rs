//! Target-agnostic comparison scanpaths: uniform random, centre-biased, and
//! winner-take-all over object feature contrast.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::GridLayout;
use crate::embedding::ObjectPatch;
use crate::error::{Error, Result};
use crate::generation::{sample_index, Mode, ScanpathRecord, Termination};
use crate::seeding::stream;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    #[default]
    Random,
    Center,
    Wta,
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaselineKind::Random => "random",
            BaselineKind::Center => "center",
            BaselineKind::Wta => "wta",
        })
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(BaselineKind::Random),
            "center" => Ok(BaselineKind::Center),
            "wta" => Ok(BaselineKind::Wta),
            other => Err(Error::config("baseline.kind", format!("unknown kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    /// Mean scanpath length of the training data.
    pub mean_length: f64,
    /// Gaussian spread in cells; `min(rows, cols) / 3` when unset.
    pub center_sigma: Option<f64>,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            kind: BaselineKind::Random,
            mean_length: 8.0,
            center_sigma: None,
            max_len: 30,
            seed: 0,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mean_length > 1.0) || !self.mean_length.is_finite() {
            return Err(Error::config(
                "baseline.mean_length",
                "must be finite and greater than 1",
            ));
        }
        if let Some(s) = self.center_sigma {
            if !(s > 0.0) {
                return Err(Error::config("baseline.center_sigma", "must be positive"));
            }
        }
        if self.max_len == 0 {
            return Err(Error::config("baseline.max_len", "must be positive"));
        }
        Ok(())
    }

    pub fn sigma(&self, layout: &GridLayout) -> f64 {
        self.center_sigma.unwrap_or(layout.rows.min(layout.cols) as f64 / 3.0)
    }
}

/// Fixation probabilities of the centre baseline, indexed by `id - 1`.
pub fn center_distribution(layout: &GridLayout, sigma: f64) -> Vec<f64> {
    let cx = (layout.cols as f64 - 1.0) / 2.0;
    let cy = (layout.rows as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (1..=layout.m())
        .map(|id| {
            let (x, y) = layout.position(id);
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            (-d2 / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

fn record(trial_id: &str, seed: u64, ids: Vec<usize>, terminated_by: Termination) -> ScanpathRecord {
    ScanpathRecord {
        trial_id: trial_id.to_string(),
        object_ids: ids,
        terminated_by,
        seed,
        mode: Mode::Sample,
    }
}

/// IID draws from `probs` with a stop chance of `1 / mean_length` after each fixation.
fn geometric_path<R: Rng>(probs: &[f64], cfg: &BaselineConfig, rng: &mut R) -> (Vec<usize>, Termination) {
    let stop = 1.0 / cfg.mean_length;
    let mut ids = Vec::new();
    while ids.len() < cfg.max_len {
        ids.push(sample_index(probs, rng) + 1);
        if rng.gen::<f64>() < stop {
            return (ids, Termination::Eos);
        }
    }
    (ids, Termination::MaxLen)
}

pub fn random_scanpath(layout: &GridLayout, cfg: &BaselineConfig, trial_id: &str, replicate: u64) -> ScanpathRecord {
    let probs = vec![1.0 / layout.m() as f64; layout.m()];
    let mut rng = stream(cfg.seed, &format!("random:{trial_id}"), replicate);
    let (ids, end) = geometric_path(&probs, cfg, &mut rng);
    record(trial_id, cfg.seed, ids, end)
}

pub fn center_scanpath(layout: &GridLayout, cfg: &BaselineConfig, trial_id: &str, replicate: u64) -> ScanpathRecord {
    let probs = center_distribution(layout, cfg.sigma(layout));
    let mut rng = stream(cfg.seed, &format!("center:{trial_id}"), replicate);
    let (ids, end) = geometric_path(&probs, cfg, &mut rng);
    record(trial_id, cfg.seed, ids, end)
}

/// Flattened `size × size` thumbnails of the object patches.
pub fn pixel_descriptors(objects: &[ObjectPatch], size: usize) -> Vec<Vec<f64>> {
    objects
        .iter()
        .map(|o| o.pixels.resized(size).data().iter().map(|&v| f64::from(v)).collect())
        .collect()
}

/// Distance of each descriptor from the mean descriptor.
pub fn contrast_saliency(descriptors: &[Vec<f64>]) -> Vec<f64> {
    let n = descriptors.len() as f64;
    let dim = descriptors.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; dim];
    for d in descriptors {
        for (m, v) in mean.iter_mut().zip(d) {
            *m += v / n;
        }
    }
    descriptors
        .iter()
        .map(|d| d.iter().zip(&mean).map(|(v, m)| (v - m).powi(2)).sum::<f64>().sqrt())
        .collect()
}

/// Winner-take-all with inhibition of return: fixate the most salient
/// unvisited object (lowest id on ties), zero it, halve its 4-neighbours.
/// Once every object has been visited the original saliency is restored.
pub fn wta_scanpath(
    layout: &GridLayout,
    descriptors: &[Vec<f64>],
    cfg: &BaselineConfig,
    trial_id: &str,
) -> Result<ScanpathRecord> {
    let m = layout.m();
    if descriptors.len() != m {
        return Err(Error::Contract(format!(
            "{} descriptors for {m} objects",
            descriptors.len()
        )));
    }
    let base = contrast_saliency(descriptors);
    let mut sal = base.clone();
    let mut visited = vec![false; m];
    let len = (cfg.mean_length.round() as usize).min(cfg.max_len);
    let mut ids = Vec::with_capacity(len);
    while ids.len() < len {
        if visited.iter().all(|&v| v) {
            visited.fill(false);
            sal.clone_from(&base);
        }
        let mut best: Option<usize> = None;
        for i in 0..m {
            if !visited[i] && best.map_or(true, |b| sal[i] > sal[b]) {
                best = Some(i);
            }
        }
        let i = best.expect("some object is unvisited");
        ids.push(i + 1);
        visited[i] = true;
        sal[i] = 0.0;
        let (c, r) = layout.position(i + 1);
        let mut neighbours = Vec::with_capacity(4);
        if c > 0 {
            neighbours.push(layout.id_at(c - 1, r));
        }
        if c + 1 < layout.cols {
            neighbours.push(layout.id_at(c + 1, r));
        }
        if r > 0 {
            neighbours.push(layout.id_at(c, r - 1));
        }
        if r + 1 < layout.rows {
            neighbours.push(layout.id_at(c, r + 1));
        }
        for n in neighbours {
            sal[n - 1] *= 0.5;
        }
    }
    let end = if len == cfg.max_len {
        Termination::MaxLen
    } else {
        Termination::Eos
    };
    Ok(record(trial_id, cfg.seed, ids, end))
}
