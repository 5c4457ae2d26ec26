//! Autoregressive scanpath sampling, heatmaps and the history-swap probe.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::GridLayout;
use crate::error::{Error, Result};
use crate::model::{EncodedTrial, OatModel};
use crate::oa::EOS;
use crate::seeding::stream;
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Greedy,
    Sample,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Greedy => "greedy",
            Mode::Sample => "sample",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Mode::Greedy),
            "sample" => Ok(Mode::Sample),
            other => Err(Error::config("generate.mode", format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Eos,
    MaxLen,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Termination::Eos => "eos",
            Termination::MaxLen => "max_len",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanpathRecord {
    pub trial_id: String,
    pub object_ids: Vec<usize>,
    pub terminated_by: Termination,
    pub seed: u64,
    pub mode: Mode,
}

impl ScanpathRecord {
    /// `trial_id \t seed \t mode \t ids \t termination`, ids comma-separated.
    pub fn to_line(&self) -> String {
        let ids: Vec<String> = self.object_ids.iter().map(usize::to_string).collect();
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.trial_id,
            self.seed,
            self.mode,
            ids.join(","),
            self.terminated_by
        )
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let bad = |what: &str| Error::Format(format!("scanpath line `{line}`: {what}"));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(bad("expected 5 tab-separated fields"));
        }
        let object_ids = if f[3].is_empty() {
            Vec::new()
        } else {
            f[3].split(',')
                .map(|s| s.trim().parse::<usize>().map_err(|_| bad("bad object id")))
                .collect::<Result<Vec<_>>>()?
        };
        let terminated_by = match f[4].trim() {
            "eos" => Termination::Eos,
            "max_len" => Termination::MaxLen,
            _ => return Err(bad("termination must be eos or max_len")),
        };
        Ok(ScanpathRecord {
            trial_id: f[0].to_string(),
            seed: f[1].parse().map_err(|_| bad("bad seed"))?,
            mode: f[2].parse().map_err(|_| bad("bad mode"))?,
            object_ids,
            terminated_by,
        })
    }
}

pub fn write_records(records: &[ScanpathRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}

pub fn parse_records(text: &str) -> Result<Vec<ScanpathRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(ScanpathRecord::parse_line)
        .collect()
}

/// Draws an index with probability `probs[i]`.
pub fn sample_index<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, &p) in probs.iter().enumerate() {
        if u < p {
            return i;
        }
        u -= p;
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Largest entry, lowest index on ties.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Generates one scanpath. Sampling draws from the stream
/// `(seed, trial_id, replicate)`; greedy ignores it.
pub fn generate<T: Scalar>(
    model: &OatModel<T>,
    enc: &EncodedTrial<T>,
    trial_id: &str,
    mode: Mode,
    seed: u64,
    replicate: u64,
    max_len: usize,
) -> Result<ScanpathRecord> {
    let mut rng = stream(seed, &format!("generate:{trial_id}"), replicate);
    let mut ids = Vec::new();
    let mut terminated_by = Termination::MaxLen;
    while ids.len() < max_len {
        let probs = model.next_distribution(enc, &ids)?;
        let next = match mode {
            Mode::Greedy => argmax(&probs),
            Mode::Sample => sample_index(&probs, &mut rng),
        };
        if next == EOS {
            terminated_by = Termination::Eos;
            break;
        }
        ids.push(next);
    }
    Ok(ScanpathRecord {
        trial_id: trial_id.to_string(),
        object_ids: ids,
        terminated_by,
        seed,
        mode,
    })
}

/// `n` replicates of one trial; replicate `k` uses stream `k`, so the result
/// does not depend on how many threads run them.
pub fn generate_many<T: Scalar>(
    model: &OatModel<T>,
    enc: &EncodedTrial<T>,
    trial_id: &str,
    mode: Mode,
    seed: u64,
    n: usize,
    max_len: usize,
) -> Result<Vec<ScanpathRecord>> {
    (0..n as u64)
        .into_par_iter()
        .map(|k| generate(model, enc, trial_id, mode, seed, k, max_len))
        .collect()
}

/// Fraction of all fixations that land on each object (index `id - 1`).
pub fn heatmap<'a>(paths: impl IntoIterator<Item = &'a [usize]>, layout: &GridLayout) -> Result<Vec<f64>> {
    let mut counts = vec![0.0; layout.m()];
    let mut total = 0.0;
    for p in paths {
        for &id in p {
            if !layout.contains_id(id) {
                return Err(Error::Range {
                    what: "object id",
                    index: id,
                    limit: layout.m(),
                });
            }
            counts[id - 1] += 1.0;
            total += 1.0;
        }
    }
    if total > 0.0 {
        counts.iter_mut().for_each(|c| *c /= total);
    }
    Ok(counts)
}

/// Heatmap as a `rows × cols` CSV grid.
pub fn heatmap_csv(heat: &[f64], layout: &GridLayout) -> String {
    let mut out = String::new();
    for row in heat.chunks(layout.cols) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Heatmap rendered over the layout's cell boxes as a binary PGM, scaled so
/// the hottest object is white.
pub fn heatmap_pgm(heat: &[f64], layout: &GridLayout) -> Vec<u8> {
    let (w, h) = (layout.image_width as usize, layout.image_height as usize);
    let peak = heat.iter().copied().fold(0.0, f64::max);
    let mut pixels = vec![0u8; w * h];
    for (i, c) in layout.cells.iter().enumerate() {
        let v = if peak > 0.0 {
            (heat[i] / peak * 255.0).round() as u8
        } else {
            0
        };
        for y in c.top as usize..(c.top + c.height) as usize {
            pixels[y * w + c.left as usize..y * w + (c.left + c.width) as usize].fill(v);
        }
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(&pixels);
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeDelta {
    /// Number of history entries seen before the predicted fixation.
    pub step: usize,
    /// Object the base history fixated at the swap step.
    pub object: usize,
    pub before: f64,
    pub after: f64,
    /// `(after − before) / before`.
    pub delta: f64,
}

/// Replaces `history[swap_step]` by `replacement` and reports, for each
/// probe step `s` (a prefix length past the swap), how the probability of
/// fixating the swapped-out object next changes.
pub fn history_swap_probe<T: Scalar>(
    model: &OatModel<T>,
    enc: &EncodedTrial<T>,
    history: &[usize],
    swap_step: usize,
    replacement: usize,
    probe_steps: &[usize],
) -> Result<Vec<ProbeDelta>> {
    if swap_step >= history.len() {
        return Err(Error::Range {
            what: "swap step",
            index: swap_step,
            limit: history.len(),
        });
    }
    let object = history[swap_step];
    let mut swapped = history.to_vec();
    swapped[swap_step] = replacement;
    let last = *probe_steps.iter().max().unwrap_or(&0);
    if last > history.len() {
        return Err(Error::Range {
            what: "probe step",
            index: last,
            limit: history.len(),
        });
    }
    let before = model.step_logits(enc, &history[..last])?;
    let after = model.step_logits(enc, &swapped[..last])?;
    probe_steps
        .iter()
        .map(|&s| {
            if s <= swap_step {
                return Err(Error::Contract(format!(
                    "probe step {s} is not after swap step {swap_step}"
                )));
            }
            let b = crate::model::softmax(&before[s])[object];
            let a = crate::model::softmax(&after[s])[object];
            Ok(ProbeDelta {
                step: s,
                object,
                before: b,
                after: a,
                delta: (a - b) / b,
            })
        })
        .collect()
}
