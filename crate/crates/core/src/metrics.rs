//! Scanpath similarity and behavioural statistics.

use serde::{Deserialize, Serialize};

use crate::datasets::GridLayout;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaccadeCounts {
    pub search: usize,
    pub revisit: usize,
    pub refix: usize,
    pub on_target: bool,
    pub n: usize,
}

/// Classifies each saccade: onto the current object is a refixation, onto an
/// earlier object a revisit, otherwise a search.
pub fn classify_saccades(path: &[usize], target: usize) -> Result<SaccadeCounts> {
    let Some(&last) = path.last() else {
        return Err(Error::UndefinedMetric("saccade classes of an empty scanpath".into()));
    };
    let mut c = SaccadeCounts {
        on_target: last == target,
        n: path.len(),
        ..SaccadeCounts::default()
    };
    for t in 1..path.len() {
        if path[t] == path[t - 1] {
            c.refix += 1;
        } else if path[..t].contains(&path[t]) {
            c.revisit += 1;
        } else {
            c.search += 1;
        }
    }
    Ok(c)
}

/// Behavioural summary of a set of scanpaths. Saccade fractions are
/// averaged over scanpaths with at least two fixations; accuracy and length
/// include empty scanpaths.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BehaviorStats {
    pub search_pct: f64,
    pub revisit_pct: f64,
    pub refix_pct: f64,
    pub accuracy: f64,
    pub avg_length: f64,
}

impl BehaviorStats {
    pub fn fields(&self) -> [(&'static str, f64); 5] {
        [
            ("search", self.search_pct),
            ("revisit", self.revisit_pct),
            ("refix", self.refix_pct),
            ("accuracy", self.accuracy),
            ("avg_length", self.avg_length),
        ]
    }
}

/// Stats over `(scanpath, target)` pairs.
pub fn behavior_stats<'a>(paths: impl IntoIterator<Item = (&'a [usize], usize)>) -> BehaviorStats {
    let mut s = BehaviorStats::default();
    let (mut total, mut with_saccades) = (0usize, 0usize);
    for (path, target) in paths {
        total += 1;
        s.avg_length += path.len() as f64;
        let Ok(c) = classify_saccades(path, target) else {
            continue;
        };
        if c.on_target {
            s.accuracy += 1.0;
        }
        if c.n >= 2 {
            let k = (c.n - 1) as f64;
            s.search_pct += c.search as f64 / k;
            s.revisit_pct += c.revisit as f64 / k;
            s.refix_pct += c.refix as f64 / k;
            with_saccades += 1;
        }
    }
    if total > 0 {
        s.accuracy /= total as f64;
        s.avg_length /= total as f64;
    }
    if with_saccades > 0 {
        let k = with_saccades as f64;
        s.search_pct /= k;
        s.revisit_pct /= k;
        s.refix_pct /= k;
    }
    s
}

/// Mean relative deviation of the five measures from the reference.
pub fn overall_difference(model: &BehaviorStats, human: &BehaviorStats) -> Result<f64> {
    let mut total = 0.0;
    for ((name, m), (_, h)) in model.fields().into_iter().zip(human.fields()) {
        if h == 0.0 {
            return Err(Error::UndefinedMetric(format!(
                "overall ({name} is zero in the reference)"
            )));
        }
        total += (m - h).abs() / h;
    }
    Ok(total / 5.0)
}

/// Unit-cost Levenshtein distance.
pub fn fed(a: &[usize], b: &[usize]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn lcs_len(a: &[usize], b: &[usize]) -> usize {
    let mut prev = vec![0; b.len() + 1];
    let mut cur = vec![0; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `2·LCS / (|a| + |b|)`, and 1 for two empty sequences.
pub fn sequence_score(a: &[usize], b: &[usize]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    2.0 * lcs_len(a, b) as f64 / (a.len() + b.len()) as f64
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MultiMatch {
    pub vector: f64,
    pub direction: f64,
    pub length: f64,
    pub position: f64,
}

impl MultiMatch {
    pub fn average(&self) -> f64 {
        (self.vector + self.direction + self.length + self.position) / 4.0
    }

    fn add(&mut self, o: &MultiMatch, w: f64) {
        self.vector += w * o.vector;
        self.direction += w * o.direction;
        self.length += w * o.length;
        self.position += w * o.position;
    }
}

type Point = (f64, f64);

fn saccades(path: &[Point]) -> Vec<(Point, Point)> {
    path.windows(2)
        .map(|w| (w[0], (w[1].0 - w[0].0, w[1].1 - w[0].1)))
        .collect()
}

fn one_way(a: &[(Point, Point)], b: &[(Point, Point)], diag: f64) -> MultiMatch {
    let (na, nb) = (a.len(), b.len());
    let cost = |i: usize, j: usize| {
        let (u, v) = (a[i].1, b[j].1);
        (u.0 - v.0).hypot(u.1 - v.1)
    };
    // Cheapest monotone path from (0, 0) to (na-1, nb-1) through the cost grid.
    let mut acc = vec![f64::INFINITY; na * nb];
    for i in 0..na {
        for j in 0..nb {
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let mut b = f64::INFINITY;
                if i > 0 {
                    b = b.min(acc[(i - 1) * nb + j]);
                }
                if j > 0 {
                    b = b.min(acc[i * nb + j - 1]);
                }
                if i > 0 && j > 0 {
                    b = b.min(acc[(i - 1) * nb + j - 1]);
                }
                b
            };
            acc[i * nb + j] = best + cost(i, j);
        }
    }
    let mut pairs = vec![(na - 1, nb - 1)];
    let (mut i, mut j) = (na - 1, nb - 1);
    while i > 0 || j > 0 {
        let mut options = Vec::with_capacity(3);
        if i > 0 && j > 0 {
            options.push((i - 1, j - 1));
        }
        if i > 0 {
            options.push((i - 1, j));
        }
        if j > 0 {
            options.push((i, j - 1));
        }
        let (bi, bj) = options
            .into_iter()
            .min_by(|x, y| acc[x.0 * nb + x.1].total_cmp(&acc[y.0 * nb + y.1]))
            .expect("at least one predecessor");
        i = bi;
        j = bj;
        pairs.push((i, j));
    }
    let mut out = MultiMatch::default();
    for &(i, j) in &pairs {
        let (pa, u) = a[i];
        let (pb, v) = b[j];
        let la = u.0.hypot(u.1);
        let lb = v.0.hypot(v.1);
        let mut angle = (u.1.atan2(u.0) - v.1.atan2(v.0)).abs();
        if angle > std::f64::consts::PI {
            angle = 2.0 * std::f64::consts::PI - angle;
        }
        out.add(
            &MultiMatch {
                vector: 1.0 - cost(i, j) / (2.0 * diag),
                direction: 1.0 - angle / std::f64::consts::PI,
                length: 1.0 - (la - lb).abs() / diag,
                position: 1.0 - (pa.0 - pb.0).hypot(pa.1 - pb.1) / diag,
            },
            1.0 / pairs.len() as f64,
        );
    }
    out
}

/// Simplified MultiMatch over fixation points; symmetric in its arguments.
pub fn multimatch(a: &[Point], b: &[Point], screen_diag: f64) -> Result<MultiMatch> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::UndefinedMetric(
            "multimatch needs two fixations per scanpath".into(),
        ));
    }
    if !(screen_diag > 0.0) {
        return Err(Error::Contract("screen diagonal must be positive".into()));
    }
    let (sa, sb) = (saccades(a), saccades(b));
    let mut out = MultiMatch::default();
    out.add(&one_way(&sa, &sb, screen_diag), 0.5);
    out.add(&one_way(&sb, &sa, screen_diag), 0.5);
    Ok(out)
}

pub fn object_centers(path: &[usize], layout: &GridLayout) -> Vec<Point> {
    path.iter().map(|&id| layout.center(id)).collect()
}

/// Model and reference scanpaths of one trial.
#[derive(Clone, Debug)]
pub struct TrialScanpaths {
    pub trial_id: String,
    pub target_id: usize,
    pub model: Vec<Vec<usize>>,
    pub reference: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub trials: usize,
    pub ss: f64,
    pub fed: f64,
    pub multimatch: Option<MultiMatch>,
    pub overall: Option<f64>,
    pub model: BehaviorStats,
    pub reference: BehaviorStats,
}

/// Averages pairwise similarity over model×reference pairs within each
/// trial, then over trials. Trials without references are skipped.
pub fn aggregate(layout: &GridLayout, trials: &[TrialScanpaths]) -> MetricReport {
    let diag = layout.diagonal();
    let (mut ss, mut fd, mut n) = (0.0, 0.0, 0usize);
    let mut mm = MultiMatch::default();
    let mut mm_trials = 0usize;
    for t in trials {
        if t.reference.is_empty() {
            log::warn!("trial {} has no reference scanpaths; skipped", t.trial_id);
            continue;
        }
        if t.model.is_empty() {
            log::warn!("trial {} has no model scanpaths; skipped", t.trial_id);
            continue;
        }
        let pairs = (t.model.len() * t.reference.len()) as f64;
        let (mut tss, mut tfd) = (0.0, 0.0);
        let mut tmm = MultiMatch::default();
        let mut mm_pairs = 0usize;
        for a in &t.model {
            let pa = object_centers(a, layout);
            for b in &t.reference {
                tss += sequence_score(a, b);
                tfd += fed(a, b) as f64;
                if let Ok(m) = multimatch(&pa, &object_centers(b, layout), diag) {
                    tmm.add(&m, 1.0);
                    mm_pairs += 1;
                }
            }
        }
        ss += tss / pairs;
        fd += tfd / pairs;
        n += 1;
        if mm_pairs > 0 {
            mm.add(&tmm, 1.0 / mm_pairs as f64);
            mm_trials += 1;
        }
    }
    let used: Vec<&TrialScanpaths> = trials
        .iter()
        .filter(|t| !t.reference.is_empty() && !t.model.is_empty())
        .collect();
    let model = behavior_stats(
        used.iter()
            .flat_map(|t| t.model.iter().map(move |p| (p.as_slice(), t.target_id))),
    );
    let reference = behavior_stats(
        used.iter()
            .flat_map(|t| t.reference.iter().map(move |p| (p.as_slice(), t.target_id))),
    );
    let multimatch = (mm_trials > 0).then(|| {
        let mut out = MultiMatch::default();
        out.add(&mm, 1.0 / mm_trials as f64);
        out
    });
    MetricReport {
        trials: n,
        ss: if n > 0 { ss / n as f64 } else { 0.0 },
        fed: if n > 0 { fd / n as f64 } else { 0.0 },
        multimatch,
        overall: overall_difference(&model, &reference).ok(),
        model,
        reference,
    }
}

/// Histogram of grid Manhattan distances of all saccades, indexed by distance.
pub fn saccade_distance_histogram<'a>(paths: impl IntoIterator<Item = &'a [usize]>, layout: &GridLayout) -> Vec<f64> {
    let mut counts = vec![0.0; layout.rows + layout.cols - 1];
    let mut total = 0.0;
    for p in paths {
        for w in p.windows(2) {
            counts[layout.manhattan(w[0], w[1])] += 1.0;
            total += 1.0;
        }
    }
    if total > 0.0 {
        counts.iter_mut().for_each(|c| *c /= total);
    }
    counts
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len().max(q.len());
    let at = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
    0.5 * (0..n).map(|i| (at(p, i) - at(q, i)).abs()).sum::<f64>()
}
