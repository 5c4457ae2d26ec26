use std::path::Path;

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{oracle_scanpaths, Dataset, GridLayout, OraclePolicy, SubjectScanpath, Trial};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::seeding::stream;

/// Appearance parameters of one synthetic item.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Template {
    /// Hue in [0, 1).
    pub hue: f64,
    /// 0 none, 1 horizontal, 2 vertical, 3 diagonal.
    pub stripes: u8,
    /// 0 none, 1 disc, 2 square, 3 cross.
    pub glyph: u8,
}

/// `n` templates with evenly spaced hues and seeded stripe/glyph choices.
pub fn template_bank(n: usize, seed: u64) -> Vec<Template> {
    let mut rng = stream(seed, "templates", 0);
    let mut combos: Vec<(u8, u8)> = (0..4).flat_map(|s| (0..4).map(move |g| (s, g))).collect();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        if k % combos.len() == 0 {
            combos.shuffle(&mut rng);
        }
        let (stripes, glyph) = combos[k % combos.len()];
        out.push(Template {
            hue: k as f64 / n as f64,
            stripes,
            glyph,
        });
    }
    out
}

/// Appearance similarity in [0, 1]; 1 for identical templates.
pub fn similarity(a: &Template, b: &Template) -> f64 {
    let d = (a.hue - b.hue).abs();
    let circ = d.min(1.0 - d);
    0.6 * (1.0 - 2.0 * circ)
        + 0.2 * f64::from(u8::from(a.stripes == b.stripes))
        + 0.2 * f64::from(u8::from(a.glyph == b.glyph))
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

pub fn render_template(t: &Template, size: u32) -> RgbImage {
    let base = hsv(t.hue, 0.75, 0.9);
    let period = (size / 4).max(4);
    let r = f64::from(size) / 5.0;
    let mid = f64::from(size) / 2.0;
    let thick = (f64::from(size) / 8.0).max(1.0);
    RgbImage::from_fn(size, size, |x, y| {
        let band = match t.stripes {
            1 => y % period < period / 2,
            2 => x % period < period / 2,
            3 => (x + y) % period < period / 2,
            _ => false,
        };
        let mut c = base;
        if band {
            c = c.map(|v| v * 0.55);
        }
        let (dx, dy) = (f64::from(x) + 0.5 - mid, f64::from(y) + 0.5 - mid);
        let glyph = match t.glyph {
            1 => (dx * dx + dy * dy).sqrt() <= r,
            2 => dx.abs() <= r && dy.abs() <= r,
            3 => (dx.abs() <= thick / 2.0 && dy.abs() <= 1.5 * r) || (dy.abs() <= thick / 2.0 && dx.abs() <= 1.5 * r),
            _ => false,
        };
        if glyph {
            c = if t.glyph == 2 { [0.05; 3] } else { [0.97; 3] };
        }
        Rgb(c.map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8))
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub rows: usize,
    pub cols: usize,
    /// Number of items that can serve as search targets.
    pub n_items: usize,
    pub n_trials: usize,
    pub paths_per_trial: usize,
    pub cell: u32,
    pub gutter: u32,
    pub seed: u64,
    pub policy: OraclePolicy,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            rows: 6,
            cols: 6,
            n_items: 20,
            n_trials: 100,
            paths_per_trial: 8,
            cell: 24,
            gutter: 4,
            seed: 0,
            policy: OraclePolicy::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::config("data.rows", "grid needs at least one row and column"));
        }
        if self.n_items == 0 {
            return Err(Error::config("data.items", "must be positive"));
        }
        if self.n_trials == 0 {
            return Err(Error::config("data.trials", "must be positive"));
        }
        if self.cell < 4 {
            return Err(Error::config("data.cell", "cells must be at least 4 pixels"));
        }
        self.policy.validate()
    }
}

/// Renders a synthetic shelf dataset into `dir` (images plus layout, trial
/// and template files) and returns it. Each trial shows `rows·cols` distinct
/// templates drawn from a bank of `max(n_items, rows·cols)`; the target is
/// one of the first `n_items` templates.
pub fn synth_dataset(cfg: &SynthConfig, dir: &Path) -> Result<Dataset> {
    cfg.validate()?;
    let layout = GridLayout::uniform(cfg.rows, cfg.cols, cfg.cell, cfg.gutter);
    let m = layout.m();
    let bank_size = cfg.n_items.max(m);
    let templates = template_bank(bank_size, cfg.seed);
    let tiles: Vec<RgbImage> = templates.iter().map(|t| render_template(t, cfg.cell)).collect();

    let mut trials = Vec::with_capacity(cfg.n_trials);
    for t in 0..cfg.n_trials {
        let mut rng = stream(cfg.seed, "trial", t as u64);
        let mut items: Vec<usize> = rand::seq::index::sample(&mut rng, bank_size, m).into_vec();
        if !items.iter().any(|&i| i < cfg.n_items) {
            let slot = rng.gen_range(0..m);
            let fresh = (0..cfg.n_items).find(|i| !items.contains(i)).expect("n_items > 0");
            items[slot] = fresh;
        }
        let candidates: Vec<usize> = (0..m).filter(|&c| items[c] < cfg.n_items).collect();
        let target_id = candidates[rng.gen_range(0..candidates.len())] + 1;

        let mut img = RgbImage::from_pixel(layout.image_width, layout.image_height, Rgb([128, 128, 128]));
        for (c, &item) in items.iter().enumerate() {
            let b = layout.cells[c];
            image::imageops::replace(&mut img, &tiles[item], i64::from(b.left), i64::from(b.top));
        }
        let name = format!("images/trial_{t:04}.png");
        let mut bytes = Vec::new();
        img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)?;
        write_atomic(&dir.join(&name), &bytes)?;

        let mut trial = Trial {
            trial_id: format!("trial_{t:04}"),
            image: name,
            target_id,
            scanpaths: Vec::new(),
            items: Some(items),
        };
        trial.scanpaths = oracle_scanpaths(&layout, &templates, &trial, &cfg.policy, cfg.paths_per_trial, cfg.seed)?
            .into_iter()
            .enumerate()
            .map(|(k, objects)| SubjectScanpath {
                subject: format!("oracle_{k}"),
                objects,
            })
            .collect();
        trials.push(trial);
    }
    let ds = Dataset {
        root: dir.to_path_buf(),
        layout,
        trials,
        templates: Some(templates),
    };
    ds.save(dir)?;
    Ok(ds)
}
