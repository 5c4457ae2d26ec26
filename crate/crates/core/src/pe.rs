//! One-dimensional positional tables and their 3-axis composition.
//!
//! The distance-based table is fitted so that the cosine similarity between
//! rows `i` and `j` follows `exp(-½((|i-j| - μ)/σ)²)` while every row keeps unit
//! norm. Sinusoidal and randomly initialised (end-to-end) tables are provided
//! for comparison.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{read_container, write_container, Tape, Tensor, Var, PE_TAG};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PeConfig {
    /// Number of positions (rows) in the table.
    pub length: usize,
    pub d_axis: usize,
    pub sigma: f64,
    pub mean: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub lr: f64,
    pub iters: usize,
}

impl Default for PeConfig {
    fn default() -> Self {
        PeConfig {
            length: 11,
            d_axis: 42,
            sigma: 2.0,
            mean: 0.0,
            lambda: 1.0,
            alpha: 1.0,
            lr: 0.01,
            iters: 10_000,
        }
    }
}

impl PeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.length < 2 {
            return Err(Error::config("pe.length", "must be at least 2"));
        }
        if self.d_axis == 0 {
            return Err(Error::config("pe.d_axis", "must be positive"));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::config("pe.sigma", "must be positive"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::config("pe.lambda", "must be non-negative"));
        }
        if self.iters == 0 {
            return Err(Error::config("pe.iters", "must be at least 1"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config("pe.lr", "must be positive"));
        }
        if !self.alpha.is_finite() {
            return Err(Error::config("pe.alpha", "must be finite"));
        }
        Ok(())
    }
}

/// Target similarity between positions `i` and `j`.
pub fn gaussian_target(i: usize, j: usize, sigma: f64) -> f64 {
    gaussian_target_with_mean(i, j, sigma, 0.0)
}

pub fn gaussian_target_with_mean(i: usize, j: usize, sigma: f64, mean: f64) -> f64 {
    let d = (i as f64 - j as f64).abs();
    (-0.5 * ((d - mean) / sigma).powi(2)).exp()
}

/// Splits an embedding width `p` into (x, y, z) widths that sum to `p`.
pub fn axis_widths(p: usize) -> [usize; 3] {
    let base = p / 3;
    let rem = p % 3;
    [base + usize::from(rem > 0), base + usize::from(rem > 1), base]
}

/// A learned or fixed `length × d_axis` table, one row per position.
#[derive(Clone, Debug, PartialEq)]
pub struct PeMatrix {
    table: Tensor<f64>,
}

impl PeMatrix {
    pub fn new(table: Tensor<f64>) -> Result<Self> {
        table.dims2()?;
        if table.rank() != 2 {
            return Err(Error::Contract("positional table must be a matrix".into()));
        }
        Ok(PeMatrix { table })
    }

    pub fn table(&self) -> &Tensor<f64> {
        &self.table
    }

    pub fn length(&self) -> usize {
        self.table.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.table.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.table.row(i)
    }

    pub fn row_norms(&self) -> Vec<f64> {
        (0..self.length()).map(|i| norm(self.row(i))).collect()
    }

    pub fn cosine(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.row(i), self.row(j));
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        dot / (norm(a) * norm(b))
    }

    pub fn cosine_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.length();
        (0..n).map(|i| (0..n).map(|j| self.cosine(i, j)).collect()).collect()
    }

    /// Root-mean-square gap between achieved cosines and the Gaussian target
    /// over all pairs `i < j`.
    pub fn target_rmse(&self, sigma: f64) -> f64 {
        let n = self.length();
        let mut total = 0.0;
        let mut count = 0usize;
        for i in 0..n {
            for j in i + 1..n {
                total += (self.cosine(i, j) - gaussian_target(i, j, sigma)).powi(2);
                count += 1;
            }
        }
        (total / count as f64).sqrt()
    }

    /// Smallest offset `k` with `cos(P_0, P_k) < 0.5`, if any.
    pub fn half_width(&self) -> Option<usize> {
        (1..self.length()).find(|&k| self.cosine(0, k) < 0.5)
    }

    pub fn save(&self, path: &Path, cfg: Option<&PeConfig>, seed: Option<u64>) -> Result<()> {
        let meta = serde_json::json!({ "config": cfg, "seed": seed });
        write_container(path, PE_TAG, &meta, &[("pe", &self.table)])
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = read_container::<f64>(path, PE_TAG)?;
        let t = c
            .get("pe")
            .cloned()
            .ok_or_else(|| Error::Format("missing tensor `pe`".into()))?;
        PeMatrix::new(t)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Records the fitting objective for table `p` on `tape`:
/// mean squared gap between pairwise cosines and the Gaussian target over
/// `i < j`, plus `λ Σ_i (‖P_i‖ − 1)²`.
pub fn pe_loss_on_tape(tape: &mut Tape<f64>, p: Var, cfg: &PeConfig) -> Result<Var> {
    let shape = tape.shape(p).to_vec();
    if shape != [cfg.length, cfg.d_axis] {
        return Err(Error::Dimension {
            op: "pe_loss",
            lhs: shape,
            rhs: vec![cfg.length, cfg.d_axis],
        });
    }
    let l = cfg.length;
    let mut target = vec![0.0; l * l];
    let mut upper = vec![0.0; l * l];
    for i in 0..l {
        for j in i + 1..l {
            target[i * l + j] = gaussian_target_with_mean(i, j, cfg.sigma, cfg.mean);
            upper[i * l + j] = 1.0;
        }
    }
    let target = tape.constant(Tensor::new(vec![l, l], target)?);
    let upper = tape.constant(Tensor::new(vec![l, l], upper)?);

    let unit = tape.normalize_rows(p)?;
    let cos = tape.matmul_t(unit, unit, false, true)?;
    let gap = tape.sub(cos, target)?;
    let sq = tape.mul(gap, gap)?;
    let masked = tape.mul(sq, upper)?;
    let fit = tape.sum(masked);
    let fit = tape.scale(fit, 2.0 / (l * (l - 1)) as f64);

    let norms = tape.row_norms(p)?;
    let dev = tape.add_scalar(norms, -1.0);
    let dev_sq = tape.mul(dev, dev)?;
    let reg = tape.sum(dev_sq);
    let reg = tape.scale(reg, cfg.lambda);
    tape.add(fit, reg)
}

pub fn pe_loss(p: &PeMatrix, cfg: &PeConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let v = tape.constant(p.table.clone());
    let loss = pe_loss_on_tape(&mut tape, v, cfg)?;
    Ok(tape.value(loss).data()[0])
}

fn uniform_table(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let data = (0..rows * cols).map(|_| rng.gen_range(-0.1..0.1)).collect();
    Tensor::new(vec![rows, cols], data).expect("consistent shape")
}

/// Fits a distance-based table by plain gradient descent from a seeded,
/// row-normalised uniform initialisation.
pub fn train_pe(cfg: &PeConfig, seed: u64) -> Result<PeMatrix> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = uniform_table(cfg.length, cfg.d_axis, &mut rng);
    for r in 0..cfg.length {
        let row = &mut table.data_mut()[r * cfg.d_axis..(r + 1) * cfg.d_axis];
        let n = norm(row);
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    let mut tape = Tape::new();
    for iter in 0..cfg.iters {
        tape.reset();
        let p = tape.leaf(table.clone(), true);
        let loss = pe_loss_on_tape(&mut tape, p, cfg)?;
        let value = tape.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "positional-encoding loss became non-finite at iteration {iter}"
            )));
        }
        tape.backward(loss)?;
        let grad = tape.grad(p).expect("leaf requires grad");
        for (w, g) in table.data_mut().iter_mut().zip(grad) {
            *w -= cfg.lr * g;
        }
    }
    PeMatrix::new(table)
}

/// Standard sine/cosine table: row `i` interleaves `sin(i ω_k)` and
/// `cos(i ω_k)` with `ω_k = 10000^(-2k/d)`.
pub fn sinusoidal_pe(length: usize, d_axis: usize) -> Result<PeMatrix> {
    if d_axis == 0 || d_axis % 2 != 0 {
        return Err(Error::Contract(format!(
            "sinusoidal encoding needs an even width, got {d_axis}"
        )));
    }
    let mut data = Vec::with_capacity(length * d_axis);
    for i in 0..length {
        for k in 0..d_axis / 2 {
            let omega = 10000f64.powf(-((2 * k) as f64) / d_axis as f64);
            let angle = i as f64 * omega;
            data.push(angle.sin());
            data.push(angle.cos());
        }
    }
    PeMatrix::new(Tensor::new(vec![length, d_axis], data)?)
}

/// Sinusoidal rows of width `d` for positions `0..n` (any width; an odd
/// trailing column gets the sine term).
pub fn sinusoidal_rows(n: usize, d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * d);
    for t in 0..n {
        for c in 0..d {
            let k = c / 2;
            let omega = 10000f64.powf(-((2 * k) as f64) / d as f64);
            let angle = t as f64 * omega;
            out.push(if c % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    out
}

/// Randomly initialised table meant to be trained with the model.
pub fn e2e_pe(length: usize, d_axis: usize, seed: u64) -> PeMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PeMatrix {
        table: uniform_table(length, d_axis, &mut rng),
    }
}

/// The x, y and target-flag tables used to build positional codes.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionalTables {
    pub x: PeMatrix,
    pub y: PeMatrix,
    pub z: PeMatrix,
}

impl PositionalTables {
    pub fn width(&self) -> usize {
        self.x.width() + self.y.width() + self.z.width()
    }

    /// `α · (P_x(x) ⊕ P_y(y) ⊕ P_z(z))` for a cell of a `rows × cols` grid.
    pub fn encode(&self, x: usize, y: usize, z: usize, alpha: f64, rows: usize, cols: usize) -> Result<Vec<f64>> {
        if x >= cols || x >= self.x.length() {
            return Err(Error::Range {
                what: "grid column",
                index: x,
                limit: cols.min(self.x.length()),
            });
        }
        if y >= rows || y >= self.y.length() {
            return Err(Error::Range {
                what: "grid row",
                index: y,
                limit: rows.min(self.y.length()),
            });
        }
        if z > 1 || z >= self.z.length() {
            return Err(Error::Range {
                what: "target flag",
                index: z,
                limit: 2,
            });
        }
        Ok(self
            .x
            .row(x)
            .iter()
            .chain(self.y.row(y))
            .chain(self.z.row(z))
            .map(|v| alpha * v)
            .collect())
    }

    /// Distance-based tables for an embedding width `p`: x and y get
    /// `length` rows, the target flag gets two.
    pub fn train_dpe(p: usize, cfg: &PeConfig, seed: u64) -> Result<Self> {
        let [wx, wy, wz] = axis_widths(p);
        let x = train_pe(&PeConfig { d_axis: wx, ..*cfg }, seed)?;
        let y = train_pe(&PeConfig { d_axis: wy, ..*cfg }, seed.wrapping_add(1))?;
        let z = train_pe(
            &PeConfig {
                d_axis: wz,
                length: 2,
                ..*cfg
            },
            seed.wrapping_add(2),
        )?;
        Ok(PositionalTables { x, y, z })
    }

    pub fn sinusoidal(p: usize, length: usize) -> Result<Self> {
        let [wx, wy, wz] = axis_widths(p);
        let make = |len: usize, w: usize| -> Result<PeMatrix> {
            // Odd widths get one extra column that is dropped afterwards.
            let even = w + w % 2;
            let full = sinusoidal_pe(len, even)?;
            let data: Vec<f64> = (0..len).flat_map(|i| full.row(i)[..w].to_vec()).collect();
            PeMatrix::new(Tensor::new(vec![len, w], data)?)
        };
        Ok(PositionalTables {
            x: make(length, wx)?,
            y: make(length, wy)?,
            z: make(2, wz)?,
        })
    }

    pub fn e2e(p: usize, length: usize, seed: u64) -> Self {
        let [wx, wy, wz] = axis_widths(p);
        PositionalTables {
            x: e2e_pe(length, wx, seed),
            y: e2e_pe(length, wy, seed.wrapping_add(1)),
            z: e2e_pe(2, wz, seed.wrapping_add(2)),
        }
    }

    /// Writes `pe_x.pe`, `pe_y.pe` and `pe_z.pe` into `dir`.
    pub fn save_dir(&self, dir: &Path, cfg: Option<&PeConfig>, seed: Option<u64>) -> Result<()> {
        self.x.save(&dir.join("pe_x.pe"), cfg, seed)?;
        self.y.save(&dir.join("pe_y.pe"), cfg, seed)?;
        self.z.save(&dir.join("pe_z.pe"), cfg, seed)
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        Ok(PositionalTables {
            x: PeMatrix::load(&dir.join("pe_x.pe"))?,
            y: PeMatrix::load(&dir.join("pe_y.pe"))?,
            z: PeMatrix::load(&dir.join("pe_z.pe"))?,
        })
    }
}
