//! Grid layouts, trials with object-level scanpaths, fixation ingestion, and
//! a synthetic shelf generator with a scripted searcher.

mod oracle;
mod synth;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::embedding::{build_trial_input, ObjectPatch, Patch, TrialInput};
use crate::error::{Error, Result};
use crate::fsutil::{read_json, write_json};
use crate::tensor::Scalar;

pub use oracle::{oracle_scanpath, oracle_scanpaths, OraclePolicy};
pub use synth::{render_template, similarity, synth_dataset, template_bank, SynthConfig, Template};

pub const LAYOUT_FILE: &str = "layout.json";
pub const TRIALS_FILE: &str = "trials.json";
pub const TEMPLATES_FILE: &str = "templates.json";

/// Pixel rectangle of one grid cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellBox {
    pub left: u32,
    pub top: u32,
    pub width: u32,
    pub height: u32,
}

impl CellBox {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= f64::from(self.left)
            && y >= f64::from(self.top)
            && x < f64::from(self.left + self.width)
            && y < f64::from(self.top + self.height)
    }

    pub fn center(&self) -> (f64, f64) {
        (
            f64::from(self.left) + f64::from(self.width) / 2.0,
            f64::from(self.top) + f64::from(self.height) / 2.0,
        )
    }

    fn overlaps(&self, o: &CellBox) -> bool {
        self.left < o.left + o.width
            && o.left < self.left + self.width
            && self.top < o.top + o.height
            && o.top < self.top + self.height
    }
}

/// A `rows × cols` shelf. Object ids run `1..=m` in row-major order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridLayout {
    pub rows: usize,
    pub cols: usize,
    pub image_width: u32,
    pub image_height: u32,
    pub cells: Vec<CellBox>,
}

impl GridLayout {
    /// Square cells of side `cell` separated (and framed) by `gutter` pixels.
    pub fn uniform(rows: usize, cols: usize, cell: u32, gutter: u32) -> Self {
        let mut cells = Vec::with_capacity(rows * cols);
        for r in 0..rows as u32 {
            for c in 0..cols as u32 {
                cells.push(CellBox {
                    left: gutter + c * (cell + gutter),
                    top: gutter + r * (cell + gutter),
                    width: cell,
                    height: cell,
                });
            }
        }
        GridLayout {
            rows,
            cols,
            image_width: gutter + cols as u32 * (cell + gutter),
            image_height: gutter + rows as u32 * (cell + gutter),
            cells,
        }
    }

    pub fn m(&self) -> usize {
        self.rows * self.cols
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Layout("grid needs at least one row and column".into()));
        }
        if self.cells.len() != self.m() {
            return Err(Error::Layout(format!(
                "{}×{} grid lists {} cells",
                self.rows,
                self.cols,
                self.cells.len()
            )));
        }
        for (i, c) in self.cells.iter().enumerate() {
            if c.width == 0 || c.height == 0 {
                return Err(Error::Layout(format!("cell {} is empty", i + 1)));
            }
            if c.left + c.width > self.image_width || c.top + c.height > self.image_height {
                return Err(Error::Layout(format!("cell {} leaves the image", i + 1)));
            }
            if let Some(j) = self.cells[..i].iter().position(|o| o.overlaps(c)) {
                return Err(Error::Layout(format!("cells {} and {} overlap", j + 1, i + 1)));
            }
        }
        Ok(())
    }

    /// (column, row) of a 1-based object id.
    pub fn position(&self, id: usize) -> (usize, usize) {
        ((id - 1) % self.cols, (id - 1) / self.cols)
    }

    pub fn id_at(&self, col: usize, row: usize) -> usize {
        row * self.cols + col + 1
    }

    pub fn contains_id(&self, id: usize) -> bool {
        (1..=self.m()).contains(&id)
    }

    pub fn cell(&self, id: usize) -> &CellBox {
        &self.cells[id - 1]
    }

    pub fn object_at(&self, x: f64, y: f64) -> Option<usize> {
        self.cells.iter().position(|c| c.contains(x, y)).map(|i| i + 1)
    }

    pub fn center(&self, id: usize) -> (f64, f64) {
        self.cell(id).center()
    }

    pub fn diagonal(&self) -> f64 {
        f64::from(self.image_width).hypot(f64::from(self.image_height))
    }

    /// Grid (cell-count) Manhattan distance between two objects.
    pub fn manhattan(&self, a: usize, b: usize) -> usize {
        let (ax, ay) = self.position(a);
        let (bx, by) = self.position(b);
        ax.abs_diff(bx) + ay.abs_diff(by)
    }
}

/// Maps pixel fixations to object ids; fixations outside every cell are
/// dropped and repeated fixations on one cell are kept.
pub fn map_fixations(fixations: &[(f64, f64)], layout: &GridLayout) -> Vec<usize> {
    fixations.iter().filter_map(|&(x, y)| layout.object_at(x, y)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectScanpath {
    pub subject: String,
    pub objects: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub trial_id: String,
    /// Image path relative to the dataset directory.
    pub image: String,
    pub target_id: usize,
    pub scanpaths: Vec<SubjectScanpath>,
    /// Template index shown in each cell (synthetic data only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub items: Option<Vec<usize>>,
}

impl Trial {
    pub fn validate(&self, layout: &GridLayout) -> Result<()> {
        if !layout.contains_id(self.target_id) {
            return Err(Error::Layout(format!(
                "trial {}: target {} is not on the {}×{} grid",
                self.trial_id, self.target_id, layout.rows, layout.cols
            )));
        }
        for s in &self.scanpaths {
            if let Some(bad) = s.objects.iter().find(|&&id| !layout.contains_id(id)) {
                return Err(Error::Layout(format!(
                    "trial {} subject {}: object {bad} is not on the grid",
                    self.trial_id, s.subject
                )));
            }
        }
        if let Some(items) = &self.items {
            if items.len() != layout.m() {
                return Err(Error::Layout(format!(
                    "trial {}: {} items for {} cells",
                    self.trial_id,
                    items.len(),
                    layout.m()
                )));
            }
            let target_item = items[self.target_id - 1];
            if items.iter().filter(|&&i| i == target_item).count() != 1 {
                return Err(Error::Layout(format!(
                    "trial {}: target item appears more than once",
                    self.trial_id
                )));
            }
        }
        Ok(())
    }
}

/// A dataset directory: one layout, its trials, and optional templates.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub layout: GridLayout,
    pub trials: Vec<Trial>,
    pub templates: Option<Vec<Template>>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let layout: GridLayout = read_json(&dir.join(LAYOUT_FILE))?;
        layout.validate()?;
        let trials: Vec<Trial> = read_json(&dir.join(TRIALS_FILE))?;
        for t in &trials {
            t.validate(&layout)?;
        }
        let tpath = dir.join(TEMPLATES_FILE);
        let templates = if tpath.exists() { Some(read_json(&tpath)?) } else { None };
        Ok(Dataset {
            root: dir.to_path_buf(),
            layout,
            trials,
            templates,
        })
    }

    /// Writes the layout, trials and templates (images are written separately).
    pub fn save(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(LAYOUT_FILE), &self.layout)?;
        write_json(&dir.join(TRIALS_FILE), &self.trials)?;
        if let Some(t) = &self.templates {
            write_json(&dir.join(TEMPLATES_FILE), t)?;
        }
        Ok(())
    }

    pub fn image(&self, trial: &Trial) -> Result<RgbImage> {
        let path = self.root.join(&trial.image);
        let img = image::open(&path).map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(&path, io),
            other => Error::Image(other),
        })?;
        let img = img.to_rgb8();
        if img.width() < self.layout.image_width || img.height() < self.layout.image_height {
            return Err(Error::Layout(format!(
                "{} is {}×{}, layout needs {}×{}",
                path.display(),
                img.width(),
                img.height(),
                self.layout.image_width,
                self.layout.image_height
            )));
        }
        Ok(img)
    }

    /// Cropped object patches of a trial plus the target patch.
    pub fn patches(&self, trial: &Trial) -> Result<(Patch, Vec<ObjectPatch>)> {
        let img = self.image(trial)?;
        let objects = (1..=self.layout.m())
            .map(|id| {
                let c = self.layout.cell(id);
                let crop = image::imageops::crop_imm(&img, c.left, c.top, c.width, c.height).to_image();
                Ok(ObjectPatch {
                    pixels: Patch::from_rgb(&crop)?,
                    grid_pos: self.layout.position(id),
                    object_id: id,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let target = objects[trial.target_id - 1].pixels.clone();
        Ok((target, objects))
    }

    pub fn trial_input<T: Scalar>(&self, trial: &Trial, patch_size: usize) -> Result<TrialInput<T>> {
        let (target, objects) = self.patches(trial)?;
        build_trial_input(
            &target,
            Some(self.layout.position(trial.target_id)),
            &objects,
            patch_size,
        )
    }

    /// Mean number of fixations over all reference scanpaths.
    pub fn mean_length(&self) -> f64 {
        let (total, n) = self
            .trials
            .iter()
            .flat_map(|t| &t.scanpaths)
            .fold((0usize, 0usize), |(s, n), p| (s + p.objects.len(), n + 1));
        if n == 0 {
            0.0
        } else {
            total as f64 / n as f64
        }
    }
}

#[derive(Debug, Deserialize)]
struct FixationRow {
    trial_id: String,
    subject: String,
    timestamp_ms: f64,
    x_px: f64,
    y_px: f64,
}

/// Image and target of a trial, supplied alongside raw fixations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialMeta {
    pub trial_id: String,
    pub image: String,
    pub target_id: usize,
}

/// Builds trials from a fixation CSV (`trial_id,subject,timestamp_ms,x_px,y_px`).
/// Fixations are ordered by timestamp within each (trial, subject).
pub fn ingest_fixations<R: std::io::Read>(csv_data: R, layout: &GridLayout, meta: &[TrialMeta]) -> Result<Vec<Trial>> {
    layout.validate()?;
    let meta: HashMap<&str, &TrialMeta> = meta.iter().map(|m| (m.trial_id.as_str(), m)).collect();
    let mut grouped: BTreeMap<String, BTreeMap<String, Vec<(f64, f64, f64)>>> = BTreeMap::new();
    let mut reader = csv::Reader::from_reader(csv_data);
    for (line, row) in reader.deserialize::<FixationRow>().enumerate() {
        let row = row.map_err(|e| Error::Ingestion(format!("row {}: {e}", line + 2)))?;
        let inside_image = (0.0..f64::from(layout.image_width)).contains(&row.x_px)
            && (0.0..f64::from(layout.image_height)).contains(&row.y_px);
        if !inside_image {
            return Err(Error::Ingestion(format!(
                "row {}: fixation ({}, {}) lies outside the image",
                line + 2,
                row.x_px,
                row.y_px
            )));
        }
        grouped
            .entry(row.trial_id)
            .or_default()
            .entry(row.subject)
            .or_default()
            .push((row.timestamp_ms, row.x_px, row.y_px));
    }
    let mut trials = Vec::with_capacity(grouped.len());
    for (trial_id, subjects) in grouped {
        let m = meta
            .get(trial_id.as_str())
            .ok_or_else(|| Error::Ingestion(format!("no image/target metadata for trial `{trial_id}`")))?;
        let scanpaths = subjects
            .into_iter()
            .map(|(subject, mut fix)| {
                fix.sort_by(|a, b| a.0.total_cmp(&b.0));
                let pts: Vec<(f64, f64)> = fix.iter().map(|f| (f.1, f.2)).collect();
                SubjectScanpath {
                    subject,
                    objects: map_fixations(&pts, layout),
                }
            })
            .collect();
        let trial = Trial {
            trial_id,
            image: m.image.clone(),
            target_id: m.target_id,
            scanpaths,
            items: None,
        };
        trial.validate(layout)?;
        trials.push(trial);
    }
    Ok(trials)
}
