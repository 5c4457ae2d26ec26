//! Object patches, the convolutional visual descriptor, and the per-trial
//! token layout fed to the encoder.

use std::collections::{HashMap, HashSet};
use std::sync::{Arc, Mutex};

use image::imageops::{self, FilterType};
use image::{ImageBuffer, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::nn::{Graph, Init, Linear};
use crate::tensor::{ParamId, Scalar, Tensor, Var, PAD_INDEX};

/// An RGB image region stored row-major, channels last, values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Patch {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 3 {
            return Err(Error::Ingestion(format!("patch must be RGB, got {channels} channels")));
        }
        if width == 0 || height == 0 {
            return Err(Error::Ingestion("empty patch".into()));
        }
        if data.len() != width * height * 3 {
            return Err(Error::Ingestion(format!(
                "patch data has {} values, expected {}",
                data.len(),
                width * height * 3
            )));
        }
        Ok(Patch { width, height, data })
    }

    pub fn from_rgb(img: &RgbImage) -> Result<Self> {
        let data = img.as_raw().iter().map(|&v| f32::from(v) / 255.0).collect();
        Patch::new(img.width() as usize, img.height() as usize, 3, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Bilinear resize to `size × size`.
    pub fn resized(&self, size: usize) -> Patch {
        if self.width == size && self.height == size {
            return self.clone();
        }
        let buf: ImageBuffer<Rgb<f32>, Vec<f32>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, self.data.clone())
                .expect("length checked at construction");
        let out = imageops::resize(&buf, size as u32, size as u32, FilterType::Triangle);
        Patch {
            width: size,
            height: size,
            data: out.into_raw(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectPatch {
    pub pixels: Patch,
    /// (column, row) within the grid.
    pub grid_pos: (usize, usize),
    pub object_id: usize,
}

/// Encoder input for one trial: resized patches for the target token and
/// the `m` grid objects, plus each token's (x, y, z) code indices.
#[derive(Clone, Debug)]
pub struct TrialInput<T: Scalar> {
    /// `[(m+1)·S·S, 3]`, token-major then row-major pixels.
    pub patches: Tensor<T>,
    pub coords: Vec<[usize; 3]>,
    pub patch_size: usize,
}

impl<T: Scalar> TrialInput<T> {
    /// Number of grid objects `m` (tokens minus the target token).
    pub fn m(&self) -> usize {
        self.coords.len() - 1
    }

    pub fn tokens(&self) -> usize {
        self.coords.len()
    }
}

/// Orders the objects row-major behind the target and resizes every patch.
/// The target token keeps its own grid coordinates (or `(0, 0)` when unknown)
/// and carries `z = 1`.
pub fn build_trial_input<T: Scalar>(
    target: &Patch,
    target_pos: Option<(usize, usize)>,
    objects: &[ObjectPatch],
    patch_size: usize,
) -> Result<TrialInput<T>> {
    if objects.is_empty() {
        return Err(Error::Layout("trial has no objects".into()));
    }
    let mut seen = HashSet::new();
    for o in objects {
        if !seen.insert(o.grid_pos) {
            return Err(Error::Layout(format!(
                "duplicate grid position (x={}, y={})",
                o.grid_pos.0, o.grid_pos.1
            )));
        }
    }
    let mut order: Vec<&ObjectPatch> = objects.iter().collect();
    order.sort_by_key(|o| (o.grid_pos.1, o.grid_pos.0));

    let (tx, ty) = target_pos.unwrap_or((0, 0));
    let mut coords = vec![[tx, ty, 1]];
    coords.extend(order.iter().map(|o| [o.grid_pos.0, o.grid_pos.1, 0]));

    let s2 = patch_size * patch_size;
    let mut data = Vec::with_capacity((objects.len() + 1) * s2 * 3);
    for p in std::iter::once(target).chain(order.iter().map(|o| &o.pixels)) {
        data.extend(p.resized(patch_size).data.iter().map(|&v| T::of(f64::from(v))));
    }
    let patches = Tensor::new(vec![(objects.len() + 1) * s2, 3], data)?;
    Ok(TrialInput {
        patches,
        coords,
        patch_size,
    })
}

#[derive(Clone, Copy, Debug)]
struct Conv {
    w: ParamId,
    b: ParamId,
    c_in: usize,
    c_out: usize,
}

/// Three 3×3 stride-2 convolutions with ReLU, global average pooling, and a
/// linear map to the descriptor width.
#[derive(Debug)]
pub struct VisualEncoder {
    convs: Vec<Conv>,
    fc: Linear,
    im2col: Mutex<HashMap<(usize, usize, usize), Arc<Vec<usize>>>>,
}

impl Clone for VisualEncoder {
    fn clone(&self) -> Self {
        VisualEncoder {
            convs: self.convs.clone(),
            fc: self.fc,
            im2col: Mutex::new(HashMap::new()),
        }
    }
}

fn conv_out(size: usize) -> usize {
    (size - 1) / 2 + 1
}

impl VisualEncoder {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, channels: &[usize], out: usize) -> Result<Self> {
        if channels.is_empty() || channels.contains(&0) {
            return Err(Error::config("model.cnn_channels", "needs positive channel counts"));
        }
        let mut convs = Vec::new();
        let mut c_in = 3;
        for (i, &c_out) in channels.iter().enumerate() {
            let fan_in = 9 * c_in;
            let bound = (6.0 / fan_in as f64).sqrt();
            convs.push(Conv {
                w: init.uniform(&format!("cnn.conv{i}.w"), &[fan_in, c_out], bound)?,
                b: init.full(&format!("cnn.conv{i}.b"), &[c_out], 0.0)?,
                c_in,
                c_out,
            });
            c_in = c_out;
        }
        let fc = Linear::new(init, "cnn.fc", c_in, out)?;
        Ok(VisualEncoder {
            convs,
            fc,
            im2col: Mutex::new(HashMap::new()),
        })
    }

    fn im2col_index(&self, n: usize, size: usize, c: usize) -> Arc<Vec<usize>> {
        let mut cache = self.im2col.lock().expect("index cache poisoned");
        cache
            .entry((n, size, c))
            .or_insert_with(|| {
                let out = conv_out(size);
                let mut idx = Vec::with_capacity(n * out * out * 9 * c);
                for img in 0..n {
                    for oy in 0..out {
                        for ox in 0..out {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let iy = (2 * oy + ky) as isize - 1;
                                    let ix = (2 * ox + kx) as isize - 1;
                                    let inside = iy >= 0 && ix >= 0 && (iy as usize) < size && (ix as usize) < size;
                                    for ch in 0..c {
                                        idx.push(if inside {
                                            ((img * size + iy as usize) * size + ix as usize) * c + ch
                                        } else {
                                            PAD_INDEX
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
                Arc::new(idx)
            })
            .clone()
    }

    /// Descriptors `[n, out]` for `n` stacked square patches of side `size`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, patches: Var, n: usize, size: usize) -> Result<Var> {
        let expected = [n * size * size, 3];
        if g.tape.shape(patches) != expected {
            return Err(Error::Dimension {
                op: "visual descriptor",
                lhs: g.tape.shape(patches).to_vec(),
                rhs: expected.to_vec(),
            });
        }
        // Centre pixel values so zero padding reads as mid-grey.
        let mut x = g.tape.add_scalar(patches, -0.5);
        let mut side = size;
        for conv in &self.convs {
            let out = conv_out(side);
            let idx = self.im2col_index(n, side, conv.c_in);
            let cols = g.tape.gather(x, idx, &[n * out * out, 9 * conv.c_in])?;
            let w = g.param(conv.w);
            let b = g.param(conv.b);
            let y = g.tape.matmul(cols, w)?;
            let y = g.tape.add_row(y, b)?;
            x = g.tape.relu(y);
            side = out;
            debug_assert_eq!(g.tape.shape(x)[1], conv.c_out);
        }
        let hw = side * side;
        let pooled = if hw == 1 {
            x
        } else {
            let mut pool = vec![T::zero(); n * n * hw];
            let inv = T::of(1.0 / hw as f64);
            for img in 0..n {
                for j in 0..hw {
                    pool[img * n * hw + img * hw + j] = inv;
                }
            }
            let pool = g.tape.constant(Tensor::new(vec![n, n * hw], pool)?);
            g.tape.matmul(pool, x)?
        };
        self.fc.forward(g, pooled)
    }
}
