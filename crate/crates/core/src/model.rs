//! The full scanpath model: visual descriptors and positional codes feed an
//! encoder over the target and grid objects; a causal decoder over the
//! fixation history drives the output head.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::{TrialInput, VisualEncoder};
use crate::error::{Error, Result};
use crate::nn::{Graph, Init};
use crate::oa::{Head, EOS};
use crate::pe::{axis_widths, PeMatrix, PositionalTables};
use crate::tensor::{read_container, write_container, ParamId, ParamStore, Scalar, Tensor, Var, CKPT_TAG};
use crate::transformer::{temporal_term, Decoder, Encoder};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeKind {
    #[default]
    Dpe,
    Sinusoidal,
    E2e,
}

impl std::str::FromStr for PeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dpe" => Ok(PeKind::Dpe),
            "sinusoidal" => Ok(PeKind::Sinusoidal),
            "e2e" => Ok(PeKind::E2e),
            other => Err(Error::config("pe_kind", format!("unknown kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OatConfig {
    pub p: usize,
    pub h: usize,
    pub n_e: usize,
    pub n_d: usize,
    pub n_c: usize,
    pub heads: usize,
    pub k: usize,
    /// Feed-forward inner width as a multiple of `h`.
    pub ff_mult: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub patch_size: usize,
    pub cnn_channels: Vec<usize>,
    pub alpha: f64,
    pub pe_kind: PeKind,
    pub use_oa: bool,
    pub rows: usize,
    pub cols: usize,
}

impl Default for OatConfig {
    fn default() -> Self {
        OatConfig {
            p: 128,
            h: 256,
            n_e: 4,
            n_d: 4,
            n_c: 2,
            heads: 4,
            k: 64,
            ff_mult: 4,
            max_len: 30,
            dropout: 0.1,
            patch_size: 64,
            cnn_channels: vec![16, 32, 64],
            alpha: 1.0,
            pe_kind: PeKind::Dpe,
            use_oa: true,
            rows: 6,
            cols: 6,
        }
    }
}

impl OatConfig {
    /// A reduced configuration that trains in minutes on one core.
    pub fn desk() -> Self {
        OatConfig {
            p: 48,
            h: 96,
            n_e: 2,
            n_d: 2,
            n_c: 2,
            heads: 4,
            k: 32,
            ff_mult: 2,
            dropout: 0.1,
            patch_size: 16,
            cnn_channels: vec![8, 16, 32],
            ..OatConfig::default()
        }
    }

    pub fn m(&self) -> usize {
        self.rows * self.cols
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("model.p", self.p),
            ("model.n_e", self.n_e),
            ("model.n_d", self.n_d),
            ("model.n_c", self.n_c),
            ("model.heads", self.heads),
            ("model.k", self.k),
            ("model.ff_mult", self.ff_mult),
            ("model.max_len", self.max_len),
            ("model.patch_size", self.patch_size),
            ("model.rows", self.rows),
            ("model.cols", self.cols),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if self.p < 3 {
            return Err(Error::config("model.p", "must be at least 3"));
        }
        if self.h != 2 * self.p {
            return Err(Error::config("model.h", format!("must equal 2p = {}", 2 * self.p)));
        }
        if self.h % self.heads != 0 {
            return Err(Error::config("model.heads", format!("must divide h = {}", self.h)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("model.dropout", "must lie in [0, 1)"));
        }
        if !self.alpha.is_finite() {
            return Err(Error::config("model.alpha", "must be finite"));
        }
        if self.cnn_channels.is_empty() || self.cnn_channels.contains(&0) {
            return Err(Error::config("model.cnn_channels", "needs positive channel counts"));
        }
        Ok(())
    }
}

/// Encoder-side state of one trial, reused across decoding steps.
#[derive(Clone, Debug)]
pub struct EncodedTrial<T: Scalar> {
    pub fe: Tensor<T>,
    pub he: Tensor<T>,
    kv: Vec<(Tensor<T>, Tensor<T>)>,
    head: Vec<Tensor<T>>,
}

impl<T: Scalar> EncodedTrial<T> {
    pub fn m(&self) -> usize {
        self.fe.shape()[0] - 1
    }
}

/// Encoder-side values recorded on a live graph.
pub struct Memory {
    kv: Vec<(Var, Var)>,
    head: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct OatModel<T: Scalar> {
    cfg: OatConfig,
    store: ParamStore<T>,
    cnn: VisualEncoder,
    pe: [ParamId; 3],
    encoder: Encoder,
    decoder: Decoder,
    bos: ParamId,
    head: Head,
}

impl<T: Scalar> OatModel<T> {
    pub fn new(cfg: OatConfig, tables: &PositionalTables, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let widths = axis_widths(cfg.p);
        let tabs = [&tables.x, &tables.y, &tables.z];
        let min_len = [cfg.cols, cfg.rows, 2];
        for (axis, (t, (w, len))) in tabs.iter().zip(widths.iter().zip(min_len)).enumerate() {
            if t.width() != *w || t.length() < len {
                return Err(Error::Dimension {
                    op: ["pe.x", "pe.y", "pe.z"][axis],
                    lhs: vec![t.length(), t.width()],
                    rhs: vec![len, *w],
                });
            }
        }
        let mut store = ParamStore::new();
        let mut init = Init::new(&mut store, seed);
        let cnn = VisualEncoder::new(&mut init, &cfg.cnn_channels, cfg.p)?;
        let trainable = cfg.pe_kind == PeKind::E2e;
        let pe = [
            init.tensor("pe.x", tables.x.table().cast(), trainable)?,
            init.tensor("pe.y", tables.y.table().cast(), trainable)?,
            init.tensor("pe.z", tables.z.table().cast(), trainable)?,
        ];
        let ff = cfg.ff_mult * cfg.h;
        let encoder = Encoder::new(&mut init, cfg.n_e, cfg.h, cfg.heads, ff)?;
        let decoder = Decoder::new(&mut init, cfg.n_d, cfg.h, cfg.heads, ff)?;
        let bos = init.uniform("bos", &[1, cfg.h], 0.1)?;
        let head = if cfg.use_oa {
            Head::object_attention(&mut init, cfg.n_c, cfg.h, cfg.k)?
        } else {
            Head::linear(&mut init, cfg.h, cfg.m() + 1)?
        };
        Ok(OatModel {
            cfg,
            store,
            cnn,
            pe,
            encoder,
            decoder,
            bos,
            head,
        })
    }

    pub fn config(&self) -> &OatConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn set_alpha(&mut self, alpha: f64) {
        self.cfg.alpha = alpha;
    }

    fn check_input(&self, input: &TrialInput<T>) -> Result<()> {
        if input.patch_size != self.cfg.patch_size {
            return Err(Error::Contract(format!(
                "patches are {}px, model expects {}px",
                input.patch_size, self.cfg.patch_size
            )));
        }
        for c in &input.coords {
            if c[0] >= self.cfg.cols {
                return Err(Error::Range {
                    what: "grid column",
                    index: c[0],
                    limit: self.cfg.cols,
                });
            }
            if c[1] >= self.cfg.rows {
                return Err(Error::Range {
                    what: "grid row",
                    index: c[1],
                    limit: self.cfg.rows,
                });
            }
            if c[2] > 1 {
                return Err(Error::Range {
                    what: "target flag",
                    index: c[2],
                    limit: 2,
                });
            }
        }
        Ok(())
    }

    /// Visual descriptors `[(m+1), p]`.
    pub fn descriptors(&self, g: &mut Graph<'_, T>, input: &TrialInput<T>) -> Result<Var> {
        self.check_input(input)?;
        let patches = g.tape.constant(input.patches.clone());
        self.cnn.forward(g, patches, input.tokens(), input.patch_size)
    }

    /// Scaled positional codes `[(m+1), p]`.
    pub fn positional_codes(&self, g: &mut Graph<'_, T>, input: &TrialInput<T>) -> Result<Var> {
        self.check_input(input)?;
        let mut parts = Vec::with_capacity(3);
        for axis in 0..3 {
            let idx: Vec<usize> = input.coords.iter().map(|c| c[axis]).collect();
            let table = g.param(self.pe[axis]);
            parts.push(g.tape.embedding_lookup(table, &idx)?);
        }
        let codes = g.tape.concat(&parts, 1)?;
        Ok(g.tape.scale(codes, self.cfg.alpha))
    }

    /// Encoder input `F_e` of shape `[(m+1), 2p]`.
    pub fn embed(&self, g: &mut Graph<'_, T>, input: &TrialInput<T>) -> Result<Var> {
        let desc = self.descriptors(g, input)?;
        let codes = self.positional_codes(g, input)?;
        g.tape.concat(&[desc, codes], 1)
    }

    pub fn encode(&self, g: &mut Graph<'_, T>, fe: Var) -> Result<Var> {
        self.encoder.forward(g, fe)
    }

    pub fn memory(&self, g: &mut Graph<'_, T>, he: Var) -> Result<Memory> {
        Ok(Memory {
            kv: self.decoder.memory(g, he)?,
            head: self.head.prepare(g, he)?,
        })
    }

    /// BOS followed by the `F_e` rows of the fixated objects plus temporal terms.
    pub fn decoder_input(&self, g: &mut Graph<'_, T>, fe: Var, history: &[usize]) -> Result<Var> {
        let m = g.tape.shape(fe)[0] - 1;
        if let Some(&bad) = history.iter().find(|&&id| id == 0 || id > m) {
            return Err(Error::Range {
                what: "object id",
                index: bad,
                limit: m + 1,
            });
        }
        let bos = g.param(self.bos);
        if history.is_empty() {
            return Ok(bos);
        }
        let rows = g.tape.embedding_lookup(fe, history)?;
        let h = self.cfg.h;
        let t = temporal_term(history.len(), h);
        let t = g.tape.constant(Tensor::from_f64(&[history.len(), h], &t)?);
        let rows = g.tape.add(rows, t)?;
        g.tape.concat(&[bos, rows], 0)
    }

    pub fn decode(&self, g: &mut Graph<'_, T>, fd: Var, memory: &Memory) -> Result<Var> {
        self.decoder.forward(g, fd, &memory.kv)
    }

    /// Next-object logits `[l, m+1]` for decoder states `hd`.
    pub fn logits(&self, g: &mut Graph<'_, T>, memory: &Memory, hd: Var) -> Result<Var> {
        self.head.logits(g, &memory.head, hd)
    }

    /// Teacher-forced logits for a full sequence: row `t` predicts element
    /// `t` of `seq`, the last row predicts the end token.
    pub fn sequence_logits(&self, g: &mut Graph<'_, T>, fe: Var, memory: &Memory, seq: &[usize]) -> Result<Var> {
        let fd = self.decoder_input(g, fe, seq)?;
        let hd = self.decode(g, fd, memory)?;
        self.logits(g, memory, hd)
    }

    /// Mean cross-entropy over the `n+1` steps of a sequence.
    pub fn sequence_loss_on(&self, g: &mut Graph<'_, T>, fe: Var, memory: &Memory, seq: &[usize]) -> Result<Var> {
        let logits = self.sequence_logits(g, fe, memory, seq)?;
        let mut targets = seq.to_vec();
        targets.push(EOS);
        g.tape.cross_entropy(logits, &targets)
    }

    /// Records the losses of several sequences of one trial on `g`, sharing
    /// the encoder pass.
    pub fn trial_losses(&self, g: &mut Graph<'_, T>, input: &TrialInput<T>, seqs: &[&[usize]]) -> Result<Vec<Var>> {
        let fe = self.embed(g, input)?;
        let he = self.encode(g, fe)?;
        let memory = self.memory(g, he)?;
        seqs.iter().map(|s| self.sequence_loss_on(g, fe, &memory, s)).collect()
    }

    /// Evaluation-mode loss of one sequence.
    pub fn sequence_loss(&self, input: &TrialInput<T>, seq: &[usize]) -> Result<f64> {
        let mut g = Graph::eval(&self.store);
        let loss = self.trial_losses(&mut g, input, &[seq])?[0];
        let v = g.value(loss).data()[0].as_f64();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Training("non-finite sequence loss".into()))
        }
    }

    pub fn encode_trial(&self, input: &TrialInput<T>) -> Result<EncodedTrial<T>> {
        let mut g = Graph::eval(&self.store);
        let fe = self.embed(&mut g, input)?;
        let he = self.encode(&mut g, fe)?;
        let memory = self.memory(&mut g, he)?;
        Ok(EncodedTrial {
            fe: g.value(fe).clone(),
            he: g.value(he).clone(),
            kv: memory
                .kv
                .iter()
                .map(|&(k, v)| (g.value(k).clone(), g.value(v).clone()))
                .collect(),
            head: memory.head.iter().map(|&a| g.value(a).clone()).collect(),
        })
    }

    /// Decoder states `H_d` for a history against an encoded trial.
    pub fn decoder_states(&self, enc: &EncodedTrial<T>, history: &[usize]) -> Result<Tensor<T>> {
        let mut g = Graph::eval(&self.store);
        let (fe, memory) = Self::restore(&mut g, enc);
        let fd = self.decoder_input(&mut g, fe, history)?;
        let hd = self.decode(&mut g, fd, &memory)?;
        Ok(g.value(hd).clone())
    }

    fn restore(g: &mut Graph<'_, T>, enc: &EncodedTrial<T>) -> (Var, Memory) {
        let fe = g.tape.constant(enc.fe.clone());
        let kv = enc
            .kv
            .iter()
            .map(|(k, v)| (g.tape.constant(k.clone()), g.tape.constant(v.clone())))
            .collect();
        let head = enc.head.iter().map(|a| g.tape.constant(a.clone())).collect();
        (fe, Memory { kv, head })
    }

    /// Probabilities over `{EOS, 1..m}` after the given history.
    pub fn next_distribution(&self, enc: &EncodedTrial<T>, history: &[usize]) -> Result<Vec<f64>> {
        Ok(self
            .step_logits(enc, history)?
            .pop()
            .map(|row| softmax(&row))
            .unwrap_or_default())
    }

    /// Logits at every decoder step for a history (row `t` follows `t` fixations).
    pub fn step_logits(&self, enc: &EncodedTrial<T>, history: &[usize]) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::eval(&self.store);
        let (fe, memory) = Self::restore(&mut g, enc);
        let logits = self.sequence_logits(&mut g, fe, &memory, history)?;
        let v = g.value(logits);
        let cols = v.shape()[1];
        Ok(v.data()
            .chunks(cols)
            .map(|r| r.iter().map(|x| x.as_f64()).collect())
            .collect())
    }

    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<()> {
        let meta = serde_json::json!({ "model": self.cfg, "extra": extra });
        let tensors: Vec<(&str, &Tensor<T>)> = self
            .store
            .iter()
            .map(|(_, p)| (p.name.as_str(), p.value.as_ref()))
            .collect();
        write_container(path, CKPT_TAG, &meta, &tensors)
    }

    /// Loads a checkpoint; returns the model and the `extra` metadata.
    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        let c = read_container::<T>(path, CKPT_TAG)?;
        let cfg: OatConfig = serde_json::from_value(
            c.meta
                .get("model")
                .cloned()
                .ok_or_else(|| Error::Format("manifest lacks model config".into()))?,
        )?;
        let table = |name: &str| -> Result<PeMatrix> {
            let t = c
                .get(name)
                .ok_or_else(|| Error::Format(format!("missing tensor `{name}`")))?;
            PeMatrix::new(t.cast())
        };
        let tables = PositionalTables {
            x: table("pe.x")?,
            y: table("pe.y")?,
            z: table("pe.z")?,
        };
        let mut model = OatModel::new(cfg, &tables, 0)?;
        if c.tensors.len() != model.store.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} tensors, model expects {}",
                c.tensors.len(),
                model.store.len()
            )));
        }
        for (name, t) in &c.tensors {
            model.store.assign(name, t.clone())?;
        }
        let extra = c.meta.get("extra").cloned().unwrap_or(serde_json::Value::Null);
        Ok((model, extra))
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}
