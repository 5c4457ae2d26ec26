//! Pre-norm encoder and decoder stacks.

use crate::error::Result;
use crate::nn::{Attention, FeedForward, Graph, Init, Norm};
use crate::tensor::{Scalar, Var};

#[derive(Clone, Debug)]
pub struct EncoderBlock {
    ln1: Norm,
    att: Attention,
    ln2: Norm,
    ff: FeedForward,
}

impl EncoderBlock {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, h: usize, heads: usize, ff: usize) -> Result<Self> {
        Ok(EncoderBlock {
            ln1: Norm::new(init, &format!("{name}.ln1"), h)?,
            att: Attention::new(init, &format!("{name}.att"), h, heads)?,
            ln2: Norm::new(init, &format!("{name}.ln2"), h)?,
            ff: FeedForward::new(init, &format!("{name}.ff"), h, ff, h)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let n = self.ln1.forward(g, x)?;
        let a = self.att.self_attend(g, n, false)?;
        let a = g.dropout(a)?;
        let x = g.tape.add(x, a)?;
        let n = self.ln2.forward(g, x)?;
        let f = self.ff.forward(g, n)?;
        let f = g.dropout(f)?;
        g.tape.add(x, f)
    }
}

#[derive(Clone, Debug)]
pub struct DecoderBlock {
    ln1: Norm,
    self_att: Attention,
    ln2: Norm,
    cross: Attention,
    ln3: Norm,
    ff: FeedForward,
}

impl DecoderBlock {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, h: usize, heads: usize, ff: usize) -> Result<Self> {
        Ok(DecoderBlock {
            ln1: Norm::new(init, &format!("{name}.ln1"), h)?,
            self_att: Attention::new(init, &format!("{name}.self"), h, heads)?,
            ln2: Norm::new(init, &format!("{name}.ln2"), h)?,
            cross: Attention::new(init, &format!("{name}.cross"), h, heads)?,
            ln3: Norm::new(init, &format!("{name}.ln3"), h)?,
            ff: FeedForward::new(init, &format!("{name}.ff"), h, ff, h)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var, memory: (Var, Var)) -> Result<Var> {
        let n = self.ln1.forward(g, x)?;
        let a = self.self_att.self_attend(g, n, true)?;
        let a = g.dropout(a)?;
        let x = g.tape.add(x, a)?;
        let n = self.ln2.forward(g, x)?;
        let c = self.cross.attend(g, n, memory.0, memory.1, false)?;
        let c = g.dropout(c)?;
        let x = g.tape.add(x, c)?;
        let n = self.ln3.forward(g, x)?;
        let f = self.ff.forward(g, n)?;
        let f = g.dropout(f)?;
        g.tape.add(x, f)
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    blocks: Vec<EncoderBlock>,
    norm: Norm,
}

impl Encoder {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, n: usize, h: usize, heads: usize, ff: usize) -> Result<Self> {
        let blocks = (0..n)
            .map(|i| EncoderBlock::new(init, &format!("enc.{i}"), h, heads, ff))
            .collect::<Result<_>>()?;
        Ok(Encoder {
            blocks,
            norm: Norm::new(init, "enc.norm", h)?,
        })
    }

    /// `H_e` for an encoder input of shape `[(m+1), h]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, fe: Var) -> Result<Var> {
        let mut x = fe;
        for (i, b) in self.blocks.iter().enumerate() {
            x = b.forward(g, x)?;
            g.check_finite(x, "encoder", i)?;
        }
        self.norm.forward(g, x)
    }
}

#[derive(Clone, Debug)]
pub struct Decoder {
    blocks: Vec<DecoderBlock>,
    norm: Norm,
}

impl Decoder {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, n: usize, h: usize, heads: usize, ff: usize) -> Result<Self> {
        let blocks = (0..n)
            .map(|i| DecoderBlock::new(init, &format!("dec.{i}"), h, heads, ff))
            .collect::<Result<_>>()?;
        Ok(Decoder {
            blocks,
            norm: Norm::new(init, "dec.norm", h)?,
        })
    }

    /// Cross-attention keys and values of `H_e`, one pair per block.
    pub fn memory<T: Scalar>(&self, g: &mut Graph<'_, T>, he: Var) -> Result<Vec<(Var, Var)>> {
        self.blocks.iter().map(|b| b.cross.project_kv(g, he)).collect()
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, fd: Var, memory: &[(Var, Var)]) -> Result<Var> {
        let mut x = fd;
        for (i, (b, &kv)) in self.blocks.iter().zip(memory).enumerate() {
            x = b.forward(g, x, kv)?;
            g.check_finite(x, "decoder", i)?;
        }
        self.norm.forward(g, x)
    }
}

/// Fixed sinusoidal terms for fixation indices `1..=n`, each row scaled to
/// unit norm.
pub fn temporal_term(n: usize, h: usize) -> Vec<f64> {
    let rows = crate::pe::sinusoidal_rows(n + 1, h);
    let mut out = rows[h..].to_vec();
    for row in out.chunks_mut(h) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.iter_mut().for_each(|v| *v /= norm);
    }
    out
}
