//! Output heads turning decoder states into next-object logits.
//!
//! The object-attention head scores every encoder token against a decoder
//! row; slot 0 (the target token) doubles as the end-of-sequence outcome.

use crate::error::{Error, Result};
use crate::nn::{FeedForward, Graph, Init, Linear};
use crate::tensor::{Scalar, Var};

/// Index of the end-of-sequence outcome in every next-fixation distribution.
pub const EOS: usize = 0;

#[derive(Clone, Debug)]
pub struct OaBlock {
    enc: FeedForward,
    dec: FeedForward,
}

#[derive(Clone, Debug)]
pub enum Head {
    ObjectAttention {
        blocks: Vec<OaBlock>,
        h: usize,
    },
    /// Ablation: one linear map from a decoder row to `outputs` logits.
    Linear {
        lin: Linear,
        outputs: usize,
    },
}

impl Head {
    pub fn object_attention<T: Scalar>(init: &mut Init<'_, T>, n_c: usize, h: usize, k: usize) -> Result<Self> {
        let blocks = (0..n_c)
            .map(|b| {
                Ok(OaBlock {
                    enc: FeedForward::new(init, &format!("oa.{b}.enc"), h, h, k)?,
                    dec: FeedForward::new(init, &format!("oa.{b}.dec"), h, h, k)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Head::ObjectAttention { blocks, h })
    }

    pub fn linear<T: Scalar>(init: &mut Init<'_, T>, h: usize, outputs: usize) -> Result<Self> {
        Ok(Head::Linear {
            lin: Linear::new(init, "head", h, outputs)?,
            outputs,
        })
    }

    /// Per-block encoder-side features `A_e`, computed once per trial.
    pub fn prepare<T: Scalar>(&self, g: &mut Graph<'_, T>, he: Var) -> Result<Vec<Var>> {
        match self {
            Head::ObjectAttention { blocks, .. } => blocks.iter().map(|b| b.enc.forward(g, he)).collect(),
            Head::Linear { outputs, .. } => {
                let tokens = g.tape.shape(he)[0];
                if tokens != *outputs {
                    return Err(Error::Contract(format!(
                        "linear head was built for {} objects, trial has {}",
                        outputs - 1,
                        tokens - 1
                    )));
                }
                Ok(Vec::new())
            }
        }
    }

    /// Logits `[l, m+1]` for every decoder row.
    pub fn logits<T: Scalar>(&self, g: &mut Graph<'_, T>, prepared: &[Var], hd: Var) -> Result<Var> {
        match self {
            Head::ObjectAttention { blocks, h } => {
                let a_d = blocks
                    .iter()
                    .map(|b| b.dec.forward(g, hd))
                    .collect::<Result<Vec<_>>>()?;
                oa_combine(g, prepared, &a_d, *h)
            }
            Head::Linear { lin, .. } => lin.forward(g, hd),
        }
    }
}

/// Mean over blocks of `A_d · A_eᵀ / √h`, giving `[l, m+1]`.
pub fn oa_combine<T: Scalar>(g: &mut Graph<'_, T>, a_e: &[Var], a_d: &[Var], h: usize) -> Result<Var> {
    if a_e.is_empty() || a_e.len() != a_d.len() {
        return Err(Error::Contract(format!(
            "object attention needs matching block outputs, got {} and {}",
            a_e.len(),
            a_d.len()
        )));
    }
    let mut total: Option<Var> = None;
    for (&e, &d) in a_e.iter().zip(a_d) {
        let o = g.tape.matmul_t(d, e, false, true)?;
        total = Some(match total {
            None => o,
            Some(t) => g.tape.add(t, o)?,
        });
    }
    let total = total.expect("at least one block");
    Ok(g.tape.scale(total, 1.0 / ((h as f64).sqrt() * a_e.len() as f64)))
}
