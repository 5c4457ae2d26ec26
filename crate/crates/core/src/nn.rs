//! Layer building blocks shared by the model components.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Scalar, Tape, Tensor, Var};

/// A tape bound to a parameter store, plus the dropout state of one pass.
pub struct Graph<'s, T: Scalar> {
    pub tape: Tape<T>,
    store: &'s ParamStore<T>,
    dropout: f64,
    rng: Option<ChaCha8Rng>,
}

impl<'s, T: Scalar> Graph<'s, T> {
    pub fn eval(store: &'s ParamStore<T>) -> Self {
        Graph {
            tape: Tape::new(),
            store,
            dropout: 0.0,
            rng: None,
        }
    }

    pub fn train(store: &'s ParamStore<T>, dropout: f64, seed: u64) -> Self {
        Graph {
            tape: Tape::new(),
            store,
            dropout,
            rng: Some(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.tape.param(self.store, id)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.tape.value(v)
    }

    /// Inverted dropout; identity in evaluation mode.
    pub fn dropout(&mut self, x: Var) -> Result<Var> {
        let rate = self.dropout;
        let Some(rng) = self.rng.as_mut().filter(|_| rate > 0.0) else {
            return Ok(x);
        };
        let keep = T::of(1.0 / (1.0 - rate));
        let shape = self.tape.shape(x).to_vec();
        let n: usize = shape.iter().product();
        let mask = (0..n)
            .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let mask = self.tape.constant(Tensor::new(shape, mask)?);
        self.tape.mul(x, mask)
    }

    pub(crate) fn check_finite(&self, v: Var, what: &str, block: usize) -> Result<()> {
        if self.tape.value(v).is_finite() {
            Ok(())
        } else {
            Err(Error::Numeric(format!("non-finite activation in {what} block {block}")))
        }
    }
}

/// Registers freshly initialised parameters in a store.
pub struct Init<'a, T: Scalar> {
    pub store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<'a, T: Scalar> Init<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, seed: u64) -> Self {
        Init {
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::of(self.rng.gen_range(-bound..=bound))).collect();
        self.store.insert(name, Tensor::new(shape.to_vec(), data)?, true)
    }

    pub fn xavier(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<ParamId> {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.uniform(name, &[fan_in, fan_out], bound)
    }

    pub fn full(&mut self, name: &str, shape: &[usize], value: f64) -> Result<ParamId> {
        self.store.insert(name, Tensor::full(shape, T::of(value)), true)
    }

    pub fn tensor(&mut self, name: &str, value: Tensor<T>, trainable: bool) -> Result<ParamId> {
        self.store.insert(name, value, trainable)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        Ok(Linear {
            w: init.xavier(&format!("{name}.w"), d_in, d_out)?,
            b: init.full(&format!("{name}.b"), &[d_out], 0.0)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.tape.matmul(x, w)?;
        g.tape.add_row(y, b)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Norm {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, width: usize) -> Result<Self> {
        Ok(Norm {
            gamma: init.full(&format!("{name}.g"), &[width], 1.0)?,
            beta: init.full(&format!("{name}.b"), &[width], 0.0)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.tape.layer_norm(x, gamma, beta, 1)
    }
}

/// Two linear maps with a ReLU in between.
#[derive(Clone, Copy, Debug)]
pub struct FeedForward {
    pub l1: Linear,
    pub l2: Linear,
}

impl FeedForward {
    pub fn new<T: Scalar>(
        init: &mut Init<'_, T>,
        name: &str,
        d_in: usize,
        d_hidden: usize,
        d_out: usize,
    ) -> Result<Self> {
        Ok(FeedForward {
            l1: Linear::new(init, &format!("{name}.l1"), d_in, d_hidden)?,
            l2: Linear::new(init, &format!("{name}.l2"), d_hidden, d_out)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let h = self.l1.forward(g, x)?;
        let h = g.tape.relu(h);
        self.l2.forward(g, h)
    }
}

/// Multi-head scaled dot-product attention.
#[derive(Clone, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub width: usize,
}

impl Attention {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, width: usize, heads: usize) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::config(
                "model.heads",
                format!("{heads} heads do not divide width {width}"),
            ));
        }
        Ok(Attention {
            q: Linear::new(init, &format!("{name}.q"), width, width)?,
            k: Linear::new(init, &format!("{name}.k"), width, width)?,
            v: Linear::new(init, &format!("{name}.v"), width, width)?,
            o: Linear::new(init, &format!("{name}.o"), width, width)?,
            heads,
            width,
        })
    }

    /// Keys and values for a memory sequence.
    pub fn project_kv<T: Scalar>(&self, g: &mut Graph<'_, T>, mem: Var) -> Result<(Var, Var)> {
        Ok((self.k.forward(g, mem)?, self.v.forward(g, mem)?))
    }

    /// Attends queries from `x` over precomputed keys and values. With
    /// `causal`, query row `t` only sees key rows `0..=t`.
    pub fn attend<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var, keys: Var, values: Var, causal: bool) -> Result<Var> {
        let q = self.q.forward(g, x)?;
        let lq = g.tape.shape(q)[0];
        let lk = g.tape.shape(keys)[0];
        let dh = self.width / self.heads;
        let mask = if causal {
            if lq != lk {
                return Err(Error::Dimension {
                    op: "causal attention",
                    lhs: vec![lq],
                    rhs: vec![lk],
                });
            }
            let mut m = vec![T::zero(); lq * lk];
            for i in 0..lq {
                for j in i + 1..lk {
                    m[i * lk + j] = T::neg_infinity();
                }
            }
            Some(g.tape.constant(Tensor::new(vec![lq, lk], m)?))
        } else {
            None
        };
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.tape.slice(q, 1, h * dh, dh)?;
            let kh = g.tape.slice(keys, 1, h * dh, dh)?;
            let vh = g.tape.slice(values, 1, h * dh, dh)?;
            let s = g.tape.matmul_t(qh, kh, false, true)?;
            let mut s = g.tape.scale(s, scale);
            if let Some(mask) = mask {
                s = g.tape.add(s, mask)?;
            }
            let a = g.tape.softmax(s, 1)?;
            outs.push(g.tape.matmul(a, vh)?);
        }
        let cat = if outs.len() == 1 {
            outs[0]
        } else {
            g.tape.concat(&outs, 1)?
        };
        self.o.forward(g, cat)
    }

    pub fn self_attend<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var, causal: bool) -> Result<Var> {
        let (k, v) = self.project_kv(g, x)?;
        self.attend(g, x, k, v, causal)
    }
}
