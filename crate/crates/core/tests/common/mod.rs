#![allow(dead_code)]

use oat_core::tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Central finite differences of a scalar function of several inputs,
/// evaluated by rebuilding the computation from scratch for each probe.
pub fn numeric_grads(inputs: &[Tensor<f64>], eps: f64, f: &dyn Fn(&[Tensor<f64>]) -> f64) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for (k, x) in inputs.iter().enumerate() {
        let mut g = vec![0.0; x.numel()];
        for i in 0..x.numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += eps;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= eps;
            g[i] = (f(&plus) - f(&minus)) / (2.0 * eps);
        }
        out.push(g);
    }
    out
}

/// Relative error ‖analytic − numeric‖ / max(1, ‖numeric‖), worst over inputs.
pub fn check_grads(inputs: &[Tensor<f64>], build: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = build(&mut tape, &vars);
    tape.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| {
            tape.grad(*v)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();
    let eval = |xs: &[Tensor<f64>]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        let loss = build(&mut tape, &vars);
        tape.value(loss).data()[0]
    };
    let numeric = numeric_grads(inputs, 1e-5, &eval);
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| {
            let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = n.iter().map(|y| y * y).sum::<f64>().sqrt();
            diff / norm.max(1.0)
        })
        .fold(0.0, f64::max)
}

/// Weighted sum `Σ out ⊙ w` turning any op output into a scalar loss.
pub fn weighted_sum(tape: &mut Tape<f64>, out: Var, seed: u64) -> Var {
    let mut r = rng(seed);
    let w = random_tensor(&mut r, tape.shape(out));
    let wv = tape.constant(w);
    let prod = tape.mul(out, wv).unwrap();
    tape.sum(prod)
}

/// Plain recursive edit distance, exponential but exact.
pub fn levenshtein_oracle(a: &[usize], b: &[usize]) -> usize {
    fn go(a: &[usize], b: &[usize], memo: &mut std::collections::HashMap<(usize, usize), usize>) -> usize {
        if a.is_empty() {
            return b.len();
        }
        if b.is_empty() {
            return a.len();
        }
        if let Some(&v) = memo.get(&(a.len(), b.len())) {
            return v;
        }
        let sub = go(&a[1..], &b[1..], memo) + usize::from(a[0] != b[0]);
        let del = go(&a[1..], b, memo) + 1;
        let ins = go(a, &b[1..], memo) + 1;
        let v = sub.min(del).min(ins);
        memo.insert((a.len(), b.len()), v);
        v
    }
    go(a, b, &mut Default::default())
}

/// Longest common subsequence by enumerating subsequences of the shorter input.
pub fn lcs_oracle(a: &[usize], b: &[usize]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let is_subseq = |s: &[usize]| {
        let mut it = long.iter();
        s.iter().all(|x| it.any(|y| y == x))
    };
    let mut best = 0;
    for mask in 0u32..(1 << short.len()) {
        let k = mask.count_ones() as usize;
        if k <= best {
            continue;
        }
        let s: Vec<usize> = (0..short.len())
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| short[i])
            .collect();
        if is_subseq(&s) {
            best = k;
        }
    }
    best
}

pub mod model {
    use oat_core::embedding::TrialInput;
    use oat_core::model::{OatConfig, OatModel, PeKind};
    use oat_core::nn::Graph;
    use oat_core::pe::PositionalTables;
    use oat_core::tensor::{Grads, Tensor};
    use rand::Rng;

    pub fn tiny_config(rows: usize, cols: usize) -> OatConfig {
        OatConfig {
            p: 6,
            h: 12,
            n_e: 2,
            n_d: 2,
            n_c: 2,
            heads: 2,
            k: 4,
            ff_mult: 1,
            dropout: 0.0,
            patch_size: 8,
            cnn_channels: vec![2, 3, 2],
            pe_kind: PeKind::E2e,
            rows,
            cols,
            ..OatConfig::default()
        }
    }

    pub fn tiny_model(cfg: OatConfig, seed: u64) -> OatModel<f64> {
        let len = cfg.rows.max(cfg.cols).max(2);
        let tables = PositionalTables::e2e(cfg.p, len, seed + 100);
        OatModel::new(cfg, &tables, seed).unwrap()
    }

    /// Random patches on a `rows × cols` grid with the target at `target`
    /// (a 1-based object id).
    pub fn random_input(rows: usize, cols: usize, size: usize, target: usize, seed: u64) -> TrialInput<f64> {
        let mut r = super::rng(seed);
        let m = rows * cols;
        let s2 = size * size;
        let mut objects: Vec<f64> = (0..m * s2 * 3).map(|_| r.gen_range(0.0..1.0)).collect();
        let t = objects[(target - 1) * s2 * 3..target * s2 * 3].to_vec();
        let mut data = t;
        data.append(&mut objects);
        let mut coords = vec![[(target - 1) % cols, (target - 1) / cols, 1]];
        coords.extend((0..m).map(|i| [i % cols, i / cols, 0]));
        TrialInput {
            patches: Tensor::new(vec![(m + 1) * s2, 3], data).unwrap(),
            coords,
            patch_size: size,
        }
    }

    /// Moves every trainable parameter off the exact-zero initialisation so
    /// finite differences never straddle a ReLU kink at zero.
    pub fn jitter(model: &mut OatModel<f64>, seed: u64) {
        let mut r = super::rng(seed);
        let ids: Vec<_> = model
            .store()
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(id, _)| id)
            .collect();
        for id in ids {
            for v in model.store_mut().value_mut(id).data_mut() {
                *v += r.gen_range(0.02..0.08);
            }
        }
    }

    /// Worst per-parameter relative error between backprop and central
    /// differences of the sequence loss, with the offending parameter name.
    pub fn fd_error(model: &mut OatModel<f64>, input: &TrialInput<f64>, seq: &[usize]) -> (f64, String) {
        let mut grads = Grads::for_store(model.store());
        {
            let mut g = Graph::eval(model.store());
            let loss = model.trial_losses(&mut g, input, &[seq]).unwrap()[0];
            g.tape.backward(loss).unwrap();
            g.tape.accumulate_param_grads(&mut grads);
        }
        let eps = 1e-6;
        let ids: Vec<_> = model
            .store()
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(id, _)| id)
            .collect();
        let mut worst = (0.0, String::new());
        for id in ids {
            let n = model.store().value(id).numel();
            let mut numeric = vec![0.0; n];
            for i in 0..n {
                let orig = model.store().value(id).data()[i];
                model.store_mut().value_mut(id).data_mut()[i] = orig + eps;
                let plus = model.sequence_loss(input, seq).unwrap();
                model.store_mut().value_mut(id).data_mut()[i] = orig - eps;
                let minus = model.sequence_loss(input, seq).unwrap();
                model.store_mut().value_mut(id).data_mut()[i] = orig;
                numeric[i] = (plus - minus) / (2.0 * eps);
            }
            let analytic = grads.get(id).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; n]);
            let diff: f64 = analytic
                .iter()
                .zip(&numeric)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let norm: f64 = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
            let err = diff / norm.max(1.0);
            if err > worst.0 {
                worst = (err, model.store().get(id).name.clone());
            }
        }
        worst
    }
}
