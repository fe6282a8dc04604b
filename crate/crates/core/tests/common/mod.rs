#![allow(dead_code)]

use mivat::autograd::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard normal tensor with entries kept away from zero, so kinks at the
/// origin stay out of finite-difference range.
pub fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.sample(StandardNormal);
            if v.abs() < 1e-2 {
                v.signum() * 1e-2 + v
            } else {
                v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Max over inputs of `|g_ad - g_fd| / max(|g_ad|, |g_fd|)` (vector norms)
/// for a scalar function of several tensors. `coords` limits the number of
/// perturbed coordinates per input (chosen at random) for large inputs.
pub fn gradcheck<F>(inputs: &[Tensor<f64>], coords: Option<usize>, seed: u64, f: F) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let eval = |xs: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::with_dropout_rng(rng(seed));
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.value(out).unwrap().item()
    };
    let mut tape = Tape::with_dropout_rng(rng(seed));
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = f(&mut tape, &vars);
    let grads = tape.backward(out).unwrap();

    let mut pick = rng(seed ^ 0x5eed);
    let mut worst: f64 = 0.0;
    for (i, x) in inputs.iter().enumerate() {
        let g = grads.get(vars[i]).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));
        let idx: Vec<usize> = match coords {
            Some(c) if c < x.numel() => (0..c).map(|_| pick.random_range(0..x.numel())).collect(),
            _ => (0..x.numel()).collect(),
        };
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        for &j in &idx {
            let mut xs = inputs.to_vec();
            xs[i].data_mut()[j] += FD_STEP;
            let up = eval(&xs);
            xs[i].data_mut()[j] -= 2.0 * FD_STEP;
            let down = eval(&xs);
            let fd = (up - down) / (2.0 * FD_STEP);
            let ad = g.data()[j];
            diff += (ad - fd) * (ad - fd);
            na += ad * ad;
            nn += fd * fd;
        }
        let denom = na.sqrt().max(nn.sqrt());
        let rel = if denom == 0.0 { 0.0 } else { diff.sqrt() / denom };
        worst = worst.max(rel);
    }
    worst
}

/// Projects any output onto a fixed random tensor so every output element
/// contributes to the scalar being checked.
pub fn project(tape: &mut Tape<f64>, out: Var, seed: u64) -> Var {
    let shape = tape.value(out).unwrap().shape().to_vec();
    let w = randn(&shape, &mut rng(seed));
    let w = tape.constant(w);
    let prod = tape.mul(out, w).unwrap();
    tape.sum(prod).unwrap()
}

pub mod oracles;
