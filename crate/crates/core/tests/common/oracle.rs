//! Scalar-loop reference implementations.

use duma::duma::{coattend, DirectionVars};
use duma::tensor::Tensor;
use duma::Tape;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}


fn at(t: &Tensor<f64>, r: usize, c: usize) -> f64 {
    t.data()[r * t.shape()[1] + c]
}

pub fn project(x: &Tensor<f64>, w: &Tensor<f64>) -> Vec<Vec<f64>> {
    let (n, k, m) = (x.shape()[0], x.shape()[1], w.shape()[1]);
    (0..n).map(|i| (0..m).map(|j| (0..k).map(|t| at(x, i, t) * at(w, t, j)).sum()).collect()).collect()
}

/// Scalar-loop multi-head attention followed by the output projection.
#[allow(clippy::too_many_arguments)]
pub fn coattend_oracle(
    x: &Tensor<f64>,
    qmask: &[bool],
    y: &Tensor<f64>,
    kmask: &[bool],
    w: [&Tensor<f64>; 4],
    heads: usize,
    dk: usize,
) -> Vec<f64> {
    let (q, k, v) = (project(x, w[0]), project(y, w[1]), project(y, w[2]));
    let mut attended = vec![vec![0.0; heads * dk]; q.len()];
    for (i, row) in attended.iter_mut().enumerate() {
        if !qmask[i] {
            continue;
        }
        for h in 0..heads {
            let scores: Vec<f64> = (0..k.len())
                .map(|j| (0..dk).map(|t| q[i][h * dk + t] * k[j][h * dk + t]).sum::<f64>() / (dk as f64).sqrt())
                .collect();
            let max = scores.iter().zip(kmask).filter(|(_, m)| **m).map(|(s, _)| *s).fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().zip(kmask).map(|(s, m)| if *m { (s - max).exp() } else { 0.0 }).collect();
            let z: f64 = exps.iter().sum();
            for t in 0..dk {
                row[h * dk + t] = (0..k.len()).map(|j| exps[j] / z * v[j][h * dk + t]).sum();
            }
        }
    }
    let d = w[3].shape()[1];
    let mut out = Vec::new();
    for row in &attended {
        for j in 0..d {
            out.push((0..heads * dk).map(|t| row[t] * at(w[3], t, j)).sum());
        }
    }
    out
}

pub struct Case {
    pub x: Tensor<f64>,
    pub y: Tensor<f64>,
    pub qmask: Vec<bool>,
    pub kmask: Vec<bool>,
    pub w: [Tensor<f64>; 4],
    pub heads: usize,
    pub dk: usize,
}

pub fn run_coattend(c: &Case) -> Vec<f64> {
    let mut tape = Tape::new();
    let x = tape.constant(c.x.clone());
    let y = tape.constant(c.y.clone());
    let proj = DirectionVars {
        wq: tape.constant(c.w[0].clone()),
        wk: tape.constant(c.w[1].clone()),
        wv: tape.constant(c.w[2].clone()),
        wo: tape.constant(c.w[3].clone()),
    };
    let out = coattend(&mut tape, x, &c.qmask, y, &c.kmask, &proj, c.heads, c.dk).unwrap();
    tape.value(out).data().to_vec()
}

pub fn case(seed: u64, lq: usize, lk: usize, d: usize, heads: usize, dk: usize) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = |n: usize, rng: &mut ChaCha8Rng| {
        let mut m: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
        m[rng.random_range(0..n)] = true;
        m
    };
    Case {
        x: random(&mut rng, lq, d),
        y: random(&mut rng, lk, d),
        qmask: mask(lq, &mut rng),
        kmask: mask(lk, &mut rng),
        w: [
            random(&mut rng, d, heads * dk),
            random(&mut rng, d, heads * dk),
            random(&mut rng, d, heads * dk),
            random(&mut rng, heads * dk, d),
        ],
        heads,
        dk,
    }
}
