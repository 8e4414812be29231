//! Reference implementations used as test oracles. Plain nested loops over
//! `Vec`s, sharing no code with the library.

#![allow(dead_code)]

use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-12;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn to_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn to_array(rows: &[Vec<f64>]) -> Array2<f64> {
    let t = rows[0].len();
    Array2::from_shape_fn((rows.len(), t), |(i, k)| rows[i][k])
}

fn xlogx(p: f64) -> f64 {
    p * p.max(EPS).ln()
}

/// Column means, without assuming rows sum to one.
pub fn marginal(m: &[Vec<f64>]) -> Vec<f64> {
    let n = m.len() as f64;
    let mut p = vec![0.0; m[0].len()];
    for row in m {
        for (k, v) in row.iter().enumerate() {
            p[k] += v;
        }
    }
    p.iter().map(|v| v / n).collect()
}

pub fn delta1(m: &[Vec<f64>]) -> f64 {
    -marginal(m).into_iter().map(xlogx).sum::<f64>()
}

pub fn delta2(m: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    for row in m {
        for &v in row {
            s += xlogx(v);
        }
    }
    s / m.len() as f64
}

pub fn mi_loss(m: &[Vec<f64>], rho: f64) -> f64 {
    let (d1, d2) = (delta1(m), delta2(m));
    if d1 < rho {
        -(d1 + d2)
    } else {
        -d2
    }
}

/// Row-stochastic matrix from a softmax of scaled normal logits. Larger
/// `spread` gives sharper rows.
pub fn random_stochastic(rng: &mut ChaCha8Rng, n: usize, t: usize, spread: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let z: Vec<f64> = (0..t).map(|_| spread * normal(rng)).collect();
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|v| v / s).collect()
        })
        .collect()
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// `|a - b|` relative to the larger magnitude, never dividing by less
/// than `floor`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// (tp, predicted, gold) by pairwise comparison after removing duplicates.
pub fn brute_force_counts(
    pred: &[Vec<(usize, usize, String)>],
    gold: &[Vec<(usize, usize, String)>],
    use_label: bool,
) -> (usize, usize, usize) {
    let key = |s: &(usize, usize, String)| {
        (s.0, s.1, if use_label { s.2.clone() } else { String::new() })
    };
    let dedup = |v: &[(usize, usize, String)]| {
        let mut out: Vec<(usize, usize, String)> = Vec::new();
        for s in v {
            let k = key(s);
            if !out.contains(&k) {
                out.push(k);
            }
        }
        out
    };
    let (mut tp, mut np, mut ng) = (0, 0, 0);
    for (p, g) in pred.iter().zip(gold) {
        let (p, g) = (dedup(p), dedup(g));
        np += p.len();
        ng += g.len();
        for a in &p {
            for b in &g {
                if a == b {
                    tp += 1;
                }
            }
        }
    }
    (tp, np, ng)
}
