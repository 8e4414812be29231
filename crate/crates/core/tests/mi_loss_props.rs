mod common;

use common::*;
use fmim_core::mi_loss::{
    assemble_prob_matrix, mi_loss_and_grad, mi_value, Branch, MiLossConfig, ProbBatch,
};
use ndarray::{array, concatenate, Array2, Axis};
use proptest::prelude::*;

fn stochastic() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..24, prop::sample::select(vec![2usize, 3, 4, 5, 8]), 0.05f64..8.0, any::<u64>())
        .prop_map(|(n, t, spread, seed)| random_stochastic(&mut rng(seed), n, t, spread))
}

/// Soft rows whose entries stay well above the clamp.
fn soft() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..24, prop::sample::select(vec![2usize, 3, 4, 5, 8]), 0.05f64..2.0, any::<u64>())
        .prop_map(|(n, t, spread, seed)| random_stochastic(&mut rng(seed), n, t, spread))
        .prop_filter("entries near the clamp", |m| m.iter().flatten().all(|&v| v > 1e-2))
}

fn cfg(rho: f64) -> MiLossConfig {
    MiLossConfig { alpha: 0.01, rho, epsilon: EPS }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #[test]
    fn jensen_and_bounds(m in stochastic()) {
        let t = m[0].len() as f64;
        let r = mi_loss_and_grad(&ProbBatch::new(to_array(&m)).unwrap(), &cfg(0.5));
        prop_assert!(r.delta1 + r.delta2 >= -1e-9);
        prop_assert!(r.delta1 >= 0.0 && r.delta1 <= t.ln() + 1e-9);
        prop_assert!(r.delta2 <= 0.0 && r.delta2 >= -t.ln() - 1e-9);
    }

    #[test]
    fn matches_summation_oracle(m in stochastic(), rho in 0.0f64..2.5) {
        let r = mi_loss_and_grad(&ProbBatch::new(to_array(&m)).unwrap(), &cfg(rho));
        prop_assert!(close(r.delta1, delta1(&m)));
        prop_assert!(close(r.delta2, delta2(&m)));
        prop_assert!(close(r.loss, mi_loss(&m, rho)));
    }

    #[test]
    fn row_permutation_invariance(m in stochastic(), rho in 0.0f64..2.0, seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut shuffled = m.clone();
        shuffled.shuffle(&mut rng(seed));
        let a = mi_loss_and_grad(&ProbBatch::new(to_array(&m)).unwrap(), &cfg(rho));
        let b = mi_loss_and_grad(&ProbBatch::new(to_array(&shuffled)).unwrap(), &cfg(rho));
        prop_assert!(close(a.delta1, b.delta1) && close(a.delta2, b.delta2) && close(a.loss, b.loss));
    }

    #[test]
    fn replication_invariance(m in stochastic(), rho in 0.0f64..2.0) {
        let once = to_array(&m);
        let twice = concatenate(Axis(0), &[once.view(), once.view()]).unwrap();
        let a = mi_loss_and_grad(&ProbBatch::new(once).unwrap(), &cfg(rho));
        let b = mi_loss_and_grad(&ProbBatch::new(twice).unwrap(), &cfg(rho));
        prop_assert!(close(a.delta1, b.delta1) && close(a.delta2, b.delta2) && close(a.loss, b.loss));
    }

    #[test]
    fn branch_agrees_with_formulas(m in stochastic(), rho in 0.0f64..2.5) {
        let r = mi_loss_and_grad(&ProbBatch::new(to_array(&m)).unwrap(), &cfg(rho));
        let n = m.len() as f64;
        let p = marginal(&m);
        match r.branch {
            Branch::BelowThreshold => {
                prop_assert!(r.delta1 < rho);
                prop_assert!(close(r.loss, -(r.delta1 + r.delta2)));
                for (i, row) in m.iter().enumerate() {
                    for (k, &v) in row.iter().enumerate() {
                        let g = (p[k].max(EPS).ln() - v.max(EPS).ln()) / n;
                        prop_assert!(close(r.grad[[i, k]], g));
                    }
                }
            }
            Branch::AtOrAboveThreshold => {
                prop_assert!(r.delta1 >= rho);
                prop_assert!(close(r.loss, -r.delta2));
                for (i, row) in m.iter().enumerate() {
                    for (k, &v) in row.iter().enumerate() {
                        prop_assert!(close(r.grad[[i, k]], -(v.max(EPS).ln() + 1.0) / n));
                    }
                }
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences(m in soft(), below in any::<bool>()) {
        let rho = delta1(&m) + if below { 0.05 } else { -0.05 };
        let r = mi_loss_and_grad(&ProbBatch::new(to_array(&m)).unwrap(), &cfg(rho));
        let h = 1e-6;
        for i in 0..m.len() {
            for k in 0..m[0].len() {
                let (mut up, mut down) = (m.clone(), m.clone());
                up[i][k] += h;
                down[i][k] -= h;
                let fd = (mi_loss(&up, rho) - mi_loss(&down, rho)) / (2.0 * h);
                let e = rel_err(r.grad[[i, k]], fd, 1e-3);
                prop_assert!(e < 1e-6, "({}, {}): analytic {} fd {} rel {:e}", i, k, r.grad[[i, k]], fd, e);
            }
        }
    }

    #[test]
    fn assembled_stack_is_source_first(na in 1usize..10, nb in 1usize..10, t in 2usize..6, seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = to_array(&random_stochastic(&mut r, na, t, 1.0));
        let b = to_array(&random_stochastic(&mut r, nb, t, 1.0));
        let m = assemble_prob_matrix(std::slice::from_ref(&a), std::slice::from_ref(&b)).unwrap();
        prop_assert_eq!(m.num_rows(), a.nrows() + b.nrows());
        prop_assert_eq!(m.sentence(0), a.view());
        prop_assert_eq!(m.sentence(1), b.view());
    }
}

#[test]
fn worked_example() {
    let rows = vec![vec![0.9, 0.1], vec![0.2, 0.8]];
    let m = ProbBatch::new(array![[0.9, 0.1], [0.2, 0.8]]).unwrap();
    let lo = mi_loss_and_grad(&m, &cfg(0.5));
    assert!((lo.delta1 - delta1(&rows)).abs() < 1e-12);
    assert!((lo.delta1 - 0.6881).abs() < 1e-4);
    assert!((lo.delta2 + 0.4127).abs() < 1e-4);
    assert_eq!(lo.branch, Branch::AtOrAboveThreshold);
    assert!((lo.loss - 0.4127).abs() < 1e-4);
    let hi = mi_loss_and_grad(&m, &cfg(0.7));
    assert_eq!(hi.branch, Branch::BelowThreshold);
    assert!((hi.loss + 0.2754).abs() < 1e-4);
    assert!((mi_value(&m, EPS) - 0.2754).abs() < 1e-4);
}

#[test]
fn uniform_rows_have_no_information() {
    let m = ProbBatch::new(Array2::from_elem((5, 4), 0.25)).unwrap();
    let r = mi_loss_and_grad(&m, &cfg(0.5));
    assert!((r.delta1 - 4f64.ln()).abs() < 1e-12);
    assert!((r.delta1 + r.delta2).abs() < 1e-12);
}
