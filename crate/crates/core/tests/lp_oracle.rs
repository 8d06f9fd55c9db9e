//! The simplex solver against brute-force vertex enumeration on random
//! 10-variable programs.

use factorpred::lp::{self, DenseLP, LpOutcome};
use factorpred::rng::sim_rng;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

const N: usize = 10;

struct Instance {
    c: DVector<f64>,
    a: DMatrix<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    upper: Vec<f64>,
}

/// `min c^T x  s.t.  lo <= A x <= hi,  0 <= x <= upper`; `x = 0` need not be feasible.
fn random_instance(seed: u64, m: usize) -> Instance {
    let mut rng = sim_rng(seed);
    let c = DVector::from_fn(N, |_, _| rng.gen_range(-1.0..1.0));
    let a = DMatrix::from_fn(m, N, |_, _| rng.gen_range(-1.0..1.0));
    let upper: Vec<f64> = (0..N).map(|_| rng.gen_range(0.5..2.0)).collect();
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for i in 0..m {
        let mid: f64 = (0..N).map(|j| a[(i, j)] * upper[j] * rng.gen_range(0.0..1.0)).sum();
        let w = rng.gen_range(0.1..1.0);
        lo.push(mid - w);
        hi.push(mid + w);
    }
    Instance { c, a, lo, hi, upper }
}

fn to_lp(inst: &Instance) -> DenseLP {
    let mut lp = DenseLP::new(inst.c.clone());
    for i in 0..inst.a.nrows() {
        let row: Vec<f64> = inst.a.row(i).iter().copied().collect();
        lp.add_row(&row, inst.lo[i], inst.hi[i]);
    }
    for j in 0..N {
        lp.set_var_bounds(j, 0.0, inst.upper[j]);
    }
    lp
}

fn feasible(inst: &Instance, x: &DVector<f64>, tol: f64) -> bool {
    let ax = &inst.a * x;
    (0..N).all(|j| x[j] >= -tol && x[j] <= inst.upper[j] + tol)
        && (0..inst.a.nrows()).all(|i| ax[i] >= inst.lo[i] - tol && ax[i] <= inst.hi[i] + tol)
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

/// Best objective over all basic feasible points, or `None` if there are none.
///
/// A vertex has `N` linearly independent active constraints: `s` rows at
/// one of their bounds, `s` free variables, and every other variable at
/// `0` or at its upper bound.
fn vertex_oracle(inst: &Instance) -> Option<f64> {
    let m = inst.a.nrows();
    let mut best: Option<f64> = None;
    for s in 0..=m.min(N) {
        for rows in subsets(m, s) {
            for free in subsets(N, s) {
                let fixed: Vec<usize> = (0..N).filter(|j| !free.contains(j)).collect();
                for var_mask in 0..(1u32 << fixed.len()) {
                    for row_mask in 0..(1u32 << s) {
                        let mut x = DVector::zeros(N);
                        for (t, &j) in fixed.iter().enumerate() {
                            x[j] = if var_mask >> t & 1 == 1 { inst.upper[j] } else { 0.0 };
                        }
                        if s > 0 {
                            let sub = DMatrix::from_fn(s, s, |r, c| inst.a[(rows[r], free[c])]);
                            let rhs = DVector::from_fn(s, |r, _| {
                                let i = rows[r];
                                let target = if row_mask >> r & 1 == 1 { inst.hi[i] } else { inst.lo[i] };
                                target - fixed.iter().map(|&j| inst.a[(i, j)] * x[j]).sum::<f64>()
                            });
                            let Some(sol) = sub.lu().solve(&rhs) else { continue };
                            for (c, &j) in free.iter().enumerate() {
                                x[j] = sol[c];
                            }
                        }
                        if feasible(inst, &x, 1e-9) {
                            let v = inst.c.dot(&x);
                            best = Some(best.map_or(v, |b: f64| b.min(v)));
                        }
                    }
                }
            }
        }
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn simplex_matches_vertex_enumeration(seed in any::<u64>(), m in 1usize..=3) {
        let inst = random_instance(seed, m);
        let oracle = vertex_oracle(&inst);
        match lp::solve(&to_lp(&inst)).unwrap() {
            LpOutcome::Optimal { x, objective, certificate } => {
                let best = oracle.expect("solver found a point the oracle missed");
                prop_assert!(feasible(&inst, &x, 1e-8));
                prop_assert!((objective - inst.c.dot(&x)).abs() <= 1e-9);
                prop_assert!((objective - best).abs() <= 1e-7, "{} vs {}", objective, best);
                prop_assert!(certificate.verified(), "{:?}", certificate);
            }
            LpOutcome::Infeasible => prop_assert!(oracle.is_none()),
            LpOutcome::Unbounded => prop_assert!(false, "boxed program reported unbounded"),
        }
    }
}

#[test]
fn infeasible_instance_has_no_vertex() {
    let mut inst = random_instance(1, 2);
    // two copies of one row with disjoint ranges
    let row = inst.a.row(0).into_owned();
    inst.a.set_row(1, &row);
    inst.lo[1] = inst.hi[0] + 1.0;
    inst.hi[1] = inst.hi[0] + 2.0;
    assert!(vertex_oracle(&inst).is_none());
    assert_eq!(lp::solve(&to_lp(&inst)).unwrap(), LpOutcome::Infeasible);
}
