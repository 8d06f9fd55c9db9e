//! Property tests for invariants that hold on every input.

use factorpred::lp;
use factorpred::model::{Dataset, FactorModelParams, NoiseCovariance};
use factorpred::predictors::{self, LinearPredictor, Method};
use factorpred::risk::{self, quantile_sorted};
use factorpred::rng::{sim_rng, SimRng};
use factorpred::selection::{self, Procedure, SplitPlan};
use factorpred::spectra;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(rng: &mut SimRng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

fn random_data(rng: &mut SimRng, n: usize, p: usize) -> Dataset {
    let x = gaussian(rng, n, p);
    let y = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
    Dataset::new(x, y, None, 0).unwrap()
}

fn random_theta(rng: &mut SimRng) -> FactorModelParams {
    let k = rng.gen_range(1..=4);
    let p = rng.gen_range(k + 1..=20);
    let g = gaussian(rng, k, k);
    let sigma_w = if rng.gen_bool(0.5) {
        NoiseCovariance::Diagonal(DVector::from_fn(p, |_, _| rng.gen_range(0.1..3.0)))
    } else {
        let h = gaussian(rng, p, p);
        NoiseCovariance::Dense(&h * h.transpose() / p as f64 + DMatrix::identity(p, p) * 0.1)
    };
    FactorModelParams {
        k,
        a: gaussian(rng, p, k) * rng.gen_range(0.1..3.0),
        beta: DVector::from_fn(k, |_, _| rng.gen_range(-2.0..2.0)),
        sigma_z: &g * g.transpose() + DMatrix::identity(k, k) * 0.3,
        sigma_w,
        sigma_sq: 1.0,
    }
}

fn close(a: &DVector<f64>, b: &DVector<f64>, tol: f64) -> bool {
    (a - b).amax() <= tol * (1.0 + a.amax().max(b.amax()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn predictors_invariant_to_row_order(seed in any::<u64>(), n in 4usize..30, p in 2usize..30) {
        let mut rng = sim_rng(seed);
        let data = random_data(&mut rng, n, p);
        let mut rows: Vec<usize> = (0..n).collect();
        rows.shuffle(&mut rng);
        let shuffled = data.select_rows(&rows);
        let (c1, c2) = (spectra::decompose(&data.x).unwrap(), spectra::decompose(&shuffled.x).unwrap());
        prop_assert_eq!(c1.rank(), c2.rank());
        let k = rng.gen_range(0..=c1.rank());
        let a = predictors::fit_pcr(&data, &c1, k).unwrap();
        let b = predictors::fit_pcr(&shuffled, &c2, k).unwrap();
        prop_assert!(close(&a.alpha, &b.alpha, 1e-8));
        let g1 = predictors::fit_gls(&data).unwrap();
        let g2 = predictors::fit_gls(&shuffled).unwrap();
        prop_assert!(close(&g1.alpha, &g2.alpha, 1e-8));
    }

    #[test]
    fn predictors_equivariant_to_column_order(seed in any::<u64>(), n in 4usize..30, p in 2usize..30) {
        let mut rng = sim_rng(seed);
        let data = random_data(&mut rng, n, p);
        let mut cols: Vec<usize> = (0..p).collect();
        cols.shuffle(&mut rng);
        let x = DMatrix::from_fn(n, p, |i, j| data.x[(i, cols[j])]);
        let permuted = Dataset::new(x, data.y.clone(), None, 0).unwrap();
        let g1 = predictors::fit_gls(&data).unwrap().alpha;
        let g2 = predictors::fit_gls(&permuted).unwrap().alpha;
        let back = DVector::from_fn(p, |j, _| g1[cols[j]]);
        prop_assert!(close(&back, &g2, 1e-8));
        let pen = |d: &Dataset| {
            let c = spectra::decompose(&d.x).unwrap();
            predictors::select_penalized(&c, predictors::penalty_mu(n, p, 1.0), 2.0).unwrap().chosen
        };
        prop_assert_eq!(pen(&data), pen(&permuted));
    }

    #[test]
    fn rank_selectors_stay_in_range(seed in any::<u64>(), n in 2usize..40, p in 2usize..40, scale in 0.01f64..5.0) {
        let mut rng = sim_rng(seed);
        let data = random_data(&mut rng, n, p);
        let cache = spectra::decompose(&data.x).unwrap();
        let sel = predictors::select_penalized(&cache, predictors::penalty_mu(n, p, scale), 2.0).unwrap();
        prop_assert!(sel.chosen <= sel.k_bar.unwrap());
        prop_assert!(sel.chosen <= cache.rank());
        let elbow = predictors::select_elbow(&cache, scale, 2.0).unwrap();
        prop_assert!(elbow.chosen <= cache.rank());
    }

    #[test]
    fn low_rank_residual_matches_tail_sum(seed in any::<u64>(), n in 2usize..25, p in 2usize..25) {
        let mut rng = sim_rng(seed);
        let x = gaussian(&mut rng, n, p);
        let cache = spectra::decompose(&x).unwrap();
        let k = rng.gen_range(0..=cache.rank());
        let approx = spectra::low_rank_approx(&cache, k).unwrap();
        let direct = (&x - approx).norm_squared();
        prop_assert!((direct - cache.residual_sq(k)).abs() <= 1e-9 * (1.0 + x.norm_squared()));
    }

    #[test]
    fn dantzig_solution_feasible_and_no_larger_than_inverse(seed in any::<u64>(), k in 1usize..6, mu in 0.0f64..0.5) {
        let mut rng = sim_rng(seed);
        let g = gaussian(&mut rng, k, k);
        let q = &g * g.transpose() + DMatrix::identity(k, k) * 0.5;
        let b = DVector::from_fn(k, |_, _| rng.gen_range(-2.0..2.0));
        let beta = lp::l1_min_inf_constraint(&q, &b, mu).unwrap();
        prop_assert!((&q * &beta - &b).amax() <= mu + 1e-8);
        let direct = q.clone().lu().solve(&b).unwrap();
        prop_assert!(beta.abs().sum() <= direct.abs().sum() + 1e-8);
        if mu >= b.amax() {
            prop_assert!(beta.amax() <= 1e-12);
        }
    }

    #[test]
    fn oracle_sandwich_holds(seed in any::<u64>()) {
        let theta = random_theta(&mut sim_rng(seed));
        let o = risk::oracle_bounds(&theta).unwrap();
        let tol = 1e-9 * (1.0 + o.upper);
        prop_assert!(o.lower <= o.exact + tol && o.exact <= o.upper + tol, "{:?}", o);
    }

    #[test]
    fn blp_beats_perturbations(seed in any::<u64>(), size in 1e-4f64..1.0) {
        let mut rng = sim_rng(seed);
        let theta = random_theta(&mut rng);
        let star = predictors::blp(&theta).unwrap().alpha;
        let best = risk::exact_excess_risk(&theta, &star).unwrap();
        prop_assert!(best >= 0.0);
        let delta = DVector::from_fn(theta.p(), |_, _| size * Distribution::<f64>::sample(&StandardNormal, &mut rng));
        let other = risk::exact_excess_risk(&theta, &(&star + delta)).unwrap();
        prop_assert!(best <= other + 1e-10 * (1.0 + best));
    }

    #[test]
    fn random_split_partitions_rows(n in 0usize..200, seed in any::<u64>()) {
        let plan = SplitPlan::random(n, seed);
        prop_assert_eq!(plan.d1.len(), n / 2);
        let mut all: Vec<usize> = plan.d1.iter().chain(&plan.d2).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(SplitPlan::random(n, seed), plan);
    }

    /// Reordering distinct candidates does not change which predictor wins.
    #[test]
    fn split_selection_invariant_to_candidate_order(seed in any::<u64>()) {
        let mut rng = sim_rng(seed);
        let n = rng.gen_range(10..40);
        let p = rng.gen_range(2..15);
        let data = random_data(&mut rng, n, p);
        let mut cands: Vec<Procedure> = (0..4)
            .map(|_| {
                let alpha = DVector::from_fn(p, |_, _| rng.gen_range(-1.0..1.0));
                Procedure::Fixed(LinearPredictor::new(alpha, Method::Projected, None).unwrap())
            })
            .collect();
        cands.push(Procedure::Gls);
        let plan = SplitPlan::random(n, seed);
        let a = selection::split_select(&data, &cands, &plan).unwrap();
        let mut order: Vec<usize> = (0..cands.len()).collect();
        order.shuffle(&mut rng);
        let reordered: Vec<Procedure> = order.iter().map(|&i| cands[i].clone()).collect();
        let b = selection::split_select(&data, &reordered, &plan).unwrap();
        prop_assert_eq!(order[b.m_hat], a.m_hat);
        prop_assert_eq!(a.predictor.alpha, b.predictor.alpha);
    }

    #[test]
    fn quantiles_ordered_and_bounded(mut v in proptest::collection::vec(-1e6f64..1e6, 1..50), t1 in 0.0f64..=1.0, t2 in 0.0f64..=1.0) {
        v.sort_by(f64::total_cmp);
        let (lo, hi) = (t1.min(t2), t1.max(t2));
        let (a, b) = (quantile_sorted(&v, lo).unwrap(), quantile_sorted(&v, hi).unwrap());
        prop_assert!(a <= b);
        prop_assert!(v[0] <= a && b <= v[v.len() - 1]);
    }
}
