//! Cross-module invariants, checked against independent oracles: a cyclic
//! Jacobi eigensolver, numeric integration of the chi-square density, dense
//! grid search over weight simplices, and brute-force enumeration.
#![allow(clippy::needless_range_loop)] // oracle loops follow the textbook indexing

mod common;

use common::*;
use mmdesign::designs::{
    enumerate_balanced, enumerate_representatives, Assignment, Design,
};
use mmdesign::inference::{p_value_exact, p_value_mc, TestStatistic};
use mmdesign::kernels::{
    build_gram, build_gram_covariate_free, CovariateMatrix, GramMatrix, KernelKind,
    KernelSpec, OmegaSpec,
};
use mmdesign::numerics::{
    chi2_inv_cdf, eigh, project_capped_simplex, psd_sqrt, top_eigenpair, SymMatrix,
};
use mmdesign::optimizer::{icmsod, minimize_lambda_max_capped, msod_exact, top_assignments};
use mmdesign::rerand::{
    exact_rerandomization_design, mahalanobis_distance, RerandSpec, RerandThreshold,
};
use mmdesign::risk::{b_value, minimax_risk};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

// ---------------------------------------------------------------------------
// Numerics against independent oracles

#[test]
fn eigensolver_matches_cyclic_jacobi() {
    let mut r = rng(101);
    for trial in 0..30 {
        let dim = 2 + (trial % 19);
        let m = random_symmetric(dim, &mut r);
        let fast = eigh(&m).unwrap().values;
        let slow = jacobi_eigenvalues(&m);
        let scale = m.max_abs().max(1.0);
        for (a, b) in fast.iter().zip(&slow) {
            assert!(
                (a - b).abs() <= 1e-8 * scale,
                "dim {dim}: eigenvalue {a} vs Jacobi {b}"
            );
        }
        let top = top_eigenpair(&m, 1e-8).unwrap().value;
        assert!((top - slow.last().unwrap()).abs() <= 1e-8 * scale);
    }
}

#[test]
fn psd_sqrt_squares_back() {
    let mut r = rng(102);
    for trial in 0..20 {
        let dim = 2 + (trial % 12);
        let m = random_psd(dim, &mut r);
        let h = psd_sqrt(&m).unwrap();
        let mut hh = SymMatrix::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                let mut acc = 0.0;
                for k in 0..dim {
                    acc += h.get(i, k) * h.get(k, j);
                }
                hh.set(i, j, acc);
            }
        }
        let mut diff = hh.clone();
        diff.add_scaled(-1.0, &m);
        assert!(
            diff.frob_norm() <= 1e-8 * m.frob_norm().max(1.0),
            "dim {dim}: ||H^2 - M|| = {}",
            diff.frob_norm()
        );
    }
}

#[test]
fn capped_projection_is_variational() {
    // Euclidean projection w of v: feasible, and <v - w, u - w> <= 0 for all
    // feasible u.
    let mut r = rng(103);
    for trial in 0..50 {
        let len = 2 + (trial % 10);
        let cap = (1.0 / len as f64 + r.gen::<f64>()).min(1.0);
        let v: Vec<f64> = (0..len).map(|_| 4.0 * r.gen::<f64>() - 2.0).collect();
        let w = project_capped_simplex(&v, cap).unwrap();
        let sum: f64 = w.iter().sum();
        assert!((sum - 1.0).abs() <= 1e-12, "sum {sum}");
        for &wi in &w {
            assert!(wi >= -1e-12 && wi <= cap + 1e-12, "entry {wi} outside [0, {cap}]");
        }
        for _ in 0..100 {
            let raw: Vec<f64> = (0..len).map(|_| 4.0 * r.gen::<f64>() - 2.0).collect();
            let u = project_capped_simplex(&raw, cap).unwrap();
            let inner: f64 = v
                .iter()
                .zip(&w)
                .zip(&u)
                .map(|((vi, wi), ui)| (vi - wi) * (ui - wi))
                .sum();
            assert!(inner <= 1e-9, "variational inequality violated: {inner}");
        }
    }
}

/// Chi-square CDF by Simpson integration. The substitution t = u^2 turns the
/// density t^{d/2-1} e^{-t/2} / (2^{d/2} Gamma(d/2)) — whose derivatives blow
/// up at zero for odd d — into 2 u^{d-1} e^{-u^2/2} / (2^{d/2} Gamma(d/2)), a
/// polynomial times a Gaussian, smooth everywhere, so Simpson keeps its full
/// fourth-order accuracy.
fn chi2_cdf_by_quadrature(d: u32, x: f64) -> f64 {
    let panels = 40_000usize;
    // Gamma(d/2) unwinds via Gamma(k) = (k-1) Gamma(k-1) down to
    // Gamma(1) = 1 or Gamma(1/2) = sqrt(pi).
    let k = d as f64 / 2.0;
    let mut log_gamma_k = 0.0f64;
    let mut kk = k;
    while kk > 1.0 {
        kk -= 1.0;
        log_gamma_k += kk.ln();
    }
    if (kk - 0.5).abs() < 1e-12 {
        log_gamma_k += std::f64::consts::PI.sqrt().ln();
    }
    let log_norm = k * 2.0f64.ln() + log_gamma_k;
    let f = |u: f64| -> f64 {
        let poly = if d == 1 { 0.0 } else { (d as f64 - 1.0) * u.ln() };
        2.0 * (poly - u * u / 2.0 - log_norm).exp()
    };
    // At u = 0 the log form still evaluates cleanly: for d >= 2 the
    // exponent is -inf and exp gives the correct limit 0.
    let (a, b) = (0.0, x.sqrt());
    let h = (b - a) / panels as f64;
    let mut acc = f(a) + f(b);
    for i in 1..panels {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

#[test]
fn chi2_quantile_round_trips_through_quadrature() {
    for &d in &[1u32, 2, 3, 5, 10] {
        for &p in &[0.01, 0.1, 0.2, 0.5, 0.8, 0.9, 0.99] {
            let x = chi2_inv_cdf(d, p).unwrap();
            let back = chi2_cdf_by_quadrature(d, x);
            assert!(
                (back - p).abs() <= 1e-7,
                "d = {d}, p = {p}: quantile {x}, quadrature CDF {back}"
            );
        }
    }
}

// ---------------------------------------------------------------------------
// Kernel Gram matrices

#[test]
fn gram_matrices_are_psd_within_tolerance() {
    let mut r = rng(104);
    for trial in 0..12 {
        let n = 4 + 2 * (trial % 3);
        let d = 1 + (trial % 3);
        let x = random_covariates(n, d, &mut r);
        for spec in [
            KernelSpec::new(KernelKind::Linear),
            KernelSpec::new(KernelKind::Linear).with_omega(OmegaSpec::InverseCovariance),
            KernelSpec::new(KernelKind::Polynomial { degree: 2 }),
            KernelSpec::new(KernelKind::Gaussian),
        ] {
            let gram = build_gram(&spec, &x).unwrap();
            let values = eigh(gram.matrix()).unwrap().values;
            let trace: f64 = (0..n).map(|i| gram.matrix().get(i, i)).sum();
            assert!(
                values[0] >= -1e-8 * trace.max(1.0) / n as f64,
                "min eigenvalue {} for {:?}",
                values[0],
                spec.kind
            );
        }
    }
}

#[test]
fn linear_gram_is_weighted_outer_product() {
    let mut r = rng(105);
    let x = random_covariates(8, 3, &mut r);
    let omega = random_psd(3, &mut r);
    let gram = build_gram(
        &KernelSpec::new(KernelKind::Linear).with_omega(OmegaSpec::Explicit(omega.clone())),
        &x,
    )
    .unwrap();
    for i in 0..8 {
        for j in 0..8 {
            let mut want = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    want += x.row(i)[a] * omega.get(a, b) * x.row(j)[b];
                }
            }
            assert!(
                (gram.matrix().get(i, j) - want).abs() <= 1e-12 * want.abs().max(1.0),
                "entry ({i},{j})"
            );
        }
    }
}

#[test]
fn ridge_shifts_every_eigenvalue() {
    let mut r = rng(106);
    let x = random_covariates(8, 2, &mut r);
    let base = build_gram(&KernelSpec::new(KernelKind::Gaussian), &x).unwrap();
    let lambda = 0.7;
    let ridged = build_gram(
        &KernelSpec::new(KernelKind::Gaussian).with_ridge(lambda),
        &x,
    )
    .unwrap();
    let ev0 = eigh(base.matrix()).unwrap().values;
    let ev1 = eigh(ridged.matrix()).unwrap().values;
    for (a, b) in ev0.iter().zip(&ev1) {
        assert!((a + lambda - b).abs() <= 1e-9, "{a} + {lambda} vs {b}");
    }
}

#[test]
fn gaussian_gram_is_translation_invariant() {
    let mut r = rng(107);
    let x = random_covariates(6, 2, &mut r);
    let shift = [13.5, -2.25];
    let shifted = CovariateMatrix::new(
        (0..6)
            .map(|i| x.row(i).iter().zip(&shift).map(|(v, s)| v + s).collect())
            .collect(),
        vec!["x1".into(), "x2".into()],
    )
    .unwrap();
    let g0 = build_gram(&KernelSpec::new(KernelKind::Gaussian), &x).unwrap();
    let g1 = build_gram(&KernelSpec::new(KernelKind::Gaussian), &shifted).unwrap();
    for i in 0..6 {
        for j in 0..6 {
            assert!((g0.matrix().get(i, j) - g1.matrix().get(i, j)).abs() <= 1e-12);
        }
    }
}

// ---------------------------------------------------------------------------
// Designs: enumeration, serialization, Q-matrix

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn design_json_round_trips_bit_identically(
        seed in any::<u64>(),
        n_half in 1usize..5,
        support_size in 1usize..6,
    ) {
        let n = 2 * n_half;
        let mut r = rng(seed);
        let reps = enumerate_representatives(n).unwrap();
        let take = support_size.min(reps.len());
        let chosen = reps.choose_multiple(&mut r, take);
        let support: Vec<(Assignment, f64)> = chosen
            .map(|w| (w.clone(), r.gen::<f64>() + 0.01))
            .collect();
        let design = Design::from_support(support).unwrap();
        let text = design.to_json_string();
        let back = Design::from_json_str(&text).unwrap();
        prop_assert_eq!(&back.to_json_string(), &text);
        for (a, b) in design.pairs().unwrap().iter().zip(back.pairs().unwrap()) {
            prop_assert_eq!(&a.assignment, &b.assignment);
            prop_assert_eq!(a.probability.to_bits(), b.probability.to_bits());
        }
    }

    #[test]
    fn q_matrix_structure(seed in any::<u64>(), n_half in 1usize..5) {
        let n = 2 * n_half;
        let mut r = rng(seed);
        let reps = enumerate_representatives(n).unwrap();
        let take = 1 + (seed as usize % reps.len().min(5));
        let support: Vec<(Assignment, f64)> = reps
            .choose_multiple(&mut r, take)
            .map(|w| (w.clone(), r.gen::<f64>() + 0.01))
            .collect();
        let design = Design::from_support(support).unwrap();
        let q = design.q_matrix();
        for i in 0..n {
            prop_assert_eq!(q.get(i, i), 1.0);
            let row_sum: f64 = q.row(i).iter().sum();
            prop_assert!(row_sum.abs() <= 1e-9, "row {} sums to {}", i, row_sum);
        }
        let min = eigh(&q).unwrap().values[0];
        prop_assert!(min >= -1e-9, "Q has eigenvalue {}", min);
    }

    #[test]
    fn q_quadratic_form_matches_signed_support_sum(
        seed in any::<u64>(),
        n_half in 2usize..5,
    ) {
        let n = 2 * n_half;
        let mut r = rng(seed);
        let reps = enumerate_representatives(n).unwrap();
        let take = 1 + (seed as usize % reps.len().min(6));
        let support: Vec<(Assignment, f64)> = reps
            .choose_multiple(&mut r, take)
            .map(|w| (w.clone(), r.gen::<f64>() + 0.01))
            .collect();
        let design = Design::from_support(support).unwrap();
        let mu: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
        let mean = mu.iter().sum::<f64>() / n as f64;
        let centered: Vec<f64> = mu.iter().map(|v| v - mean).collect();
        let via_q = design.q_matrix().quad_form(&centered);
        // Signed support: each of W and -W carries half the pair mass and
        // contributes the same squared inner product.
        let via_sum: f64 = design
            .pairs()
            .unwrap()
            .iter()
            .map(|p| {
                let ip = p.assignment.dot(&centered);
                2.0 * (p.probability / 2.0) * ip * ip
            })
            .sum();
        prop_assert!(
            (via_q - via_sum).abs() <= 1e-9 * via_q.abs().max(1.0),
            "quadratic form {} vs signed sum {}",
            via_q,
            via_sum
        );
    }

    #[test]
    fn b_value_ignores_constant_shifts(
        seed in any::<u64>(),
        n_half in 2usize..5,
        shift in -100.0f64..100.0,
    ) {
        let n = 2 * n_half;
        let mut r = rng(seed);
        let mu: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
        let shifted: Vec<f64> = mu.iter().map(|v| v + shift).collect();
        let design = Design::complete_randomization(n).unwrap();
        let a = b_value(&design, &mu).unwrap();
        let b = b_value(&design, &shifted).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }
}

#[test]
fn enumeration_is_complete_and_canonical() {
    for n in [2usize, 4, 6, 8] {
        let all = enumerate_balanced(n).unwrap();
        let reps = enumerate_representatives(n).unwrap();
        let binom = {
            let mut c = 1f64;
            for k in 0..n / 2 {
                c = c * (n - k) as f64 / (k + 1) as f64;
            }
            c as usize
        };
        assert_eq!(all.len(), binom);
        assert_eq!(reps.len(), binom / 2);
        for w in &all {
            assert_eq!(w.signs().iter().map(|&s| s as i64).sum::<i64>(), 0);
        }
        for w in &reps {
            assert!(w.is_canonical());
        }
        // Representatives plus mirrors reproduce the full set.
        let mut signed: Vec<Vec<i8>> = reps
            .iter()
            .flat_map(|w| [w.signs().to_vec(), w.flipped().signs().to_vec()])
            .collect();
        signed.sort();
        let mut full: Vec<Vec<i8>> = all.iter().map(|w| w.signs().to_vec()).collect();
        full.sort();
        assert_eq!(signed, full);
    }
}

// ---------------------------------------------------------------------------
// Risk evaluation

#[test]
fn witness_attains_risk_on_random_problems() {
    let mut r = rng(108);
    for trial in 0..10 {
        let n = if trial % 2 == 0 { 6 } else { 8 };
        let gram = GramMatrix::from_matrix(random_psd(n, &mut r)).unwrap();
        let reps = enumerate_representatives(n).unwrap();
        let take = 2 + (trial % 4);
        let support: Vec<(Assignment, f64)> = reps
            .choose_multiple(&mut r, take)
            .map(|w| (w.clone(), r.gen::<f64>() + 0.05))
            .collect();
        let design = Design::from_support(support).unwrap();
        let report = minimax_risk(&design, &gram, 2.0).unwrap();
        let attained = b_value(&design, &report.witness_mu).unwrap();
        assert!(
            (attained - report.minimax_risk).abs()
                <= 1e-6 * report.minimax_risk.max(1e-12),
            "witness attains {attained}, risk {}",
            report.minimax_risk
        );
    }
}

#[test]
fn risk_is_equivariant_under_unit_relabeling() {
    let mut r = rng(109);
    for _ in 0..6 {
        let n = 8usize;
        let gram = GramMatrix::from_matrix(random_psd(n, &mut r)).unwrap();
        let reps = enumerate_representatives(n).unwrap();
        let support: Vec<(Assignment, f64)> = reps
            .choose_multiple(&mut r, 4)
            .map(|w| (w.clone(), r.gen::<f64>() + 0.05))
            .collect();
        let design = Design::from_support(support.clone()).unwrap();

        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        let permuted_gram = GramMatrix::from_matrix(SymMatrix::from_fn(n, |i, j| {
            gram.matrix().get(perm[i], perm[j])
        }))
        .unwrap();
        let permuted_design = Design::from_support(support.into_iter().map(|(w, p)| {
            let signs: Vec<i8> = (0..n).map(|i| w.sign(perm[i])).collect();
            (Assignment::new(signs).unwrap(), p)
        }))
        .unwrap();

        let a = minimax_risk(&design, &gram, 1.0).unwrap().minimax_risk;
        let b = minimax_risk(&permuted_design, &permuted_gram, 1.0)
            .unwrap()
            .minimax_risk;
        assert!((a - b).abs() <= 1e-9 * a.max(1.0), "{a} vs {b}");
    }
}

#[test]
fn rank_one_risk_equals_b_value() {
    let mut r = rng(110);
    for _ in 0..8 {
        let n = 8usize;
        let mu0: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
        let gram = build_gram_covariate_free(
            &KernelSpec::new(KernelKind::Singleton { mu0: mu0.clone() }),
            n,
        )
        .unwrap();
        let reps = enumerate_representatives(n).unwrap();
        let support: Vec<(Assignment, f64)> = reps
            .choose_multiple(&mut r, 3)
            .map(|w| (w.clone(), r.gen::<f64>() + 0.05))
            .collect();
        let design = Design::from_support(support).unwrap();
        let risk = minimax_risk(&design, &gram, 1.0).unwrap().minimax_risk;
        let b = b_value(&design, &mu0).unwrap();
        assert!(
            (risk - b).abs() <= 1e-9 * b.max(1.0),
            "rank-one risk {risk} vs B {b}"
        );
    }
}

#[test]
fn single_to_cr_risk_ratio_is_n_minus_one() {
    for n in [4usize, 6, 8] {
        let gram =
            build_gram_covariate_free(&KernelSpec::new(KernelKind::CrReference), n).unwrap();
        let cr = minimax_risk(&Design::complete_randomization(n).unwrap(), &gram, 1.0)
            .unwrap()
            .minimax_risk;
        for w0 in enumerate_representatives(n).unwrap() {
            let single = minimax_risk(&Design::single_partition(&w0), &gram, 1.0)
                .unwrap()
                .minimax_risk;
            let ratio = single / cr;
            assert!(
                (ratio - (n as f64 - 1.0)).abs() <= 1e-9,
                "n = {n}: ratio {ratio}"
            );
        }
    }
}

// ---------------------------------------------------------------------------
// Optimizer: oracle agreement and structural guarantees

#[test]
fn solver_matches_dense_grid_search() {
    let mut r = rng(111);
    // (t_count, cap, how many random problems)
    let cases = [(2usize, 1.0, 5), (3, 1.0, 5), (2, 0.6, 3), (3, 0.4, 3), (4, 1.0, 2), (5, 1.0, 1)];
    for &(t_count, cap, problems) in &cases {
        for _ in 0..problems {
            let x = random_covariates(8, 2, &mut r);
            let gram = linear_gram(&x);
            let pool = top_assignments(&gram, t_count).unwrap();
            let solution = minimize_lambda_max_capped(&pool, &gram, cap).unwrap();
            let grid = grid_min_risk(&pool, &gram, 50, cap);

            // The solver is certified near-optimal, so it cannot sit above
            // any feasible grid point by more than its certification slack.
            assert!(
                solution.lambda_star <= grid + 1e-6 * grid.max(1.0) + 1e-12,
                "T = {t_count}, cap = {cap}: solver {} above grid {grid}",
                solution.lambda_star
            );
            // And the grid point nearest the optimum is within the grid's
            // own resolution, bounded through the objective's Lipschitz
            // constant lambda_max(G) in the sup norm.
            let k = gram.matrix();
            let g = SymMatrix::from_fn(t_count, |s, t| {
                pool.assignments()[s].dot(&k.matvec(&pool.assignments()[t].to_f64()))
            });
            let lip = eigh(&g).unwrap().values[t_count - 1];
            let resolution = lip * 0.02 * t_count as f64;
            assert!(
                grid <= solution.lambda_star + resolution + 1e-9,
                "T = {t_count}, cap = {cap}: grid {grid} too far above solver {}",
                solution.lambda_star
            );
        }
    }
}

#[test]
fn icmsod_risk_is_nonincreasing_in_support_size() {
    let mut r = rng(112);
    let alpha = 0.1;
    for _ in 0..4 {
        let x = random_covariates(8, 2, &mut r);
        let gram = linear_gram(&x);
        let mut last = f64::INFINITY;
        for t_count in [10usize, 12, 15, 20, 25, 30, 35] {
            let out = icmsod(&gram, alpha, t_count).unwrap();
            let risk = out.solution.lambda_star;
            // Larger pools can only help, up to certification slack.
            assert!(
                risk <= last + 2e-6 * last.clamp(1e-12, 1e6),
                "risk rose from {last} to {risk} at T = {t_count}"
            );
            last = risk;
        }
    }
}

#[test]
fn candidate_pool_with_full_budget_is_complete() {
    for n in [4usize, 6] {
        let gram =
            build_gram_covariate_free(&KernelSpec::new(KernelKind::CrReference), n).unwrap();
        let all_pairs = enumerate_representatives(n).unwrap().len();
        let pool = top_assignments(&gram, all_pairs).unwrap();
        assert!(!pool.truncated());
        let mut got: Vec<Vec<i8>> =
            pool.assignments().iter().map(|w| w.signs().to_vec()).collect();
        got.sort();
        let mut want: Vec<Vec<i8>> = enumerate_representatives(n)
            .unwrap()
            .iter()
            .map(|w| w.signs().to_vec())
            .collect();
        want.sort();
        assert_eq!(got, want, "n = {n}: pool must cover every sign pair");
    }
}

#[test]
fn analytic_subgradient_matches_finite_differences() {
    let mut r = rng(113);
    let n = 8usize;
    let t_count = 5usize;
    let x = random_covariates(n, 2, &mut r);
    let gram = linear_gram(&x);
    let pool = top_assignments(&gram, t_count).unwrap();
    let half = psd_sqrt(gram.matrix()).unwrap();
    let z: Vec<Vec<f64>> = pool.assignments().iter().map(|w| half.matvec(&w.to_f64())).collect();

    let lambda_at = |v: &[f64]| -> f64 {
        let mut m = SymMatrix::zeros(n);
        for (vt, zt) in v.iter().zip(&z) {
            m.add_scaled(*vt, &SymMatrix::outer(zt));
        }
        top_eigenpair(&m, 1e-10).unwrap().value
    };

    let mut checked = 0;
    for attempt in 0..40 {
        let raw: Vec<f64> = (0..t_count).map(|_| r.gen::<f64>() + 0.1).collect();
        let total: f64 = raw.iter().sum();
        let v: Vec<f64> = raw.iter().map(|w| w / total).collect();

        // Skip near-degenerate top eigenvalues where lambda_max is not
        // differentiable and only a subgradient exists.
        let mut m = SymMatrix::zeros(n);
        for (vt, zt) in v.iter().zip(&z) {
            m.add_scaled(*vt, &SymMatrix::outer(zt));
        }
        let spectrum = eigh(&m).unwrap().values;
        let top = spectrum[n - 1];
        if top - spectrum[n - 2] <= 1e-3 * top {
            continue;
        }
        let u = top_eigenpair(&m, 1e-10).unwrap().vector;
        let g: Vec<f64> = z
            .iter()
            .map(|zt| {
                let ip: f64 = zt.iter().zip(&u).map(|(a, b)| a * b).sum();
                ip * ip
            })
            .collect();

        let h = 1e-5;
        for s in 1..t_count {
            let mut plus = v.clone();
            let mut minus = v.clone();
            plus[0] += h;
            plus[s] -= h;
            minus[0] -= h;
            minus[s] += h;
            let fd = (lambda_at(&plus) - lambda_at(&minus)) / (2.0 * h);
            let analytic = g[0] - g[s];
            assert!(
                (fd - analytic).abs() <= 1e-4 * analytic.abs().max(1.0),
                "attempt {attempt}: direction e0 - e{s}: fd {fd} vs analytic {analytic}"
            );
        }
        checked += 1;
        if checked >= 10 {
            break;
        }
    }
    assert!(checked >= 5, "only {checked} nondegenerate points found");
}

// ---------------------------------------------------------------------------
// Rerandomization

#[test]
fn acceptance_regions_nest_as_threshold_grows() {
    let mut r = rng(114);
    let x = random_covariates(8, 2, &mut r);
    let omega = mmdesign::kernels::resolve_omega(&OmegaSpec::InverseCovariance, &x).unwrap();
    let mut distances: Vec<f64> = enumerate_representatives(8)
        .unwrap()
        .iter()
        .map(|w| mahalanobis_distance(w, &x, &omega).unwrap())
        .collect();
    distances.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut previous: Option<Vec<Vec<i8>>> = None;
    for &a in &distances {
        let spec = RerandSpec {
            omega: OmegaSpec::InverseCovariance,
            threshold: RerandThreshold::Explicit(a),
            max_draws: None,
        };
        let design = exact_rerandomization_design(&spec, &x).unwrap();
        let mut support: Vec<Vec<i8>> = design
            .pairs()
            .unwrap()
            .iter()
            .map(|p| p.assignment.signs().to_vec())
            .collect();
        support.sort();
        if let Some(prev) = &previous {
            for w in prev {
                assert!(support.contains(w), "support shrank as the threshold grew");
            }
        }
        previous = Some(support);
    }
    // The loosest threshold accepts everything.
    assert_eq!(previous.unwrap().len(), enumerate_representatives(8).unwrap().len());
}

#[test]
fn rerandomization_never_beats_msod() {
    let mut r = rng(115);
    for _ in 0..2 {
        let x = random_covariates(8, 2, &mut r);
        let gram = linear_gram(&x);
        let msod_risk = msod_exact(&gram).unwrap().solution.lambda_star;
        let omega =
            mmdesign::kernels::resolve_omega(&OmegaSpec::InverseCovariance, &x).unwrap();
        let mut distances: Vec<f64> = enumerate_representatives(8)
            .unwrap()
            .iter()
            .map(|w| mahalanobis_distance(w, &x, &omega).unwrap())
            .collect();
        distances.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for &a in &distances {
            let spec = RerandSpec {
                omega: OmegaSpec::InverseCovariance,
                threshold: RerandThreshold::Explicit(a),
                max_draws: None,
            };
            let design = exact_rerandomization_design(&spec, &x).unwrap();
            let risk = minimax_risk(&design, &gram, 1.0).unwrap().minimax_risk;
            assert!(
                risk >= msod_risk - 1e-9,
                "threshold {a}: rerandomization risk {risk} beat optimized {msod_risk}"
            );
        }
    }
}

#[test]
fn empirical_acceptance_matches_enumerated_fraction() {
    let mut r = rng(116);
    let x = random_covariates(8, 2, &mut r);
    let omega = mmdesign::kernels::resolve_omega(&OmegaSpec::InverseCovariance, &x).unwrap();
    let mut distances: Vec<f64> = enumerate_representatives(8)
        .unwrap()
        .iter()
        .map(|w| mahalanobis_distance(w, &x, &omega).unwrap())
        .collect();
    distances.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let a = distances[distances.len() / 2]; // roughly half accept
    let q = distances.iter().filter(|&&d| d <= a).count() as f64 / distances.len() as f64;

    let cr = Design::complete_randomization(8).unwrap();
    let draws = 4000usize;
    let mut accepted = 0usize;
    for _ in 0..draws {
        let w = cr.sample(&mut r);
        if mahalanobis_distance(&w, &x, &omega).unwrap() <= a {
            accepted += 1;
        }
    }
    let p_hat = accepted as f64 / draws as f64;
    let sigma = (q * (1.0 - q) / draws as f64).sqrt();
    assert!(
        (p_hat - q).abs() <= 3.0 * sigma,
        "empirical acceptance {p_hat} vs enumerated {q} (3 sigma = {})",
        3.0 * sigma
    );
}

// ---------------------------------------------------------------------------
// Randomization tests

#[test]
fn type_i_error_is_at_most_level() {
    let mut r = rng(117);
    let x = random_covariates(8, 2, &mut r);
    let gram = linear_gram(&x);
    let designs = vec![
        ("cr", Design::complete_randomization(8).unwrap()),
        ("icmsod", icmsod(&gram, 0.05, 20).unwrap().design),
        (
            "rerand",
            exact_rerandomization_design(
                &RerandSpec {
                    omega: OmegaSpec::InverseCovariance,
                    threshold: RerandThreshold::TargetAcceptance(0.5),
                    max_draws: None,
                },
                &x,
            )
            .unwrap(),
        ),
    ];
    let experiments = 5000usize;
    for (label, design) in &designs {
        let mut rejections = [0usize; 2]; // alpha = 0.05, 0.1
        for _ in 0..experiments {
            // Sharp null: outcomes do not depend on assignment.
            let y: Vec<f64> = (0..8).map(|_| StandardNormal.sample(&mut r)).collect();
            let w = design.sample(&mut r);
            let p = p_value_exact(design, &w, &y, TestStatistic::AbsMeanDiff)
                .unwrap()
                .p_value;
            if p <= 0.05 {
                rejections[0] += 1;
            }
            if p <= 0.1 {
                rejections[1] += 1;
            }
        }
        for (slot, alpha) in [(0usize, 0.05f64), (1, 0.1)] {
            let rate = rejections[slot] as f64 / experiments as f64;
            let bound = alpha + 3.0 * (alpha * (1.0 - alpha) / experiments as f64).sqrt();
            assert!(
                rate <= bound,
                "{label}: type-I rate {rate} above {bound} at alpha {alpha}"
            );
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn exact_p_value_is_blind_to_assignment_sign(
        seed in any::<u64>(),
        stat_choice in 0usize..3,
    ) {
        let kind = [
            TestStatistic::AbsMeanDiff,
            TestStatistic::AbsTPooled,
            TestStatistic::AbsTWelch,
        ][stat_choice];
        let mut r = rng(seed);
        let design = Design::complete_randomization(8).unwrap();
        let y: Vec<f64> = (0..8).map(|_| StandardNormal.sample(&mut r)).collect();
        let w = design.sample(&mut r);
        let a = p_value_exact(&design, &w, &y, kind).unwrap();
        let b = p_value_exact(&design, &w.flipped(), &y, kind).unwrap();
        prop_assert_eq!(a.p_value.to_bits(), b.p_value.to_bits());
    }
}

#[test]
fn monte_carlo_p_value_is_consistent_with_exact() {
    let mut r = rng(118);
    let design = Design::complete_randomization(8).unwrap();
    let m = 4000u64;
    for case in 0..6 {
        let y: Vec<f64> = (0..8)
            .map(|i| normal(&mut r) + (i as f64) * 0.2)
            .collect();
        let w = design.sample(&mut r);
        let exact = p_value_exact(&design, &w, &y, TestStatistic::AbsMeanDiff).unwrap();
        let mc = p_value_mc(&design, &w, &y, TestStatistic::AbsMeanDiff, m, 500 + case).unwrap();
        let p = exact.p_value;
        let bound = 3.0 * (p * (1.0 - p) / m as f64).sqrt() + 2.0 / m as f64;
        assert!(
            (mc.p_value - p).abs() <= bound,
            "case {case}: MC {} vs exact {p}, bound {bound}",
            mc.p_value
        );
    }
}

#[test]
fn capped_designs_admit_rejection() {
    // With every signed assignment at mass <= alpha/2, some outcomes reject.
    let mut r = rng(119);
    let x = random_covariates(8, 2, &mut r);
    let gram = linear_gram(&x);
    let alpha = 0.05;
    let out = icmsod(&gram, alpha, 20).unwrap();
    let pairs = out.design.pairs().unwrap();
    let extreme = pairs
        .iter()
        .min_by(|a, b| a.probability.partial_cmp(&b.probability).unwrap())
        .unwrap();
    // Outcomes aligned with that assignment make it the unique extreme point
    // of the statistic over the support.
    let y: Vec<f64> = extreme.assignment.signs().iter().map(|&s| s as f64).collect();
    let result =
        p_value_exact(&out.design, &extreme.assignment, &y, TestStatistic::AbsMeanDiff).unwrap();
    assert!(
        result.p_value <= alpha + 1e-12,
        "aligned outcomes give p = {}, expected <= {alpha}",
        result.p_value
    );
}

#[test]
fn single_partition_test_is_degenerate() {
    let mut r = rng(120);
    let w0 = Assignment::new(vec![1, 1, -1, 1, -1, -1, 1, -1]).unwrap();
    let design = Design::single_partition(&w0);
    for _ in 0..5 {
        let y: Vec<f64> = (0..8).map(|_| StandardNormal.sample(&mut r)).collect();
        for kind in [TestStatistic::AbsMeanDiff, TestStatistic::AbsTPooled] {
            let result = p_value_exact(&design, &w0, &y, kind).unwrap();
            assert_eq!(result.p_value, 1.0, "single-partition p must be 1");
        }
    }
}

// ---------------------------------------------------------------------------
// Estimator moments under the outcome model

#[test]
fn estimator_is_unbiased_and_mse_matches_prediction() {
    let mut r = rng(121);
    let n = 8usize;
    let mu: Vec<f64> = (0..n).map(|_| normal(&mut r) * 2.0).collect();
    let tau = 0.7;
    let sd = 0.5;
    let reps = 20_000usize;
    let designs = vec![
        ("cr", Design::complete_randomization(n).unwrap()),
        ("single", Design::single_partition(&Assignment::new(vec![1, -1, 1, -1, 1, -1, 1, -1]).unwrap())),
    ];
    for (label, design) in designs {
        let mut sum = 0.0;
        let mut sum_err_sq = 0.0;
        let mut sum_err_4 = 0.0;
        for _ in 0..reps {
            let w = design.sample(&mut r);
            // Generate both potential outcomes, observe the assigned one.
            let mut est = 0.0;
            let mut sate = 0.0;
            for i in 0..n {
                let eta_plus: f64 = normal(&mut r) * sd;
                let eta_minus: f64 = normal(&mut r) * sd;
                let y_plus = mu[i] / 2.0 + tau / 2.0 + eta_plus;
                let y_minus = mu[i] / 2.0 - tau / 2.0 + eta_minus;
                let y_obs = if w.sign(i) == 1 { y_plus } else { y_minus };
                est += 2.0 * (w.sign(i) as f64) * y_obs / n as f64;
                sate += (y_plus - y_minus) / n as f64;
            }
            let err = est - sate;
            let err_pop = est - tau;
            sum += err;
            sum_err_sq += err_pop * err_pop;
            sum_err_4 += err_pop * err_pop * err_pop * err_pop;
        }
        let mean = sum / reps as f64;
        let mse = sum_err_sq / reps as f64;
        let mse_var = (sum_err_4 / reps as f64 - mse * mse).max(0.0);
        let mse_se = (mse_var / reps as f64).sqrt();

        let predicted = mmdesign::risk::predict_mse(
            &design,
            &mu,
            2.0 * n as f64 * sd * sd,
            2.0 * sd * sd / n as f64,
        )
        .unwrap()
        .total;
        assert!(
            (mse - predicted).abs() <= 4.0 * mse_se.max(1e-12),
            "{label}: empirical MSE {mse} vs predicted {predicted} (4 SE = {})",
            4.0 * mse_se
        );

        // Unbiasedness around the sample effect, by blinding.
        let est_se = (mse / reps as f64).sqrt();
        assert!(
            mean.abs() <= 4.0 * est_se.max(1e-12),
            "{label}: mean error {mean} vs 4 SE {}",
            4.0 * est_se
        );
    }
}
