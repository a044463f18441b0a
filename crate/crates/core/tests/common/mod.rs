//! Helpers shared by the integration suites: seeded random problem
//! generators and slow-but-independent oracles to check fast paths against.
#![allow(dead_code)] // each test target compiles its own copy
#![allow(clippy::needless_range_loop)] // oracle loops follow the textbook indexing

use mmdesign::designs::Design;
use mmdesign::kernels::{build_gram, CovariateMatrix, GramMatrix, KernelKind, KernelSpec, OmegaSpec};
use mmdesign::numerics::SymMatrix;
use mmdesign::optimizer::CandidatePool;
use mmdesign::risk::minimax_risk;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn random_symmetric(dim: usize, rng: &mut impl Rng) -> SymMatrix {
    let entries: Vec<Vec<f64>> = (0..dim)
        .map(|_| (0..dim).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    SymMatrix::from_fn(dim, |i, j| 0.5 * (entries[i][j] + entries[j][i]))
}

/// Random PSD matrix `A^T A / dim` with standard normal `A`.
pub fn random_psd(dim: usize, rng: &mut impl Rng) -> SymMatrix {
    let a: Vec<Vec<f64>> = (0..dim)
        .map(|_| (0..dim).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    SymMatrix::from_fn(dim, |i, j| {
        (0..dim).map(|k| a[k][i] * a[k][j]).sum::<f64>() / dim as f64
    })
}

pub fn random_covariates(n: usize, d: usize, rng: &mut impl Rng) -> CovariateMatrix {
    let data: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    let names = (1..=d).map(|j| format!("x{j}")).collect();
    CovariateMatrix::new(data, names).unwrap()
}

/// Linear kernel with inverse-covariance weighting, the default structured
/// problem used across the suites.
pub fn linear_gram(x: &CovariateMatrix) -> GramMatrix {
    let spec = KernelSpec::new(KernelKind::Linear).with_omega(OmegaSpec::InverseCovariance);
    build_gram(&spec, x).unwrap()
}

/// Cyclic Jacobi eigenvalues, ascending. Deliberately a different algorithm
/// family from the library's Householder + QL path so the two can serve as
/// mutual checks.
pub fn jacobi_eigenvalues(m: &SymMatrix) -> Vec<f64> {
    let n = m.dim();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| m.row(i).to_vec()).collect();
    let scale = m.max_abs().max(1.0);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[i][j] * a[i][j];
            }
        }
        if off.sqrt() <= 1e-14 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() <= 1e-300 {
                    continue;
                }
                // Rotation angle from the standard two-by-two reduction.
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut values: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    values.sort_by(|x, y| x.partial_cmp(y).unwrap());
    values
}

/// Every weight vector on the `t`-simplex whose entries are multiples of
/// `1/steps`, optionally filtered by a per-entry cap.
pub fn simplex_grid(t: usize, steps: usize, cap: f64) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut current = vec![0usize; t];
    fn recurse(
        current: &mut Vec<usize>,
        pos: usize,
        remaining: usize,
        steps: usize,
        cap: f64,
        out: &mut Vec<Vec<f64>>,
    ) {
        if pos + 1 == current.len() {
            current[pos] = remaining;
            if remaining as f64 / steps as f64 <= cap + 1e-12 {
                out.push(current.iter().map(|&k| k as f64 / steps as f64).collect());
            }
            return;
        }
        let max_here = remaining.min((cap * steps as f64 + 1e-9).floor() as usize);
        for k in 0..=max_here {
            current[pos] = k;
            recurse(current, pos + 1, remaining - k, steps, cap, out);
        }
    }
    recurse(&mut current, 0, steps, steps, cap, &mut out);
    out
}

/// Brute-force minimum of the worst-case risk over the weight grid for a
/// fixed candidate pool: evaluates every grid point as an explicit design.
pub fn grid_min_risk(pool: &CandidatePool, gram: &GramMatrix, steps: usize, cap: f64) -> f64 {
    let mut best = f64::INFINITY;
    for weights in simplex_grid(pool.len(), steps, cap) {
        let support = pool
            .assignments()
            .iter()
            .zip(&weights)
            .filter(|(_, &p)| p > 0.0)
            .map(|(w, &p)| (w.clone(), p));
        let design = Design::from_support(support).unwrap();
        let risk = minimax_risk(&design, gram, 1.0).unwrap().minimax_risk;
        if risk < best {
            best = risk;
        }
    }
    best
}
