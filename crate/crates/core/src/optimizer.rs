//! Design optimization: exhaustive best single partition, ranked candidate
//! pools, and minimization of the worst-case risk over designs supported on a
//! pool — optionally with a per-pair probability cap that preserves the power
//! of randomization tests.
//!
//! The capped problem is solved in reduced form. For a pool `W_1, …, W_T`
//! with Gram matrix `K`, the worst-case risk of the design with pair weights
//! `v` is `lambda_max(K^{1/2} U diag(v) U^T K^{1/2})` with `U = [W_1 … W_T]`,
//! which has the same nonzero spectrum as `H diag(v) H` for
//! `H = (U^T K U)^{1/2}` — a T-by-T problem independent of `n`. Minimizing
//! `lambda_max` over the capped simplex is a semidefinite program in epigraph
//! form; it is solved by a log-det barrier interior-point method, and the
//! returned point is certified a posteriori: evaluating the objective is
//! exact, and every trace-one PSD matrix `Z` yields the rigorous lower bound
//! `min_w Σ_t w_t <h_t, Z h_t>` through `tr(M Z) <= lambda_max(M)`. The
//! solver only reports success when the gap between the two closes.

use crate::designs::{
    enumerate_representatives, pair_count, Assignment, Design, MAX_ENUMERATION_N,
};
use crate::error::{Error, Result};
use crate::kernels::GramMatrix;
use crate::numerics::{eigh, project_capped_simplex, psd_sqrt, solve_linear, SymMatrix};

/// Size guard for ranked pools: full enumeration is cheap up to here.
pub const TOP_POOL_MAX_N: usize = 16;
/// Size guard for the requested pool size.
pub const TOP_POOL_MAX_T: usize = 200;
/// Size guard for the exact optimal design (pool = all C(n, n/2)/2 pairs).
pub const MSOD_MAX_N: usize = 12;

/// Total eigendecomposition-sized operations allowed per solve.
const TOTAL_ITER_CAP: u64 = 50_000;
/// A solution is accepted when its optimality gap is below this times the risk.
const KKT_REL_TOL: f64 = 1e-6;
/// Eigenvalues within this relative distance of the top one are treated as a
/// degenerate eigenspace and their subgradients averaged.
const TIE_REL: f64 = 1e-8;
/// Pool weights below this are dropped from the returned design support.
const TRUNCATE_EPS: f64 = 1e-12;

/// The single balanced partition minimizing `W^T K W`.
#[derive(Debug, Clone)]
pub struct BestAssignment {
    pub assignment: Assignment,
    /// `W^T K W` at the minimizer.
    pub objective: f64,
}

/// Exhaustive minimization of `W^T K W` over balanced assignments.
///
/// Ties are broken toward the lexicographically smallest canonical
/// representative (entries compared as −1 < +1). Guarded by
/// [`MAX_ENUMERATION_N`]; use a ranked pool at larger `n`.
pub fn best_assignment(gram: &GramMatrix) -> Result<BestAssignment> {
    let n = gram.n();
    check_even(n)?;
    if n > MAX_ENUMERATION_N {
        return Err(Error::invalid(format!(
            "exhaustive search is limited to n <= {MAX_ENUMERATION_N}, got {n}; \
             use a ranked candidate pool instead"
        )));
    }
    let mut dfs = Dfs::new(gram.matrix());
    dfs.run();
    Ok(BestAssignment {
        assignment: Assignment::new(dfs.best_w).expect("search yields balanced assignments"),
        objective: dfs.best_obj,
    })
}

/// Depth-first search over canonical balanced assignments (first entry +1),
/// maintaining the partial quadratic form incrementally. Per-depth snapshots
/// of the running sums keep the arithmetic identical no matter how the tree
/// is traversed, so ties are reproducible.
struct Dfs<'a> {
    k: &'a SymMatrix,
    n: usize,
    w: Vec<i8>,
    /// `prefix[d][j] = Σ_{i < d} w_i K_ij` for the current path.
    prefix: Vec<Vec<f64>>,
    /// `partial[d]` = quadratic form of the first `d` entries.
    partial: Vec<f64>,
    best_obj: f64,
    best_w: Vec<i8>,
}

impl<'a> Dfs<'a> {
    fn new(k: &'a SymMatrix) -> Self {
        let n = k.dim();
        Dfs {
            k,
            n,
            w: vec![0; n],
            prefix: vec![vec![0.0; n]; n + 1],
            partial: vec![0.0; n + 1],
            best_obj: f64::INFINITY,
            best_w: vec![0; n],
        }
    }

    fn run(&mut self) {
        self.assign(0, 1);
        self.recurse(1, self.n / 2 - 1, self.n / 2);
    }

    /// Sets `w[depth] = sign` and extends the depth-indexed running sums.
    fn assign(&mut self, depth: usize, sign: i8) {
        let s = sign as f64;
        self.w[depth] = sign;
        self.partial[depth + 1] =
            self.partial[depth] + self.k.get(depth, depth) + 2.0 * s * self.prefix[depth][depth];
        let row = self.k.row(depth);
        let (done, rest) = self.prefix.split_at_mut(depth + 1);
        let cur = &done[depth];
        let next = &mut rest[0];
        for j in 0..self.n {
            next[j] = cur[j] + s * row[j];
        }
    }

    fn recurse(&mut self, depth: usize, plus_left: usize, minus_left: usize) {
        if depth == self.n {
            let obj = self.partial[self.n];
            if obj < self.best_obj {
                self.best_obj = obj;
                self.best_w.copy_from_slice(&self.w);
            }
            return;
        }
        // −1 first: the first completed leaf is the lexicographically
        // smallest, so strict improvement keeps the smallest among ties.
        if minus_left > 0 {
            self.assign(depth, -1);
            self.recurse(depth + 1, plus_left, minus_left - 1);
        }
        if plus_left > 0 {
            self.assign(depth, 1);
            self.recurse(depth + 1, plus_left - 1, minus_left);
        }
    }
}

/// A pool of canonical assignments ranked by `W^T K W`, nondecreasing.
#[derive(Debug, Clone)]
pub struct CandidatePool {
    assignments: Vec<Assignment>,
    objectives: Vec<f64>,
    /// True when the requested size exceeded the number of pairs, so the
    /// pool holds every pair.
    truncated: bool,
}

impl CandidatePool {
    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn assignments(&self) -> &[Assignment] {
        &self.assignments
    }

    /// Ranking objectives `W^T K W`, aligned with [`assignments`](Self::assignments).
    pub fn objectives(&self) -> &[f64] {
        &self.objectives
    }

    pub fn truncated(&self) -> bool {
        self.truncated
    }
}

/// The `t_count` balanced pairs with smallest `W^T K W`, ties broken
/// lexicographically. If fewer pairs exist the whole set is returned with
/// the `truncated` flag set.
pub fn top_assignments(gram: &GramMatrix, t_count: usize) -> Result<CandidatePool> {
    let n = gram.n();
    check_even(n)?;
    if n > TOP_POOL_MAX_N {
        return Err(Error::invalid(format!(
            "ranked pools are limited to n <= {TOP_POOL_MAX_N}, got {n}"
        )));
    }
    if t_count == 0 {
        return Err(Error::invalid("pool size must be at least 1"));
    }
    if t_count > TOP_POOL_MAX_T {
        return Err(Error::invalid(format!(
            "pool size is limited to {TOP_POOL_MAX_T}, got {t_count}"
        )));
    }
    ranked_pool(gram, t_count)
}

/// Shared pool builder; guards are the caller's responsibility.
fn ranked_pool(gram: &GramMatrix, t_count: usize) -> Result<CandidatePool> {
    let reps = enumerate_representatives(gram.n())?;
    let k = gram.matrix();
    let mut scored: Vec<(f64, Assignment)> = reps
        .into_iter()
        .map(|w| (k.quad_form(&w.to_f64()), w))
        .collect();
    scored.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .expect("objectives are finite")
            .then_with(|| a.1.cmp(&b.1))
    });
    let truncated = t_count > scored.len();
    scored.truncate(t_count.min(scored.len()));
    let (objectives, assignments): (Vec<f64>, Vec<Assignment>) = scored.into_iter().unzip();
    Ok(CandidatePool { assignments, objectives, truncated })
}

/// Solution of the capped-simplex risk minimization over a candidate pool.
#[derive(Debug, Clone)]
pub struct CappedSimplexSolution {
    /// Pair weights on the pool, in pool order; sums to 1, each `<= cap`.
    pub weights: Vec<f64>,
    /// Worst-case risk `lambda_max` at the returned weights (radius c = 1).
    pub lambda_star: f64,
    /// Eigendecomposition-sized operations spent across the whole solve.
    pub iterations: u64,
    /// Certified optimality gap: `lambda_star` minus the best rigorous
    /// lower bound found; at most [`KKT_REL_TOL`] times `lambda_star` on
    /// success.
    pub kkt_gap: f64,
}

/// Minimizes `lambda_max(Σ_t v_t K^{1/2} W_t W_t^T K^{1/2})` over pair
/// weights `v` on the capped simplex `{0 <= v <= cap, Σ v = 1}`.
pub fn minimize_lambda_max_capped(
    pool: &CandidatePool,
    gram: &GramMatrix,
    cap: f64,
) -> Result<CappedSimplexSolution> {
    let t = pool.len();
    if t == 0 {
        return Err(Error::invalid("candidate pool is empty"));
    }
    if !(cap > 0.0) || !cap.is_finite() {
        return Err(Error::invalid(format!("cap must be positive, got {cap}")));
    }
    let cap = cap.min(1.0);
    if cap * (t as f64) < 1.0 - 1e-9 {
        return Err(Error::Infeasible(format!(
            "cap {cap} over {t} pairs bounds the total probability at {} < 1; \
             enlarge the pool or relax the cap",
            cap * t as f64
        )));
    }
    for w in pool.assignments() {
        if w.n() != gram.n() {
            return Err(Error::invalid(format!(
                "pool assignment has length {}, Gram matrix is {1}x{1}",
                w.n(),
                gram.n()
            )));
        }
    }

    // Reduced T-by-T problem: G_st = W_s^T K W_t, H = G^{1/2}.
    let k = gram.matrix();
    let kw: Vec<Vec<f64>> = pool
        .assignments()
        .iter()
        .map(|w| k.matvec(&w.to_f64()))
        .collect();
    let g = SymMatrix::from_fn(t, |s, r| pool.assignments()[s].dot(&kw[r]));
    let h = psd_sqrt(&g)?;

    let mut state = Solver {
        h,
        cap,
        t,
        iterations: 0,
        best: None,
        certified: None,
        lower: 0.0,
    };

    // Structured starts. Evaluating each one counts toward the best even if
    // no descent is run from it; in particular the uniform design over the
    // whole pool and the uniform design over every top-m slice are scored,
    // so the solution never trails complete randomization or any
    // acceptance-region rerandomization supported on this pool.
    let uniform = vec![1.0 / t as f64; t];
    let uniform = project_capped_simplex(&uniform, cap)?;
    state.probe(&uniform);

    // When the cap times the pool size equals one the capped simplex is a
    // single point, so the uniform weights are trivially optimal.
    if cap * t as f64 - 1.0 <= 1e-9 {
        let it = state.best.clone().expect("the uniform start was probed");
        if it.f.is_finite() {
            return Ok(state.solution_from(Iterate { gap: 0.0, ..it }));
        }
    }

    let mut m = 1usize;
    while m <= t {
        let mut v = vec![0.0; t];
        for slot in v.iter_mut().take(m) {
            *slot = 1.0 / m as f64;
        }
        let v = project_capped_simplex(&v, cap)?;
        state.probe(&v);
        // Scan every small m, then geometrically.
        m = if m < 48 { m + 1 } else { (m * 3 / 2).max(m + 1) };
    }
    if let Some(done) = state.take_if_done() {
        return Ok(done);
    }

    // Interior-point solve of the epigraph form: minimize s subject to
    // `s I - M(v)` positive definite and `v` strictly inside the capped
    // simplex, following the central path of the log-det plus log-box
    // barrier. The Newton systems are dense of side T + 2, so a solve costs
    // a few reduced eigendecompositions and runs in milliseconds at desk
    // scale. The result is then certified independently: the probe at the
    // returned weights supplies the primal value, and the normalized inverse
    // slack matrix approaches the optimal dual density `Z`, whose value
    // `min_w <c(Z), w>` is a rigorous lower bound wherever it is evaluated
    // (`tr(M(w) Z) <= lambda_max(M(w))` for any trace-one PSD `Z`). A short
    // supergradient ascent on `Z` mops up the remaining certificate gap; by
    // minimax duality the bound meets the optimum, including at optima whose
    // top eigenvalue has multiplicity, where no single eigenvector closes
    // the gap.
    if let Ok((v_center, p_slack)) = state.barrier_solve() {
        let cleaned = clean_weights(&v_center, cap);
        state.probe(&v_center);
        if let Ok(ref w) = cleaned {
            state.probe(w);
        }
        let trace: f64 = (0..t).map(|i| p_slack.get(i, i)).sum();
        if trace.is_finite() && trace > 0.0 {
            let mut z = p_slack;
            z.scale(1.0 / trace);
            state.dual_value(&z);
            let polish_cap = (state.iterations + 2000).min(TOTAL_ITER_CAP);
            while !state.done() && state.iterations < polish_cap {
                state.dual_ascent_step(&mut z, 1.0);
            }
        }
    }

    state.finish()
}

/// Drops negligible weights and reprojects, so reported supports are not
/// littered with barrier dust.
fn clean_weights(v: &[f64], cap: f64) -> Result<Vec<f64>> {
    let kept: Vec<f64> = v.iter().map(|&x| if x < 1e-9 { 0.0 } else { x }).collect();
    project_capped_simplex(&kept, cap)
}

#[derive(Debug, Clone)]
struct Iterate {
    v: Vec<f64>,
    f: f64,
    gap: f64,
}

struct Solver {
    h: SymMatrix,
    cap: f64,
    t: usize,
    iterations: u64,
    /// Smallest objective seen anywhere.
    best: Option<Iterate>,
    /// Smallest objective among gap-certified iterates.
    certified: Option<Iterate>,
    /// Best rigorous lower bound on the optimal objective. Every probe's
    /// linearization and every dual evaluation produces one; `best` is
    /// certified optimal once the two meet.
    lower: f64,
}

/// `H diag(v) H`: the reduced matrix whose top eigenvalue is the risk at
/// pair weights `v`.
fn reduced_from(h: &SymMatrix, v: &[f64]) -> SymMatrix {
    let t = h.dim();
    SymMatrix::from_fn(t, |i, j| {
        let hi = h.row(i);
        let hj = h.row(j);
        let mut acc = 0.0;
        for k in 0..t {
            acc += hi[k] * v[k] * hj[k];
        }
        acc
    })
}

/// Barrier slack `s I - H diag(v) H`.
fn slack_matrix(h: &SymMatrix, v: &[f64], s: f64) -> SymMatrix {
    let mut m = reduced_from(h, v);
    m.scale(-1.0);
    m.add_diag(s);
    m
}

/// Log-det plus log-box barrier at slack eigenvalues `lams` and weights `v`.
fn barrier_value(lams: &[f64], v: &[f64], cap: f64) -> f64 {
    let mut acc = 0.0;
    for &l in lams {
        acc -= l.ln();
    }
    for &x in v {
        acc -= x.ln() + (cap - x).ln();
    }
    acc
}

impl Solver {
    fn reduced_matrix(&self, v: &[f64]) -> SymMatrix {
        reduced_from(&self.h, v)
    }

    /// Objective, averaged subgradient, and duality gap at `v`.
    fn probe(&mut self, v: &[f64]) -> (f64, Vec<f64>, f64) {
        self.iterations += 1;
        let t = self.t;
        let m = self.reduced_matrix(v);
        let decomp = match eigh(&m) {
            Ok(d) => d,
            Err(_) => {
                // Treat an eigensolver failure on this iterate as a dead end.
                return (f64::INFINITY, vec![0.0; t], f64::INFINITY);
            }
        };
        let lambda = decomp.values[t - 1].max(0.0);
        let tie_tol = (TIE_REL * lambda).max(1e-12);
        let mut grad = vec![0.0; t];
        let mut ties = 0usize;
        for k in (0..t).rev() {
            if lambda - decomp.values[k].max(0.0) > tie_tol {
                break;
            }
            ties += 1;
            let hu = self.h.matvec(&decomp.vectors[k]);
            for (g, x) in grad.iter_mut().zip(&hu) {
                *g += x * x;
            }
        }
        if ties > 1 {
            for g in &mut grad {
                *g /= ties as f64;
            }
        }
        let inner: f64 = grad.iter().zip(v).map(|(a, b)| a * b).sum();
        let lmin = linear_min_capped(&grad, self.cap);
        let gap = (inner - lmin).max(0.0);
        // `grad` averages Rayleigh-quotient profiles of unit vectors, so
        // `<grad, w> <= lambda_max(M(w))` for every feasible w: the linear
        // minimum bounds the optimum from below no matter where we probed.
        if lmin.is_finite() && lmin > self.lower {
            self.lower = lmin;
        }

        let it = Iterate { v: v.to_vec(), f: lambda, gap };
        if self.best.as_ref().is_none_or(|b| it.f < b.f) {
            self.best = Some(it.clone());
        }
        if gap <= KKT_REL_TOL * lambda
            && self.certified.as_ref().is_none_or(|c| it.f < c.f)
        {
            self.certified = Some(it);
        }
        (lambda, grad, gap)
    }

    /// Dual bound at a trace-one PSD `z`, with the minimizing weights.
    ///
    /// For any such `Z`, `tr(M(w) Z) <= lambda_max(M(w))`, so the value
    /// `phi(Z) = min_w <c(Z), w>` with `c_t = h_t^T Z h_t` is a rigorous
    /// lower bound on the optimum; it is folded into the running bound.
    fn dual_value(&mut self, z: &SymMatrix) -> (f64, Vec<f64>) {
        self.iterations += 1;
        let t = self.t;
        let mut c = vec![0.0; t];
        for (tt, ct) in c.iter_mut().enumerate() {
            let ht = self.h.row(tt);
            let zh = z.matvec(ht);
            *ct = ht.iter().zip(&zh).map(|(a, b)| a * b).sum();
        }
        let (phi, w_star) = linear_argmin_capped(&c, self.cap);
        if phi.is_finite() && phi > self.lower {
            self.lower = phi;
        }
        (phi, w_star)
    }

    /// One projected supergradient ascent step on the dual iterate `z`. The
    /// dual value is concave with supergradient `M(w*)` at the minimizing
    /// weights; a Polyak step toward the primal best followed by projection
    /// back onto the trace-one PSD cone drives the bound up to the optimum.
    fn dual_ascent_step(&mut self, z: &mut SymMatrix, damp: f64) {
        let (phi, w_star) = self.dual_value(z);
        let ub = self.best.as_ref().map_or(f64::INFINITY, |b| b.f);
        if !ub.is_finite() || !phi.is_finite() {
            return;
        }
        let g = self.reduced_matrix(&w_star);
        let norm2 = g.frob_norm().powi(2);
        if norm2 < 1e-300 {
            return;
        }
        let step = damp * ((ub - phi) / norm2).max(0.0);
        if step <= 0.0 {
            return;
        }
        z.add_scaled(step, &g);
        if let Ok(p) = project_density(z) {
            *z = p;
        }
    }

    /// Follows the central path of the barrier formulation to the optimum.
    /// Returns the centered weights and the inverse slack matrix there (in
    /// internally rescaled units), whose trace normalization approximates the
    /// optimal dual density.
    fn barrier_solve(&mut self) -> Result<(Vec<f64>, SymMatrix)> {
        let t = self.t;
        // Rescale so the objective is order one regardless of kernel units.
        let gamma = (0..t)
            .map(|i| self.h.row(i).iter().map(|x| x * x).sum::<f64>())
            .fold(0.0f64, f64::max);
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::NonConvergence("degenerate reduced problem".into()));
        }
        let mut hs = self.h.clone();
        hs.scale(1.0 / gamma.sqrt());

        let mut v = vec![1.0 / t as f64; t];
        let lam0 = eigh(&reduced_from(&hs, &v))?.values[t - 1].max(0.0);
        let mut s = lam0 + (0.1 * lam0).max(1e-3);
        // Barrier parameter: T from the log-det cone plus 2T from the boxes.
        let theta = 3.0 * t as f64;
        let mut t_b = 1.0f64;
        let mut p_last = SymMatrix::identity(t);
        for _outer in 0..64 {
            p_last = self.center(&hs, &mut v, &mut s, t_b);
            // Rigorous progress check at this center: the probe updates the
            // primal incumbent, the normalized inverse slack is a valid dual
            // density wherever the path has wandered, and their gap decides
            // how deep the path needs to go. This stops exactly when the
            // answer is certified instead of trusting a parameter schedule.
            self.probe(&v);
            let trace: f64 = (0..t).map(|i| p_last.get(i, i)).sum();
            if trace.is_finite() && trace > 0.0 {
                let mut z = p_last.clone();
                z.scale(1.0 / trace);
                self.dual_value(&z);
            }
            if self.done()
                || self.iterations >= TOTAL_ITER_CAP
                || theta / t_b <= 1e-12 * s.max(1e-12)
            {
                break;
            }
            t_b *= 10.0;
        }
        Ok((v, p_last))
    }

    /// Newton iterations on the barrier objective at fixed path parameter,
    /// staying strictly feasible. Numerical trouble (deep along the path the
    /// Newton systems become extremely ill-conditioned) ends the centering
    /// quietly rather than failing the solve: every center is checked by
    /// rigorous certificates upstream, so a short centering only means the
    /// path stops refining. Returns the inverse slack at the final iterate.
    fn center(&mut self, hs: &SymMatrix, v: &mut Vec<f64>, s: &mut f64, t_b: f64) -> SymMatrix {
        let t = self.t;
        let cap = self.cap;
        let mut p_inv = SymMatrix::identity(t);
        for _newton in 0..50 {
            self.iterations += 1;
            let decomp = match eigh(&slack_matrix(hs, v, *s)) {
                Ok(d) if d.values[0] > 0.0 => d,
                _ => break,
            };
            let p = SymMatrix::from_fn(t, |i, j| {
                (0..t)
                    .map(|k| decomp.vectors[k][i] * decomp.vectors[k][j] / decomp.values[k])
                    .sum()
            });
            // Contractions driving the gradient and Hessian: C = Hs^T P Hs,
            // d_t = |P h_t|^2, and the traces of P and P^2.
            let pw: Vec<Vec<f64>> = (0..t).map(|i| p.matvec(hs.row(i))).collect();
            let cmat = SymMatrix::from_fn(t, |a, b| {
                hs.row(a).iter().zip(&pw[b]).map(|(x, y)| x * y).sum()
            });
            let d: Vec<f64> = pw.iter().map(|w| w.iter().map(|x| x * x).sum()).collect();
            let tr_p: f64 = decomp.values.iter().map(|&l| 1.0 / l).sum();
            let tr_p2: f64 = decomp.values.iter().map(|&l| 1.0 / (l * l)).sum();
            p_inv = p;

            // Gradient of `t_b * s + barrier` in (v, s).
            let mut g = vec![0.0; t + 1];
            for i in 0..t {
                g[i] = cmat.get(i, i) - 1.0 / v[i] + 1.0 / (cap - v[i]);
            }
            g[t] = t_b - tr_p;

            // Newton KKT system: the Hessian (elementwise square of C for
            // the log-det block, box terms on the diagonal) bordered by the
            // simplex equality normal. The blocks span many orders of
            // magnitude near the boundary, so the system is symmetrically
            // equilibrated to unit diagonal before elimination; `|C_ij|^2 <=
            // C_ii C_jj` keeps the scaled entries bounded.
            let dim = t + 2;
            let mut kkt = vec![vec![0.0; dim]; dim];
            for i in 0..t {
                for j in 0..t {
                    let c = cmat.get(i, j);
                    kkt[i][j] = c * c;
                }
                kkt[i][i] += 1.0 / (v[i] * v[i]) + 1.0 / ((cap - v[i]) * (cap - v[i]));
                kkt[i][t] = -d[i];
                kkt[t][i] = -d[i];
                kkt[i][t + 1] = 1.0;
                kkt[t + 1][i] = 1.0;
            }
            kkt[t][t] = tr_p2;
            let mut scale = vec![1.0; dim];
            for (i, sc) in scale.iter_mut().enumerate() {
                let di = kkt[i][i].abs();
                if di.is_finite() && di > 0.0 {
                    *sc = 1.0 / di.sqrt();
                }
            }
            for i in 0..dim {
                for j in 0..dim {
                    kkt[i][j] *= scale[i] * scale[j];
                }
            }
            let mut rhs = vec![0.0; dim];
            for i in 0..=t {
                rhs[i] = -g[i] * scale[i];
            }
            let sol = match solve_linear(kkt, rhs) {
                Ok(sol) => sol,
                Err(_) => break,
            };
            let dx: Vec<f64> = sol[..t + 1]
                .iter()
                .zip(&scale)
                .map(|(x, sc)| x * sc)
                .collect();
            let gdx: f64 = g.iter().zip(&dx).map(|(a, b)| a * b).sum();
            if !gdx.is_finite() || -gdx <= 1e-10 {
                break; // centered (or the direction is numerically spent)
            }

            // Backtrack to a strictly feasible point with sufficient
            // decrease. The comparison works on the increment, not the full
            // objective: `t_b * s` can be ten orders above the decrease, so
            // evaluating the objective twice and subtracting would lose it.
            let barrier0 = barrier_value(&decomp.values, v, cap);
            let mut alpha = 1.0f64;
            let mut accepted = false;
            for _ in 0..60 {
                let vt: Vec<f64> = v.iter().zip(&dx).map(|(x, step)| x + alpha * step).collect();
                let st = *s + alpha * dx[t];
                if vt.iter().all(|&x| x > 0.0 && x < cap) {
                    if let Ok(dt) = eigh(&slack_matrix(hs, &vt, st)) {
                        if dt.values[0] > 0.0 {
                            let delta = t_b * alpha * dx[t]
                                + (barrier_value(&dt.values, &vt, cap) - barrier0);
                            if delta <= 0.01 * alpha * gdx {
                                *v = vt;
                                *s = st;
                                accepted = true;
                                break;
                            }
                        }
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        p_inv
    }

    /// True when some iterate is proved optimal: either a gap-certified
    /// iterate matches the incumbent, or the incumbent itself sits on the
    /// global lower bound.
    fn done(&self) -> bool {
        match (&self.certified, &self.best) {
            (Some(c), Some(b)) if c.f <= b.f + 1e-12 * b.f.abs().max(1.0) => true,
            (_, Some(b)) => b.f - self.lower <= KKT_REL_TOL * b.f,
            _ => false,
        }
    }

    fn take_if_done(&mut self) -> Option<CappedSimplexSolution> {
        if !self.done() {
            return None;
        }
        let matched_certificate = match (&self.certified, &self.best) {
            (Some(c), Some(b)) => c.f <= b.f + 1e-12 * b.f.abs().max(1.0),
            _ => false,
        };
        if matched_certificate {
            let c = self.certified.clone().expect("checked above");
            return Some(self.solution_from(c));
        }
        let mut b = self.best.clone().expect("done implies an iterate");
        b.gap = b.gap.min((b.f - self.lower).max(0.0));
        Some(self.solution_from(b))
    }

    fn finish(mut self) -> Result<CappedSimplexSolution> {
        if let Some(done) = self.take_if_done() {
            return Ok(done);
        }
        let best = self
            .best
            .clone()
            .ok_or_else(|| Error::NonConvergence("no iterate was ever evaluated".into()))?;
        if best.gap <= KKT_REL_TOL * best.f {
            return Ok(self.solution_from(best));
        }
        let gap = best.gap.min((best.f - self.lower).max(0.0));
        Err(Error::NonConvergence(format!(
            "risk {l:e} reached but optimality gap {g:e} exceeds {tol:e} after {it} iterations",
            l = best.f,
            g = gap,
            tol = KKT_REL_TOL * best.f,
            it = self.iterations
        )))
    }

    fn solution_from(&self, it: Iterate) -> CappedSimplexSolution {
        CappedSimplexSolution {
            weights: it.v,
            lambda_star: it.f,
            iterations: self.iterations,
            kkt_gap: it.gap,
        }
    }
}

/// Minimum of `<g, w>` over the capped simplex: fill the cap into the
/// smallest coordinates of `g` until total mass 1.
fn linear_min_capped(g: &[f64], cap: f64) -> f64 {
    linear_argmin_capped(g, cap).0
}

/// As [`linear_min_capped`], also returning a minimizing weight vector.
fn linear_argmin_capped(g: &[f64], cap: f64) -> (f64, Vec<f64>) {
    let mut order: Vec<usize> = (0..g.len()).collect();
    order.sort_by(|&a, &b| g[a].partial_cmp(&g[b]).expect("finite subgradient"));
    let mut remaining = 1.0;
    let mut acc = 0.0;
    let mut w = vec![0.0; g.len()];
    for idx in order {
        let take = cap.min(remaining);
        acc += take * g[idx];
        w[idx] = take;
        remaining -= take;
        if remaining <= 0.0 {
            break;
        }
    }
    (acc, w)
}

/// Euclidean projection onto the trace-one PSD cone slice (density
/// matrices): eigendecompose and project the spectrum onto the simplex.
fn project_density(m: &SymMatrix) -> Result<SymMatrix> {
    let decomp = eigh(m)?;
    let spectrum = project_capped_simplex(&decomp.values, 1.0)?;
    let dim = m.dim();
    Ok(SymMatrix::from_fn(dim, |i, j| {
        (0..dim)
            .map(|k| spectrum[k] * decomp.vectors[k][i] * decomp.vectors[k][j])
            .sum()
    }))
}

/// An optimized design together with its solver diagnostics.
#[derive(Debug, Clone)]
pub struct OptimizedDesign {
    pub design: Design,
    pub solution: CappedSimplexSolution,
    /// True when the candidate pool was the whole assignment space but the
    /// requested size exceeded it.
    pub pool_truncated: bool,
}

/// Exact minimax design: minimizes worst-case risk over all blinded designs,
/// using every balanced pair as the support. Guarded by [`MSOD_MAX_N`].
pub fn msod_exact(gram: &GramMatrix) -> Result<OptimizedDesign> {
    let n = gram.n();
    check_even(n)?;
    if n > MSOD_MAX_N {
        return Err(Error::invalid(format!(
            "the exact optimal design enumerates all pairs and is limited to \
             n <= {MSOD_MAX_N}, got {n}; use the inference-constrained variant \
             with a pool instead"
        )));
    }
    let t = pair_count(n) as usize;
    let pool = ranked_pool(gram, t)?;
    let solution = minimize_lambda_max_capped(&pool, gram, 1.0)?;
    let design = design_from_weights(&pool, &solution.weights, 1.0)?;
    Ok(OptimizedDesign { design, solution, pool_truncated: false })
}

/// Checks that capping each of `t_count` pair probabilities at `alpha`
/// still lets them sum to one; the capped design problem is empty otherwise.
pub fn check_cap_feasible(alpha: f64, t_count: usize) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(format!(
            "test level alpha must lie in (0, 1], got {alpha}"
        )));
    }
    if alpha * (t_count as f64) < 1.0 - 1e-9 {
        return Err(Error::Infeasible(format!(
            "level {alpha} with a pool of {t_count} pairs cannot carry total \
             probability 1; the pool must hold at least 1/alpha pairs"
        )));
    }
    Ok(())
}

/// Inference-constrained minimax design: support on the `t_count` best-ranked
/// pairs, each pair's probability capped at `alpha` so a level-`alpha`
/// randomization test retains power. Requires `alpha * t_count >= 1`.
pub fn icmsod(gram: &GramMatrix, alpha: f64, t_count: usize) -> Result<OptimizedDesign> {
    check_cap_feasible(alpha, t_count)?;
    let pool = top_assignments(gram, t_count)?;
    let solution = minimize_lambda_max_capped(&pool, gram, alpha)?;
    let design = design_from_weights(&pool, &solution.weights, alpha)?;
    Ok(OptimizedDesign { design, solution, pool_truncated: pool.truncated() })
}

/// Builds the output design: drops negligible weights (when the remainder
/// can still carry mass 1 under the cap) and re-projects so the kept weights
/// are exactly feasible.
fn design_from_weights(pool: &CandidatePool, weights: &[f64], cap: f64) -> Result<Design> {
    let kept: Vec<usize> = (0..weights.len())
        .filter(|&i| weights[i] >= TRUNCATE_EPS)
        .collect();
    let feasible_after_drop = cap * kept.len() as f64 >= 1.0 - 1e-9;
    let (idx, w): (Vec<usize>, Vec<f64>) = if feasible_after_drop && kept.len() < weights.len() {
        let sub: Vec<f64> = kept.iter().map(|&i| weights[i]).collect();
        let re = project_capped_simplex(&sub, cap)?;
        (kept, re)
    } else {
        ((0..weights.len()).collect(), weights.to_vec())
    };
    Design::from_support(
        idx.into_iter()
            .zip(w)
            .map(|(i, p)| (pool.assignments()[i].clone(), p)),
    )
}

fn check_even(n: usize) -> Result<()> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::invalid(format!(
            "sample size must be even and at least 2, got {n}"
        )));
    }
    Ok(())
}
