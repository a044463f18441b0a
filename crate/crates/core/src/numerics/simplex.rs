//! Euclidean projection onto the capped probability simplex
//! `{ w : 0 <= w_i <= cap, sum w_i = 1 }`.

use crate::error::{Error, Result};

/// Slack allowed on the feasibility test `cap * len >= 1`, so that caps like
/// `1/3` with `len = 3` (whose product rounds just below 1) are accepted.
const FEAS_TOL: f64 = 1e-9;

/// Projects `v` onto the capped simplex in Euclidean norm.
///
/// The projection is `w_i = clamp(v_i - tau, 0, cap)` for the unique shift
/// `tau` making the coordinates sum to one; `tau` is found exactly by a
/// sort-based search over the 2·len breakpoints of the piecewise-linear sum,
/// with no iterative tolerance. Runs in O(len log len).
pub fn project_capped_simplex(v: &[f64], cap: f64) -> Result<Vec<f64>> {
    let n = v.len();
    if n == 0 {
        return Err(Error::invalid("cannot project an empty vector"));
    }
    if !(cap > 0.0) {
        return Err(Error::invalid(format!("cap must be positive, got {cap}")));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("vector entries must be finite"));
    }
    let total_cap = cap * n as f64;
    if total_cap < 1.0 - FEAS_TOL {
        return Err(Error::Infeasible(format!(
            "cap {cap} with {n} coordinates bounds the total at {total_cap} < 1"
        )));
    }
    if total_cap <= 1.0 {
        // Within tolerance of the degenerate case: the box has a unique
        // (nearly) feasible point with every coordinate at the cap.
        return Ok(vec![cap; n]);
    }

    let sum_at = |tau: f64| -> f64 { v.iter().map(|&x| (x - tau).clamp(0.0, cap)).sum() };

    // Breakpoints of tau -> sum: each coordinate leaves its cap at v_i - cap
    // and hits zero at v_i. The sum is continuous and nonincreasing in tau.
    let mut bps: Vec<f64> = Vec::with_capacity(2 * n);
    for &x in v {
        bps.push(x - cap);
        bps.push(x);
    }
    bps.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoints"));

    // First breakpoint where the sum has dropped to <= 1. It exists because
    // the sum is 0 at the largest breakpoint; it is not the first breakpoint
    // because the sum there is cap * n > 1.
    let idx = bps.partition_point(|&b| sum_at(b) > 1.0);
    debug_assert!(idx > 0 && idx < bps.len());
    let hi = bps[idx];
    let s_hi = sum_at(hi);
    if s_hi == 1.0 {
        return Ok(v.iter().map(|&x| (x - hi).clamp(0.0, cap)).collect());
    }
    let lo = bps[idx - 1];
    // On the open segment (lo, hi) no coordinate changes regime, so the sum
    // is affine in tau: capped coordinates contribute cap, active ones
    // contribute v_i - tau, dropped ones contribute 0. Solve for tau exactly.
    let mut capped = 0usize;
    let mut active = 0usize;
    let mut active_sum = 0.0;
    for &x in v {
        if x - cap >= hi {
            capped += 1;
        } else if x > lo {
            active += 1;
            active_sum += x;
        }
    }
    debug_assert!(active > 0, "sum cannot cross 1 on a flat segment");
    let tau = (active_sum + capped as f64 * cap - 1.0) / active as f64;
    Ok(v.iter().map(|&x| (x - tau).clamp(0.0, cap)).collect())
}
