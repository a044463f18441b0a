//! Balanced assignments and randomized designs over them.
//!
//! An assignment splits `n` units into equal treatment (+1) and control (−1)
//! arms. A design is a probability distribution over assignments that is
//! blinded — every assignment carries the same probability as its sign flip —
//! so we store one canonical representative per `{W, −W}` pair together with
//! the pair's total probability. Complete randomization at large `n` is kept
//! implicit rather than materialized.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::jsonfmt::f64_repr;
use crate::numerics::SymMatrix;

/// Largest `n` for which the full set of balanced assignments may be
/// enumerated (C(28, 14) ≈ 4.0e7 half-pairs).
pub const MAX_ENUMERATION_N: usize = 28;

/// A balanced ±1 assignment vector: even length, equal numbers of +1 and −1.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Assignment {
    w: Vec<i8>,
}

impl Assignment {
    pub fn new(w: Vec<i8>) -> Result<Self> {
        let n = w.len();
        if n < 2 || n % 2 != 0 {
            return Err(Error::invalid(format!(
                "assignment length must be even and at least 2, got {n}"
            )));
        }
        let mut plus = 0usize;
        for (i, &s) in w.iter().enumerate() {
            match s {
                1 => plus += 1,
                -1 => {}
                other => {
                    return Err(Error::invalid(format!(
                        "assignment entry {i} is {other}, expected +1 or -1"
                    )))
                }
            }
        }
        if plus != n / 2 {
            return Err(Error::invalid(format!(
                "assignment has {plus} treated units out of {n}; arms must be equal"
            )));
        }
        Ok(Assignment { w })
    }

    /// Parses entries given as arbitrary integers (e.g. from JSON).
    pub fn from_i64(values: &[i64]) -> Result<Self> {
        let w = values
            .iter()
            .map(|&v| {
                i8::try_from(v)
                    .map_err(|_| Error::invalid(format!("assignment entry {v} is not ±1")))
            })
            .collect::<Result<Vec<i8>>>()?;
        Assignment::new(w)
    }

    pub fn n(&self) -> usize {
        self.w.len()
    }

    pub fn signs(&self) -> &[i8] {
        &self.w
    }

    #[inline]
    pub fn sign(&self, i: usize) -> i8 {
        self.w[i]
    }

    pub fn flipped(&self) -> Assignment {
        Assignment { w: self.w.iter().map(|s| -s).collect() }
    }

    /// The member of `{W, −W}` whose first entry is +1.
    pub fn canonical(&self) -> Assignment {
        if self.w[0] == 1 {
            self.clone()
        } else {
            self.flipped()
        }
    }

    pub fn is_canonical(&self) -> bool {
        self.w[0] == 1
    }

    /// `Σ_i w_i v_i`.
    pub fn dot(&self, v: &[f64]) -> f64 {
        assert_eq!(v.len(), self.w.len());
        self.w.iter().zip(v).map(|(&s, &x)| if s == 1 { x } else { -x }).sum()
    }

    /// Inner product with another assignment (an integer in `[-n, n]`).
    pub fn dot_assignment(&self, other: &Assignment) -> i64 {
        assert_eq!(self.n(), other.n());
        self.w
            .iter()
            .zip(&other.w)
            .map(|(&a, &b)| (a as i64) * (b as i64))
            .sum()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.w.iter().map(|&s| s as f64).collect()
    }
}

/// One `{W, −W}` pair inside a design: the canonical representative and the
/// pair's total probability.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignPair {
    pub assignment: Assignment,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq)]
enum Repr {
    Explicit(Vec<DesignPair>),
    /// Uniform over all balanced assignments, without materializing them.
    ImplicitCr,
}

/// A blinded randomized design over balanced assignments.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    n: usize,
    repr: Repr,
}

/// Sum of `C(n-1, k)` over the first-position-fixed combinations, i.e. the
/// number of `{W, −W}` pairs: `C(n, n/2) / 2`. Exact in f64 for `n <= 28`,
/// a close approximation beyond.
pub fn pair_count(n: usize) -> f64 {
    let mut acc = 1.0f64;
    for k in 1..=(n / 2) {
        acc *= (n / 2 + k) as f64;
        acc /= k as f64;
    }
    acc / 2.0
}

impl Design {
    /// Complete randomization: uniform over every balanced assignment.
    /// Materialized explicitly for `n <=` [`MAX_ENUMERATION_N`], implicit
    /// beyond that.
    pub fn complete_randomization(n: usize) -> Result<Design> {
        check_even(n)?;
        if n <= MAX_ENUMERATION_N {
            let reps = enumerate_representatives(n)?;
            let p = 1.0 / reps.len() as f64;
            let pairs = reps
                .into_iter()
                .map(|assignment| DesignPair { assignment, probability: p })
                .collect();
            Ok(Design { n, repr: Repr::Explicit(pairs) })
        } else {
            Ok(Design { n, repr: Repr::ImplicitCr })
        }
    }

    /// The blinded design concentrated on a single partition `{w0, -w0}`.
    pub fn single_partition(w0: &Assignment) -> Design {
        Design {
            n: w0.n(),
            repr: Repr::Explicit(vec![DesignPair {
                assignment: w0.canonical(),
                probability: 1.0,
            }]),
        }
    }

    /// Builds a design from weighted assignments: canonicalizes, merges
    /// duplicates, drops zero-probability pairs, and normalizes the total
    /// probability to one.
    pub fn from_support(support: impl IntoIterator<Item = (Assignment, f64)>) -> Result<Design> {
        let mut merged: BTreeMap<Assignment, f64> = BTreeMap::new();
        let mut n = None;
        for (assignment, p) in support {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::invalid(format!(
                    "assignment probability must be finite and nonnegative, got {p}"
                )));
            }
            match n {
                None => n = Some(assignment.n()),
                Some(n) if n != assignment.n() => {
                    return Err(Error::invalid(format!(
                        "mixed assignment lengths {n} and {}",
                        assignment.n()
                    )))
                }
                _ => {}
            }
            *merged.entry(assignment.canonical()).or_insert(0.0) += p;
        }
        let n = n.ok_or_else(|| Error::invalid("design support is empty"))?;
        let total: f64 = merged.values().sum();
        if !(total > 0.0) {
            return Err(Error::invalid("design support carries no probability mass"));
        }
        let pairs: Vec<DesignPair> = merged
            .into_iter()
            .filter(|&(_, p)| p > 0.0)
            .map(|(assignment, p)| DesignPair { assignment, probability: p / total })
            .collect();
        Ok(Design { n, repr: Repr::Explicit(pairs) })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_implicit_cr(&self) -> bool {
        matches!(self.repr, Repr::ImplicitCr)
    }

    /// The explicit support, or `None` for implicit complete randomization.
    pub fn pairs(&self) -> Option<&[DesignPair]> {
        match &self.repr {
            Repr::Explicit(pairs) => Some(pairs),
            Repr::ImplicitCr => None,
        }
    }

    /// Largest probability carried by a single `{W, −W}` pair. Each signed
    /// assignment gets half of this.
    pub fn max_pair_probability(&self) -> f64 {
        match &self.repr {
            Repr::Explicit(pairs) => {
                pairs.iter().fold(0.0, |m, p| m.max(p.probability))
            }
            Repr::ImplicitCr => 1.0 / pair_count(self.n),
        }
    }

    /// Whether the design can support a randomization test at level `alpha`:
    /// no signed assignment may carry more than `alpha / 2` probability.
    pub fn supports_test_at(&self, alpha: f64) -> bool {
        self.max_pair_probability() / 2.0 <= alpha / 2.0 + 1e-12
    }

    /// The mixture second-moment matrix `Q = Σ_pairs p · W W^T`, with unit
    /// diagonal by construction.
    pub fn q_matrix(&self) -> SymMatrix {
        let n = self.n;
        let mut q = match &self.repr {
            Repr::Explicit(pairs) => {
                let mut q = SymMatrix::zeros(n);
                for i in 0..n {
                    for j in (i + 1)..n {
                        let mut acc = 0.0;
                        for pair in pairs {
                            let prod =
                                (pair.assignment.sign(i) * pair.assignment.sign(j)) as f64;
                            acc += pair.probability * prod;
                        }
                        q.set(i, j, acc);
                    }
                }
                q
            }
            // Uniform over balanced assignments: off-diagonal −1/(n−1).
            Repr::ImplicitCr => {
                SymMatrix::from_fn(n, |i, j| if i == j { 0.0 } else { -1.0 / (n as f64 - 1.0) })
            }
        };
        for i in 0..n {
            q.set(i, i, 1.0);
        }
        q
    }

    /// Draws one signed assignment.
    pub fn sample(&self, rng: &mut impl Rng) -> Assignment {
        let rep = match &self.repr {
            Repr::Explicit(pairs) => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut chosen = &pairs[pairs.len() - 1].assignment;
                for pair in pairs {
                    acc += pair.probability;
                    if u < acc {
                        chosen = &pair.assignment;
                        break;
                    }
                }
                chosen.clone()
            }
            Repr::ImplicitCr => random_balanced_assignment(self.n, rng),
        };
        if rng.gen::<bool>() {
            rep
        } else {
            rep.flipped()
        }
    }
}

/// Seeded convenience wrapper around [`Design::sample`].
pub fn sample_assignment(design: &Design, seed: u64) -> Assignment {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    design.sample(&mut rng)
}

/// Uniform draw from all balanced assignments of length `n` (n even).
pub fn random_balanced_assignment(n: usize, rng: &mut impl Rng) -> Assignment {
    debug_assert!(n >= 2 && n % 2 == 0);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut w = vec![-1i8; n];
    for &i in &idx[..n / 2] {
        w[i] = 1;
    }
    Assignment { w }
}

fn check_even(n: usize) -> Result<()> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::invalid(format!(
            "sample size must be even and at least 2, got {n}"
        )));
    }
    Ok(())
}

fn check_enumerable(n: usize) -> Result<()> {
    check_even(n)?;
    if n > MAX_ENUMERATION_N {
        return Err(Error::invalid(format!(
            "enumerating balanced assignments is limited to n <= {MAX_ENUMERATION_N}, got {n}"
        )));
    }
    Ok(())
}

/// Advances `positions` to the next k-combination of `{0, …, n-1}` in
/// lexicographic order; returns false after the last one.
fn next_combination(positions: &mut [usize], n: usize) -> bool {
    let k = positions.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if positions[i] < n - k + i {
            positions[i] += 1;
            for j in (i + 1)..k {
                positions[j] = positions[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

fn assignment_from_positions(n: usize, positions: &[usize]) -> Assignment {
    let mut w = vec![-1i8; n];
    for &p in positions {
        w[p] = 1;
    }
    Assignment { w }
}

/// Every balanced assignment of length `n`, ordered lexicographically by the
/// positions of the treated units. Guarded by [`MAX_ENUMERATION_N`].
pub fn enumerate_balanced(n: usize) -> Result<Vec<Assignment>> {
    check_enumerable(n)?;
    let k = n / 2;
    let mut positions: Vec<usize> = (0..k).collect();
    let mut out = Vec::new();
    loop {
        out.push(assignment_from_positions(n, &positions));
        if !next_combination(&mut positions, n) {
            break;
        }
    }
    Ok(out)
}

/// One canonical representative (first entry +1) per `{W, −W}` pair, in the
/// same lexicographic order as [`enumerate_balanced`].
pub fn enumerate_representatives(n: usize) -> Result<Vec<Assignment>> {
    check_enumerable(n)?;
    let k = n / 2;
    // Representatives are exactly the combinations containing position 0.
    let mut rest: Vec<usize> = (1..k).collect();
    let mut out = Vec::new();
    loop {
        let mut positions = Vec::with_capacity(k);
        positions.push(0);
        positions.extend_from_slice(&rest);
        out.push(assignment_from_positions(n, &positions));
        // The tail is a combination from {1, …, n-1}; the advancement rule is
        // the same as for combinations from {0, …, n-1}.
        if rest.is_empty() || !next_combination(&mut rest, n) {
            break;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Serialization: design/v1
//
// {"schema":"design/v1","n":4,"pairs":[{"w":[1,-1,1,-1],"p":5.0e-1},...]}
//
// Implicit complete randomization is flagged instead of materialized:
// {"schema":"design/v1","n":100,"kind":"cr_implicit"}
// ---------------------------------------------------------------------------

const DESIGN_SCHEMA: &str = "design/v1";

#[derive(Deserialize)]
struct DesignFile {
    schema: String,
    n: usize,
    #[serde(default)]
    kind: Option<String>,
    #[serde(default)]
    pairs: Option<Vec<DesignFilePair>>,
}

#[derive(Deserialize)]
struct DesignFilePair {
    w: Vec<i64>,
    p: f64,
}

impl Design {
    /// Serializes to the `design/v1` JSON schema with 17-significant-digit
    /// probabilities, so that a load/save cycle is byte-identical.
    pub fn to_json_string(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{{\"schema\":\"{DESIGN_SCHEMA}\",\"n\":{}", self.n));
        match &self.repr {
            Repr::ImplicitCr => out.push_str(",\"kind\":\"cr_implicit\"}"),
            Repr::Explicit(pairs) => {
                out.push_str(",\"pairs\":[");
                for (t, pair) in pairs.iter().enumerate() {
                    if t > 0 {
                        out.push(',');
                    }
                    out.push_str("{\"w\":[");
                    for (i, &s) in pair.assignment.signs().iter().enumerate() {
                        if i > 0 {
                            out.push(',');
                        }
                        out.push_str(if s == 1 { "1" } else { "-1" });
                    }
                    out.push_str("],\"p\":");
                    out.push_str(&f64_repr(pair.probability));
                    out.push('}');
                }
                out.push_str("]}");
            }
        }
        out.push('\n');
        out
    }

    /// Parses and fully re-validates a `design/v1` document: schema tag,
    /// balance, canonical representatives, distinctness, positive
    /// probabilities summing to one within 1e-12.
    pub fn from_json_str(text: &str) -> Result<Design> {
        let file: DesignFile = serde_json::from_str(text)?;
        if file.schema != DESIGN_SCHEMA {
            return Err(Error::invalid(format!(
                "unsupported design schema {:?}, expected {DESIGN_SCHEMA:?}",
                file.schema
            )));
        }
        check_even(file.n)?;
        match file.kind.as_deref() {
            Some("cr_implicit") => {
                if file.pairs.is_some() {
                    return Err(Error::invalid(
                        "implicit complete randomization must not list pairs",
                    ));
                }
                Ok(Design { n: file.n, repr: Repr::ImplicitCr })
            }
            Some(other) => {
                Err(Error::invalid(format!("unknown design kind {other:?}")))
            }
            None => {
                let raw = file
                    .pairs
                    .ok_or_else(|| Error::invalid("design file lists no pairs"))?;
                if raw.is_empty() {
                    return Err(Error::invalid("design file lists no pairs"));
                }
                let mut pairs = Vec::with_capacity(raw.len());
                let mut seen = std::collections::BTreeSet::new();
                let mut total = 0.0;
                for (t, entry) in raw.into_iter().enumerate() {
                    let assignment = Assignment::from_i64(&entry.w)
                        .map_err(|e| Error::invalid(format!("pair {t}: {e}")))?;
                    if assignment.n() != file.n {
                        return Err(Error::invalid(format!(
                            "pair {t} has length {}, expected {}",
                            assignment.n(),
                            file.n
                        )));
                    }
                    if !assignment.is_canonical() {
                        return Err(Error::invalid(format!(
                            "pair {t} is not canonical (first entry must be +1)"
                        )));
                    }
                    if !seen.insert(assignment.clone()) {
                        return Err(Error::invalid(format!("pair {t} duplicates an earlier pair")));
                    }
                    if !entry.p.is_finite() || entry.p <= 0.0 || entry.p > 1.0 {
                        return Err(Error::invalid(format!(
                            "pair {t} probability {} outside (0, 1]",
                            entry.p
                        )));
                    }
                    total += entry.p;
                    pairs.push(DesignPair { assignment, probability: entry.p });
                }
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::invalid(format!(
                        "pair probabilities sum to {total}, expected 1"
                    )));
                }
                Ok(Design { n: file.n, repr: Repr::Explicit(pairs) })
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Design> {
        let text = std::fs::read_to_string(path)?;
        Design::from_json_str(&text)
    }
}
