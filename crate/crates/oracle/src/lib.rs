//! Exponential-time reference computations used only by tests.
//!
//! Nothing here shares code with `dppseq-core`: determinants come from a
//! memoized Laplace (cofactor) expansion, DPP probabilities from explicit
//! subset enumeration and gradients from central differences. Matrices are
//! plain row-major `&[f64]` slices of an `n × n` matrix.

use std::collections::BTreeMap;
use std::fmt;

/// Largest ground set the enumeration oracles accept.
pub const MAX_ENUMERATION: usize = 15;

#[derive(Debug, Clone, PartialEq)]
pub enum OracleError {
    TooLarge { n: usize },
    NonFinite { coordinate: usize },
    Shape { expected: usize, got: usize },
}

impl fmt::Display for OracleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleError::TooLarge { n } => {
                write!(
                    f,
                    "ground set of {n} items exceeds the enumeration limit {MAX_ENUMERATION}"
                )
            }
            OracleError::NonFinite { coordinate } => {
                write!(f, "function not finite near coordinate {coordinate}")
            }
            OracleError::Shape { expected, got } => {
                write!(f, "expected {expected} matrix entries, got {got}")
            }
        }
    }
}

impl std::error::Error for OracleError {}

/// Determinant of an `n × n` row-major matrix by cofactor expansion along
/// the rows, memoized on the set of consumed columns (`O(n · 2^n)`).
pub fn cofactor_det(n: usize, a: &[f64]) -> f64 {
    assert_eq!(a.len(), n * n, "cofactor_det: matrix is not {n}x{n}");
    if n == 0 {
        return 1.0;
    }
    let mut memo: Vec<Option<f64>> = vec![None; 1 << n];
    expand(n, a, 0, &mut memo)
}

fn expand(n: usize, a: &[f64], used: usize, memo: &mut [Option<f64>]) -> f64 {
    let row = used.count_ones() as usize;
    if row == n {
        return 1.0;
    }
    if let Some(v) = memo[used] {
        return v;
    }
    let mut total = 0.0;
    let mut sign = 1.0;
    for col in 0..n {
        if used & (1 << col) != 0 {
            continue;
        }
        let entry = a[row * n + col];
        if entry != 0.0 {
            total += sign * entry * expand(n, a, used | (1 << col), memo);
        }
        sign = -sign;
    }
    memo[used] = Some(total);
    total
}

/// Principal submatrix of `a` on the positions set in `mask`.
pub fn principal_submatrix(n: usize, a: &[f64], mask: u32) -> (usize, Vec<f64>) {
    let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
    let k = idx.len();
    let mut sub = Vec::with_capacity(k * k);
    for &i in &idx {
        for &j in &idx {
            sub.push(a[i * n + j]);
        }
    }
    (k, sub)
}

/// `det(L_Y)` with `det(L_∅) = 1`.
pub fn subset_det(n: usize, l: &[f64], mask: u32) -> f64 {
    let (k, sub) = principal_submatrix(n, l, mask);
    cofactor_det(k, &sub)
}

fn check(n: usize, l: &[f64]) -> Result<(), OracleError> {
    if n > MAX_ENUMERATION {
        return Err(OracleError::TooLarge { n });
    }
    if l.len() != n * n {
        return Err(OracleError::Shape {
            expected: n * n,
            got: l.len(),
        });
    }
    Ok(())
}

/// Σ det(L_Y) over every `Y ⊇ required` (bitmask over ground-set positions).
pub fn superset_normalizer(n: usize, l: &[f64], required: u32) -> Result<f64, OracleError> {
    check(n, l)?;
    Ok((0..1u32 << n)
        .filter(|m| m & required == required)
        .map(|m| subset_det(n, l, m))
        .sum())
}

/// Full DPP distribution `P(Y) = det(L_Y) / Σ_Y' det(L_Y')`, keyed by bitmask.
pub fn oracle_dpp_distribution(n: usize, l: &[f64]) -> Result<BTreeMap<u32, f64>, OracleError> {
    conditional_distribution(n, l, 0)
}

/// Distribution over supersets of `observed`, `P(Y | observed ⊆ Y)`.
pub fn conditional_distribution(
    n: usize,
    l: &[f64],
    observed: u32,
) -> Result<BTreeMap<u32, f64>, OracleError> {
    check(n, l)?;
    let dets: Vec<(u32, f64)> = (0..1u32 << n)
        .filter(|m| m & observed == observed)
        .map(|m| (m, subset_det(n, l, m)))
        .collect();
    let z: f64 = dets.iter().map(|(_, d)| d).sum();
    Ok(dets.into_iter().map(|(m, d)| (m, d / z)).collect())
}

/// Inclusion probability of every element, read off an enumerated distribution.
pub fn marginals(n: usize, dist: &BTreeMap<u32, f64>) -> Vec<f64> {
    (0..n)
        .map(|i| {
            dist.iter()
                .filter(|(m, _)| *m & (1 << i) != 0)
                .map(|(_, p)| p)
                .sum()
        })
        .collect()
}

/// `P({i, j} ⊆ Y)` from an enumerated distribution.
pub fn pair_inclusion(dist: &BTreeMap<u32, f64>, i: usize, j: usize) -> f64 {
    let both = (1u32 << i) | (1u32 << j);
    dist.iter()
        .filter(|(m, _)| *m & both == both)
        .map(|(_, p)| p)
        .sum()
}

/// Central-difference gradient of `f` at `x` with step `h`.
pub fn oracle_fd_gradient<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>, OracleError>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(OracleError::NonFinite { coordinate: i });
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// Scalar relative error `|a − b| / max(|a|, |b|)`, zero when both vanish.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖)`, the usual gradient
/// check statistic. Zero when both vectors vanish.
pub fn vec_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Running worst-case comparison statistics over many checks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OracleReport {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub cases_checked: usize,
}

impl OracleReport {
    pub fn record(&mut self, expected: f64, actual: f64) {
        let abs = (expected - actual).abs();
        self.max_abs_err = self.max_abs_err.max(abs);
        self.max_rel_err = self.max_rel_err.max(rel_err(expected, actual));
        self.cases_checked += 1;
    }

    /// Records one vector comparison using the norm-wise relative error.
    pub fn record_vec(&mut self, expected: &[f64], actual: &[f64]) {
        let abs = expected
            .iter()
            .zip(actual)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        self.max_abs_err = self.max_abs_err.max(abs);
        self.max_rel_err = self.max_rel_err.max(vec_rel_err(expected, actual));
        self.cases_checked += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cofactor_small_cases() {
        assert_eq!(cofactor_det(0, &[]), 1.0);
        assert_eq!(cofactor_det(1, &[4.0]), 4.0);
        assert_eq!(cofactor_det(2, &[1.0, 2.0, 3.0, 4.0]), -2.0);
        let a = [2.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 2.0];
        assert!((cofactor_det(3, &a) - 4.0).abs() < 1e-12);
        // row swap flips the sign
        let b = [0.0, 1.0, 1.0, 0.0];
        assert_eq!(cofactor_det(2, &b), -1.0);
    }

    #[test]
    fn one_by_one_distribution() {
        let d = oracle_dpp_distribution(1, &[1.0]).unwrap();
        assert_eq!(d[&0], 0.5);
        assert_eq!(d[&1], 0.5);
    }

    #[test]
    fn identity_two_is_uniform() {
        let d = oracle_dpp_distribution(2, &[1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(d.len(), 4);
        for p in d.values() {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_large_ground_sets() {
        let l = vec![0.0; 16 * 16];
        assert_eq!(
            oracle_dpp_distribution(16, &l).unwrap_err(),
            OracleError::TooLarge { n: 16 }
        );
    }

    #[test]
    fn fd_of_square() {
        let g = oracle_fd_gradient(|x| x[0] * x[0], &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn fd_rejects_non_finite() {
        let err = oracle_fd_gradient(|x| x[0].ln(), &[0.0], 1e-5).unwrap_err();
        assert_eq!(err, OracleError::NonFinite { coordinate: 0 });
    }

    #[test]
    fn report_tracks_worst_case() {
        let mut r = OracleReport::default();
        r.record(1.0, 1.1);
        r.record(2.0, 2.0);
        assert_eq!(r.cases_checked, 2);
        assert!((r.max_abs_err - 0.1).abs() < 1e-12);
    }
}
