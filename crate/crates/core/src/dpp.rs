//! DPP set likelihoods over a per-instance ground set.
//!
//! A training instance restricts the global diversity kernel `K = V Vᵀ` to its
//! ground set and modulates it with per-item qualities:
//! `L = Diag(q) · K_sub · Diag(q)`. The unconditional set likelihood is
//! `det(L_Y) / det(L + I)`; the conditional one, given an observed subset
//! `A ⊆ Y`, is `det(L_Y) / det(L + I_Ā)` with ones on the diagonal only at
//! positions outside `A`.
//!
//! Qualities come from raw model scores through `q = exp(r / 2)`, so the
//! numerator satisfies `log det(L_Y) = Σ_{i∈Y} r_i + log det(K_Y)`. The
//! implementation evaluates it that way, which keeps the numerator exact even
//! when scores are large.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

/// Raw scores are clamped to `±RAW_SCORE_CLAMP` before exponentiation.
pub const RAW_SCORE_CLAMP: f64 = 30.0;

/// Largest ground set [`enumerate_normalizer`] will enumerate.
pub const MAX_ENUMERATION: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Previous,
    Target,
    Negative,
}

/// The item universe of one user sequence at one time step.
///
/// Positions are ordered previous items first, then targets, then negatives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundSet {
    items: Vec<usize>,
    roles: Vec<Role>,
    user: usize,
    time_step: usize,
}

impl GroundSet {
    pub fn new(
        user: usize,
        time_step: usize,
        previous: &[usize],
        targets: &[usize],
        negatives: &[usize],
    ) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::Empty("ground set needs at least one target"));
        }
        let items: Vec<usize> = previous
            .iter()
            .chain(targets)
            .chain(negatives)
            .copied()
            .collect();
        let mut sorted = items.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidSubset("ground-set items must be distinct"));
        }
        let roles = core::iter::repeat_n(Role::Previous, previous.len())
            .chain(core::iter::repeat_n(Role::Target, targets.len()))
            .chain(core::iter::repeat_n(Role::Negative, negatives.len()))
            .collect();
        Ok(GroundSet {
            items,
            roles,
            user,
            time_step,
        })
    }

    pub fn items(&self) -> &[usize] {
        &self.items
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn user(&self) -> usize {
        self.user
    }

    pub fn time_step(&self) -> usize {
        self.time_step
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Ground-set positions holding `role`.
    pub fn positions(&self, role: Role) -> Vec<usize> {
        self.roles
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == role)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Raw scores and the strictly positive qualities derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityVector {
    raw_scores: Vec<f64>,
    qualities: Vec<f64>,
}

impl QualityVector {
    pub fn from_raw_scores(raw: &[f64]) -> Result<Self> {
        if raw.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite("raw score"));
        }
        let qualities = raw
            .iter()
            .map(|&r| libm::exp(r.clamp(-RAW_SCORE_CLAMP, RAW_SCORE_CLAMP) / 2.0))
            .collect();
        Ok(QualityVector {
            raw_scores: raw.to_vec(),
            qualities,
        })
    }

    /// Unit qualities (all raw scores zero).
    pub fn ones(n: usize) -> Self {
        QualityVector {
            raw_scores: vec![0.0; n],
            qualities: vec![1.0; n],
        }
    }

    pub fn raw_scores(&self) -> &[f64] {
        &self.raw_scores
    }

    pub fn qualities(&self) -> &[f64] {
        &self.qualities
    }

    pub fn len(&self) -> usize {
        self.qualities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.qualities.is_empty()
    }

    /// `log q_i² = clamp(r_i)`.
    fn log_quality_sq(&self, i: usize) -> f64 {
        self.raw_scores[i].clamp(-RAW_SCORE_CLAMP, RAW_SCORE_CLAMP)
    }

    /// `∂ clamp(r_i) / ∂ r_i`.
    fn clamp_slope(&self, i: usize) -> f64 {
        if self.raw_scores[i].abs() > RAW_SCORE_CLAMP {
            0.0
        } else {
            1.0
        }
    }
}

/// Low-rank diversity kernel `K = V Vᵀ`, one factor row per catalog item.
#[derive(Debug, Clone, PartialEq)]
pub struct DiversityKernelLowRank {
    factors: Matrix,
    normalized: bool,
}

impl DiversityKernelLowRank {
    pub fn new(factors: Matrix) -> Result<Self> {
        if factors.rows() == 0 || factors.cols() == 0 {
            return Err(Error::Empty("kernel factors"));
        }
        if factors.as_slice().iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("kernel factor"));
        }
        Ok(DiversityKernelLowRank {
            factors,
            normalized: false,
        })
    }

    pub(crate) fn with_normalized(factors: Matrix, normalized: bool) -> Self {
        DiversityKernelLowRank {
            factors,
            normalized,
        }
    }

    /// Restores a checkpointed kernel, keeping its normalization flag.
    pub fn from_checkpoint(factors: Matrix, normalized: bool) -> Result<Self> {
        let mut k = DiversityKernelLowRank::new(factors)?;
        k.normalized = normalized;
        Ok(k)
    }

    pub fn factors(&self) -> &Matrix {
        &self.factors
    }

    pub fn factors_mut(&mut self) -> &mut Matrix {
        self.normalized = false;
        &mut self.factors
    }

    pub fn into_factors(self) -> Matrix {
        self.factors
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Catalog size `M`.
    pub fn num_items(&self) -> usize {
        self.factors.rows()
    }

    /// Latent dimension `D`.
    pub fn latent_dim(&self) -> usize {
        self.factors.cols()
    }

    pub fn similarity(&self, i: usize, j: usize) -> f64 {
        linalg::dot(self.factors.row(i), self.factors.row(j))
    }

    /// `K` restricted to catalog items `items` (a Gram matrix of their rows).
    pub fn submatrix(&self, items: &[usize]) -> Result<Matrix> {
        let m = self.num_items();
        if let Some(&bad) = items.iter().find(|&&i| i >= m) {
            return Err(Error::IndexOutOfRange { index: bad, len: m });
        }
        let k = items.len();
        let mut out = Matrix::zeros(k, k);
        for a in 0..k {
            for b in a..k {
                let v = self.similarity(items[a], items[b]);
                out[(a, b)] = v;
                out[(b, a)] = v;
            }
        }
        Ok(out)
    }
}

/// Dense quality-modulated kernel `L` for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceKernel {
    matrix: Matrix,
    similarity: Matrix,
    quality: QualityVector,
    items: Vec<usize>,
}

impl SequenceKernel {
    /// `L = Diag(q) · K_sub · Diag(q)` from an explicit similarity block.
    pub fn from_parts(
        quality: QualityVector,
        similarity: Matrix,
        items: Vec<usize>,
    ) -> Result<Self> {
        let n = quality.len();
        if similarity.rows() != n || similarity.cols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: similarity.rows(),
            });
        }
        if items.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: items.len(),
            });
        }
        let q = quality.qualities();
        let mut matrix = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = q[i] * similarity[(i, j)] * q[j];
                matrix[(i, j)] = v;
                matrix[(j, i)] = v;
            }
        }
        Ok(SequenceKernel {
            matrix,
            similarity,
            quality,
            items,
        })
    }

    /// Treats an arbitrary symmetric PSD matrix as a kernel with unit
    /// qualities. Positions double as item ids.
    pub fn from_dense(matrix: Matrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::NotSquare {
                rows: matrix.rows(),
                cols: matrix.cols(),
            });
        }
        let n = matrix.rows();
        SequenceKernel::from_parts(QualityVector::ones(n), matrix, (0..n).collect())
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn similarity(&self) -> &Matrix {
        &self.similarity
    }

    pub fn quality(&self) -> &QualityVector {
        &self.quality
    }

    /// Catalog item at each ground-set position.
    pub fn items(&self) -> &[usize] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.matrix.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `log det(L_Y)`, or `−∞` when `L_Y` is singular.
    pub fn log_det_subset(&self, subset: &[usize]) -> Result<f64> {
        let k = linalg::log_det_or_neg_inf(&self.similarity.principal(subset))?;
        if k == f64::NEG_INFINITY {
            return Ok(k);
        }
        Ok(k + subset
            .iter()
            .map(|&i| self.quality.log_quality_sq(i))
            .sum::<f64>())
    }

    /// `L + I_mask`, where `mask[i]` selects the diagonal entries that get a one.
    fn shifted(&self, mask: &[bool]) -> Matrix {
        let mut m = self.matrix.clone();
        for (i, &on) in mask.iter().enumerate() {
            if on {
                m[(i, i)] += 1.0;
            }
        }
        m
    }
}

/// Builds the sequence kernel for `ground_set` from global kernel rows.
pub fn build_sequence_kernel(
    qualities: &QualityVector,
    kernel: &DiversityKernelLowRank,
    ground_set: &GroundSet,
) -> Result<SequenceKernel> {
    if qualities.len() != ground_set.len() {
        return Err(Error::DimensionMismatch {
            expected: ground_set.len(),
            got: qualities.len(),
        });
    }
    if qualities
        .qualities()
        .iter()
        .any(|q| !q.is_finite() || *q <= 0.0)
    {
        return Err(Error::NonFinite("quality"));
    }
    let sub = kernel.submatrix(ground_set.items())?;
    SequenceKernel::from_parts(qualities.clone(), sub, ground_set.items().to_vec())
}

/// Which set likelihood to evaluate, with its subsets as ground-set positions.
#[derive(Debug, Clone, Copy)]
pub enum SetLikelihood<'a> {
    /// `P(Y_T) = det(L_{Y_T}) / det(L + I)`.
    Dsl { targets: &'a [usize] },
    /// `P(Y_full | Y_observed) = det(L_full) / det(L + I_{not observed})`.
    Cdsl {
        observed: &'a [usize],
        full: &'a [usize],
    },
}

impl SetLikelihood<'_> {
    fn parts(&self) -> (&[usize], &[usize]) {
        match *self {
            SetLikelihood::Dsl { targets } => (&[], targets),
            SetLikelihood::Cdsl { observed, full } => (observed, full),
        }
    }

    pub fn log_likelihood(&self, kernel: &SequenceKernel) -> Result<f64> {
        match *self {
            SetLikelihood::Dsl { targets } => dsl_log_likelihood(kernel, targets),
            SetLikelihood::Cdsl { observed, full } => cdsl_log_likelihood(kernel, observed, full),
        }
    }
}

fn membership(n: usize, subset: &[usize]) -> Result<Vec<bool>> {
    let mut member = vec![false; n];
    for &i in subset {
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, len: n });
        }
        if member[i] {
            return Err(Error::InvalidSubset("duplicate position"));
        }
        member[i] = true;
    }
    Ok(member)
}

fn validate(kernel: &SequenceKernel, observed: &[usize], selected: &[usize]) -> Result<Vec<bool>> {
    let n = kernel.len();
    let obs = membership(n, observed)?;
    let sel = membership(n, selected)?;
    if obs.iter().zip(&sel).any(|(&o, &s)| o && !s) {
        return Err(Error::InvalidSubset(
            "observed set must be contained in the full set",
        ));
    }
    Ok(obs.into_iter().map(|o| !o).collect())
}

fn conditional_log_likelihood(
    kernel: &SequenceKernel,
    observed: &[usize],
    selected: &[usize],
) -> Result<f64> {
    let mask = validate(kernel, observed, selected)?;
    let numerator = kernel.log_det_subset(selected)?;
    if numerator == f64::NEG_INFINITY {
        return Ok(numerator);
    }
    let denominator = linalg::log_det_psd(&kernel.shifted(&mask))?;
    Ok(numerator - denominator)
}

/// `log det(L_{Y_T}) − log det(L + I)`. Returns `−∞` when the target
/// submatrix is singular (a zero-probability set).
pub fn dsl_log_likelihood(kernel: &SequenceKernel, targets: &[usize]) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::Empty("target set"));
    }
    conditional_log_likelihood(kernel, &[], targets)
}

/// `log det(L_full) − log det(L + I_{Ȳ_observed})`. Returns `−∞` when the
/// full-sequence submatrix is singular.
pub fn cdsl_log_likelihood(
    kernel: &SequenceKernel,
    observed: &[usize],
    full: &[usize],
) -> Result<f64> {
    conditional_log_likelihood(kernel, observed, full)
}

/// Gradient of the negative log-likelihood with respect to the raw scores.
///
/// With `q = exp(r/2)` the numerator contributes `−1` on every selected
/// position, and the normalizer contributes `(L B)_ii` with
/// `B = (L + I_mask)⁻¹`. Coordinates whose raw score sits beyond the clamp
/// get zero.
pub fn grad_quality(kernel: &SequenceKernel, likelihood: &SetLikelihood<'_>) -> Result<Vec<f64>> {
    let (observed, selected) = likelihood.parts();
    if let SetLikelihood::Dsl { targets } = likelihood {
        if targets.is_empty() {
            return Err(Error::Empty("target set"));
        }
    }
    let mask = validate(kernel, observed, selected)?;
    let n = kernel.len();
    let b = linalg::factor_psd(&kernel.shifted(&mask))?.inverse();
    let l = kernel.matrix();
    let mut grad: Vec<f64> = (0..n).map(|i| linalg::dot(l.row(i), b.row(i))).collect();
    for &i in selected {
        grad[i] -= 1.0;
    }
    for (i, g) in grad.iter_mut().enumerate() {
        *g *= kernel.quality.clamp_slope(i);
    }
    Ok(grad)
}

/// `Σ det(L_Y)` over all `Y ⊇ required` by explicit enumeration; equals
/// `det(L + I_{complement(required)})`.
pub fn enumerate_normalizer(kernel: &SequenceKernel, required: &[usize]) -> Result<f64> {
    let n = kernel.len();
    if n > MAX_ENUMERATION {
        return Err(Error::TooLarge {
            n,
            max: MAX_ENUMERATION,
        });
    }
    let req = membership(n, required)?;
    let req_mask: u32 = req
        .iter()
        .enumerate()
        .filter(|(_, &r)| r)
        .map(|(i, _)| 1u32 << i)
        .sum();
    let mut total = 0.0;
    let mut idx = Vec::with_capacity(n);
    for mask in 0..(1u32 << n) {
        if mask & req_mask != req_mask {
            continue;
        }
        idx.clear();
        idx.extend((0..n).filter(|i| mask & (1 << i) != 0));
        total += linalg::det(&kernel.matrix().principal(&idx))?;
    }
    Ok(total)
}

/// Marginal kernel `M = L (L + I)⁻¹ = I − (L + I)⁻¹`; `M_ii` is the
/// inclusion probability of position `i`.
pub fn marginal_kernel(kernel: &SequenceKernel) -> Result<Matrix> {
    let n = kernel.len();
    let inv = linalg::factor_psd(&kernel.shifted(&vec![true; n]))?.inverse();
    let mut m = Matrix::identity(n);
    for (x, y) in m.as_mut_slice().iter_mut().zip(inv.as_slice()) {
        *x -= y;
    }
    Ok(m)
}
