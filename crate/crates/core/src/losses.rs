//! Training losses over one sequence instance, each with its gradient with
//! respect to the instance's score vector.
//!
//! | kind   | scored items                       | value                          |
//! |--------|------------------------------------|--------------------------------|
//! | `ce`   | targets, negatives                 | binary cross-entropy           |
//! | `bpr`  | targets, negatives (k-th with k-th)| `Σ −ln σ(r_t − r_n)`           |
//! | `dsl`  | targets, negatives                 | `−log P(targets)`              |
//! | `cdsl` | previous, targets, negatives       | `−log P(previous ∪ targets \| previous)` |

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::data::SequenceInstance;
use crate::dpp::{self, DiversityKernelLowRank, GroundSet, QualityVector, SetLikelihood};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LossKind {
    Ce,
    Bpr,
    Dsl,
    Cdsl,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::Ce, LossKind::Bpr, LossKind::Dsl, LossKind::Cdsl];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Ce => "ce",
            LossKind::Bpr => "bpr",
            LossKind::Dsl => "dsl",
            LossKind::Cdsl => "cdsl",
        }
    }

    pub fn needs_kernel(self) -> bool {
        matches!(self, LossKind::Dsl | LossKind::Cdsl)
    }

    /// Rejects combinations the loss cannot train on.
    pub fn check_targets(self, targets: usize) -> Result<()> {
        if self == LossKind::Dsl && targets < 2 {
            return Err(Error::InvalidConfig(
                "dsl needs at least two targets per instance (T > 1)".into(),
            ));
        }
        Ok(())
    }

    /// Catalog items whose scores this loss consumes, in gradient order.
    pub fn scored_items(self, instance: &SequenceInstance) -> Vec<usize> {
        let mut items = Vec::with_capacity(
            instance.previous.len() + instance.targets.len() + instance.negatives.len(),
        );
        if self == LossKind::Cdsl {
            items.extend_from_slice(&instance.previous);
        }
        items.extend_from_slice(&instance.targets);
        items.extend_from_slice(&instance.negatives);
        items
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ce" => Ok(LossKind::Ce),
            "bpr" => Ok(LossKind::Bpr),
            "dsl" => Ok(LossKind::Dsl),
            "cdsl" => Ok(LossKind::Cdsl),
            other => Err(Error::InvalidConfig(alloc::format!(
                "unknown loss kind `{other}`"
            ))),
        }
    }
}

/// Loss value and its gradient with respect to the scored items.
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub grad_scores: Vec<f64>,
    /// Set when the instance has zero likelihood; value is `+∞` and the
    /// gradient is all zeros.
    pub skipped: bool,
}

impl LossResult {
    fn skipped(n: usize) -> Self {
        LossResult {
            value: f64::INFINITY,
            grad_scores: vec![0.0; n],
            skipped: true,
        }
    }
}

/// `ln(1 + eˣ)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + libm::log1p(libm::exp(-x.abs()))
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Binary cross-entropy: `Σ_t −log σ(r_t) + Σ_n −log(1 − σ(r_n))`.
pub fn ce_loss(target_scores: &[f64], negative_scores: &[f64]) -> Result<LossResult> {
    if target_scores.is_empty() {
        return Err(Error::Empty("target scores"));
    }
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(target_scores.len() + negative_scores.len());
    for &r in target_scores {
        value += softplus(-r);
        grad.push(sigmoid(r) - 1.0);
    }
    for &r in negative_scores {
        value += softplus(r);
        grad.push(sigmoid(r));
    }
    Ok(LossResult {
        value,
        grad_scores: grad,
        skipped: false,
    })
}

/// Pairwise ranking: the k-th target against the k-th negative.
pub fn bpr_loss(target_scores: &[f64], negative_scores: &[f64]) -> Result<LossResult> {
    if target_scores.is_empty() {
        return Err(Error::Empty("target scores"));
    }
    if target_scores.len() != negative_scores.len() {
        return Err(Error::DimensionMismatch {
            expected: target_scores.len(),
            got: negative_scores.len(),
        });
    }
    let t = target_scores.len();
    let mut value = 0.0;
    let mut grad = vec![0.0; 2 * t];
    for (k, (&ri, &rj)) in target_scores.iter().zip(negative_scores).enumerate() {
        let delta = ri - rj;
        value += softplus(-delta);
        let g = sigmoid(delta) - 1.0;
        grad[k] = g;
        grad[t + k] = -g;
    }
    Ok(LossResult {
        value,
        grad_scores: grad,
        skipped: false,
    })
}

fn set_loss(
    ground: &GroundSet,
    scores: &[f64],
    kernel: &DiversityKernelLowRank,
    likelihood: SetLikelihood<'_>,
) -> Result<LossResult> {
    if scores.len() != ground.len() {
        return Err(Error::DimensionMismatch {
            expected: ground.len(),
            got: scores.len(),
        });
    }
    let quality = QualityVector::from_raw_scores(scores)?;
    let l = dpp::build_sequence_kernel(&quality, kernel, ground)?;
    let ll = likelihood.log_likelihood(&l)?;
    if ll == f64::NEG_INFINITY {
        return Ok(LossResult::skipped(scores.len()));
    }
    let grad = dpp::grad_quality(&l, &likelihood)?;
    Ok(LossResult {
        value: -ll,
        grad_scores: grad,
        skipped: false,
    })
}

/// Negative log DPP probability of the targets within targets ∪ negatives.
/// `scores` follow [`LossKind::scored_items`] order.
pub fn dsl_loss(
    instance: &SequenceInstance,
    scores: &[f64],
    kernel: &DiversityKernelLowRank,
) -> Result<LossResult> {
    LossKind::Dsl.check_targets(instance.targets.len())?;
    let ground = GroundSet::new(
        instance.user,
        instance.time_step,
        &[],
        &instance.targets,
        &instance.negatives,
    )?;
    let targets = ground.positions(dpp::Role::Target);
    set_loss(
        &ground,
        scores,
        kernel,
        SetLikelihood::Dsl { targets: &targets },
    )
}

/// Negative log conditional probability of previous ∪ targets given the
/// previous items, over previous ∪ targets ∪ negatives.
pub fn cdsl_loss(
    instance: &SequenceInstance,
    scores: &[f64],
    kernel: &DiversityKernelLowRank,
) -> Result<LossResult> {
    let ground = GroundSet::new(
        instance.user,
        instance.time_step,
        &instance.previous,
        &instance.targets,
        &instance.negatives,
    )?;
    let observed = ground.positions(dpp::Role::Previous);
    let mut full = observed.clone();
    full.extend(ground.positions(dpp::Role::Target));
    set_loss(
        &ground,
        scores,
        kernel,
        SetLikelihood::Cdsl {
            observed: &observed,
            full: &full,
        },
    )
}

/// BPR where negative `j` is paired with target `j mod T`. With as many
/// negatives as targets this is the positional pairing of [`bpr_loss`].
fn bpr_cyclic(target_scores: &[f64], negative_scores: &[f64]) -> Result<LossResult> {
    let t = target_scores.len();
    let z = negative_scores.len();
    if t == 0 || !z.is_multiple_of(t) {
        return Err(Error::DimensionMismatch {
            expected: t,
            got: z,
        });
    }
    let expanded: Vec<f64> = (0..z).map(|j| target_scores[j % t]).collect();
    let paired = bpr_loss(&expanded, negative_scores)?;
    let mut grad = vec![0.0; t + z];
    for j in 0..z {
        grad[j % t] += paired.grad_scores[j];
        grad[t + j] = paired.grad_scores[z + j];
    }
    Ok(LossResult {
        value: paired.value,
        grad_scores: grad,
        skipped: false,
    })
}

/// Dispatches to the loss named by `kind`. `scores` follow
/// [`LossKind::scored_items`]; `kernel` is required for `dsl` and `cdsl`.
pub fn compute(
    kind: LossKind,
    instance: &SequenceInstance,
    scores: &[f64],
    kernel: Option<&DiversityKernelLowRank>,
) -> Result<LossResult> {
    let t = instance.targets.len();
    match kind {
        LossKind::Ce | LossKind::Bpr => {
            if scores.len() != t + instance.negatives.len() {
                return Err(Error::DimensionMismatch {
                    expected: t + instance.negatives.len(),
                    got: scores.len(),
                });
            }
            let (ts, ns) = scores.split_at(t);
            if kind == LossKind::Ce {
                ce_loss(ts, ns)
            } else {
                bpr_cyclic(ts, ns)
            }
        }
        LossKind::Dsl | LossKind::Cdsl => {
            let kernel = kernel.ok_or_else(|| {
                Error::InvalidConfig(alloc::format!("{kind} needs a diversity kernel"))
            })?;
            if kind == LossKind::Dsl {
                dsl_loss(instance, scores, kernel)
            } else {
                cdsl_loss(instance, scores, kernel)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use dppseq_oracle::{
        oracle_fd_gradient, rel_err, subset_det, superset_normalizer, vec_rel_err,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn instance(previous: &[usize], targets: &[usize], negatives: &[usize]) -> SequenceInstance {
        SequenceInstance {
            user: 0,
            time_step: 0,
            previous: previous.to_vec(),
            targets: targets.to_vec(),
            negatives: negatives.to_vec(),
        }
    }

    fn random_kernel(m: usize, d: usize, rng: &mut impl Rng) -> DiversityKernelLowRank {
        let mut v = Matrix::zeros(m, d);
        for x in v.as_mut_slice() {
            *x = rng.gen_range(-1.0..1.0);
        }
        crate::kernel::normalize_kernel(&DiversityKernelLowRank::new(v).unwrap())
    }

    #[test]
    fn ce_fixtures() {
        let r = ce_loss(&[0.0], &[0.0]).unwrap();
        assert!((r.value - 2.0 * core::f64::consts::LN_2).abs() < 1e-15);
        assert!((r.value - 1.386294).abs() < 1e-6);
        let r = ce_loss(&[800.0], &[-800.0]).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.grad_scores.iter().all(|g| g.abs() < 1e-300));
        assert!(ce_loss(&[], &[1.0]).is_err());
    }

    #[test]
    fn ce_gradient_closed_form_and_fd() {
        let r = ce_loss(&[0.3, -1.2], &[0.5]).unwrap();
        assert!((r.grad_scores[0] - (sigmoid(0.3) - 1.0)).abs() < 1e-15);
        assert!((r.grad_scores[2] - sigmoid(0.5)).abs() < 1e-15);
        let x = [0.3, -1.2, 0.5];
        let fd =
            oracle_fd_gradient(|s| ce_loss(&s[..2], &s[2..]).unwrap().value, &x, 1e-5).unwrap();
        for (a, b) in r.grad_scores.iter().zip(&fd) {
            assert!(rel_err(*a, *b) < 1e-6);
        }
    }

    #[test]
    fn bpr_fixtures() {
        let r = bpr_loss(&[1.5, -2.0], &[1.5, -2.0]).unwrap();
        assert!((r.value - 2.0 * core::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(bpr_loss(&[800.0], &[-800.0]).unwrap().value, 0.0);
        assert!(matches!(
            bpr_loss(&[1.0, 2.0], &[0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn bpr_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let n: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let r = bpr_loss(&t, &n).unwrap();
        // −ln σ(Δ) written out directly
        let direct: f64 = t
            .iter()
            .zip(&n)
            .map(|(a, b)| -libm::log(1.0 / (1.0 + libm::exp(-(a - b)))))
            .sum();
        assert!(rel_err(direct, r.value) < 1e-9);
        for k in 0..3 {
            let d = t[k] - n[k];
            let g = -libm::exp(-d) / (1.0 + libm::exp(-d));
            assert!(rel_err(g, r.grad_scores[k]) < 1e-9);
            assert!(rel_err(-g, r.grad_scores[3 + k]) < 1e-9);
        }
    }

    #[test]
    fn bpr_pairs_extra_negatives_cyclically() {
        let inst = instance(&[9], &[0], &[1, 2]);
        let r = compute(LossKind::Bpr, &inst, &[0.5, -0.3, 1.1], None).unwrap();
        let direct = softplus(-(0.5 + 0.3)) + softplus(-(0.5 - 1.1));
        assert!(rel_err(direct, r.value) < 1e-12);
        let fd = oracle_fd_gradient(
            |x| compute(LossKind::Bpr, &inst, x, None).unwrap().value,
            &[0.5, -0.3, 1.1],
            1e-5,
        )
        .unwrap();
        assert!(vec_rel_err(&r.grad_scores, &fd) < 1e-6);
        let positional = instance(&[9], &[0, 3], &[1, 2]);
        let s = [0.2, 0.7, -0.1, 0.4];
        assert_eq!(
            compute(LossKind::Bpr, &positional, &s, None).unwrap(),
            bpr_loss(&s[..2], &s[2..]).unwrap()
        );
        let uneven = instance(&[9], &[0, 3], &[1, 2, 4]);
        assert!(compute(LossKind::Bpr, &uneven, &[0.0; 5], None).is_err());
    }

    #[test]
    fn ce_and_bpr_ignore_negative_order() {
        let a = ce_loss(&[0.2, 0.4], &[1.0, -0.5, 0.1]).unwrap().value;
        let b = ce_loss(&[0.2, 0.4], &[0.1, 1.0, -0.5]).unwrap().value;
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn dsl_diagonal_closed_form() {
        let k = DiversityKernelLowRank::new(Matrix::identity(4)).unwrap();
        let inst = instance(&[], &[0, 1], &[2, 3]);
        let r = dsl_loss(&inst, &[0.0; 4], &k).unwrap();
        assert!((r.value - 4.0 * core::f64::consts::LN_2).abs() < 1e-14);
        // subset enumeration of the same 4×4 identity kernel
        let z: f64 = (0..16)
            .map(|m| subset_det(4, Matrix::identity(4).as_slice(), m))
            .sum();
        assert!((r.value + libm::log(1.0 / z)).abs() < 1e-14);
    }

    #[test]
    fn dsl_decreases_as_target_score_rises() {
        let k = DiversityKernelLowRank::new(Matrix::identity(4)).unwrap();
        let inst = instance(&[], &[0, 1], &[2, 3]);
        let mut prev = f64::INFINITY;
        for step in 0..40 {
            let r = -4.0 + 0.25 * step as f64;
            let v = dsl_loss(&inst, &[r, 0.3, -0.2, 0.1], &k).unwrap().value;
            assert!(v < prev && v >= 0.0);
            prev = v;
        }
    }

    #[test]
    fn dsl_rejects_single_target() {
        let k = DiversityKernelLowRank::new(Matrix::identity(3)).unwrap();
        let inst = instance(&[], &[0], &[1, 2]);
        assert!(matches!(
            dsl_loss(&inst, &[0.0; 3], &k),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn cdsl_without_previous_equals_dsl() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let k = random_kernel(10, 10, &mut rng);
        let inst = instance(&[], &[1, 4], &[6, 8]);
        let s: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let a = dsl_loss(&inst, &s, &k).unwrap();
        let b = cdsl_loss(&inst, &s, &k).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cdsl_single_target_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = random_kernel(12, 12, &mut rng);
        let inst = instance(&[0, 1, 2, 3, 4], &[5], &[6, 7]);
        let s: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let r = cdsl_loss(&inst, &s, &k).unwrap();
        assert!(r.value.is_finite() && r.value >= 0.0);
        let fd = oracle_fd_gradient(|x| cdsl_loss(&inst, x, &k).unwrap().value, &s, 1e-5).unwrap();
        assert!(vec_rel_err(&r.grad_scores, &fd) < 1e-4);
    }

    #[test]
    fn cdsl_matches_superset_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let k = random_kernel(10, 10, &mut rng);
            let inst = instance(&[0, 1, 2], &[3, 4], &[5, 6, 7]);
            let s: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let r = cdsl_loss(&inst, &s, &k).unwrap();
            let q = QualityVector::from_raw_scores(&s).unwrap();
            let g = GroundSet::new(0, 0, &[0, 1, 2], &[3, 4], &[5, 6, 7]).unwrap();
            let l = dpp::build_sequence_kernel(&q, &k, &g).unwrap();
            let num = subset_det(8, l.matrix().as_slice(), 0b11111);
            let den = superset_normalizer(8, l.matrix().as_slice(), 0b111).unwrap();
            assert!((libm::exp(-r.value) - num / den).abs() < 1e-9);
        }
    }

    #[test]
    fn all_losses_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = random_kernel(20, 16, &mut rng);
        for _ in 0..20 {
            let inst = instance(&[0, 1, 2, 3, 4, 5], &[6, 7, 8], &[9, 10, 11]);
            for kind in LossKind::ALL {
                let n = kind.scored_items(&inst).len();
                let s: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let r = compute(kind, &inst, &s, Some(&k)).unwrap();
                let fd = oracle_fd_gradient(
                    |x| compute(kind, &inst, x, Some(&k)).unwrap().value,
                    &s,
                    1e-5,
                )
                .unwrap();
                assert!(vec_rel_err(&r.grad_scores, &fd) < 1e-4, "{kind}");
            }
        }
    }

    #[test]
    fn zero_probability_targets_are_skipped() {
        // items 0 and 1 share one direction, so {0, 1} has zero volume
        let v = Matrix::from_rows(&[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &[0.0, 1.0]]).unwrap();
        let k = DiversityKernelLowRank::new(v).unwrap();
        let inst = instance(&[], &[0, 1], &[2, 3]);
        let r = dsl_loss(&inst, &[0.0; 4], &k).unwrap();
        assert!(r.skipped && r.value == f64::INFINITY);
        assert!(r.grad_scores.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn kind_parsing_and_scored_items() {
        assert_eq!("CDSL".parse::<LossKind>().unwrap(), LossKind::Cdsl);
        assert!("listwise".parse::<LossKind>().is_err());
        let inst = instance(&[1, 2], &[3], &[4, 5]);
        assert_eq!(LossKind::Cdsl.scored_items(&inst), [1, 2, 3, 4, 5]);
        assert_eq!(LossKind::Ce.scored_items(&inst), [3, 4, 5]);
        assert!(compute(
            LossKind::Dsl,
            &instance(&[], &[1, 2], &[3]),
            &[0.0; 3],
            None
        )
        .is_err());
    }
}
