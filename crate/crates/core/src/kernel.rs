//! Learning the low-rank diversity kernel `K = V Vᵀ` from paired sets.
//!
//! The objective rewards volume for observed diverse sets and penalizes it
//! for their matched negatives:
//!
//! ```text
//! Σ_pairs [ log det(K_{T+} + εI) − log det(K_{T−} + εI) ] − λ ‖V‖²_F
//! ```
//!
//! It is maximized by full-batch gradient ascent with
//! `∂ log det(K_S + εI) / ∂V_S = 2 (K_S + εI)⁻¹ V_S`.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diverse::PairedDiverseSets;
use crate::dpp::DiversityKernelLowRank;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

/// One observed diverse set and its matched negative set (catalog indices).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SetPair {
    pub positive: Vec<usize>,
    pub negative: Vec<usize>,
}

impl SetPair {
    pub fn new(positive: Vec<usize>, negative: Vec<usize>) -> Self {
        SetPair { positive, negative }
    }

    /// Flattens per-user paired sets into training pairs, in input order.
    pub fn from_paired(sets: &[PairedDiverseSets]) -> Vec<SetPair> {
        sets.iter()
            .flat_map(|u| {
                u.positive
                    .iter()
                    .zip(&u.negative)
                    .map(|(p, n)| SetPair::new(p.clone(), n.clone()))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelTrainConfig {
    pub latent_dim: usize,
    /// Step size per pair: each epoch moves `V` by `learning_rate / |pairs|`
    /// times the objective gradient.
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2_reg: f64,
    pub jitter: f64,
    pub seed: u64,
    /// Half-width of the uniform initialization; `None` means `1/√D`.
    pub init_scale: Option<f64>,
}

impl Default for KernelTrainConfig {
    fn default() -> Self {
        KernelTrainConfig {
            latent_dim: 32,
            learning_rate: 0.1,
            epochs: 100,
            l2_reg: 0.01,
            jitter: 1e-6,
            seed: 0,
            init_scale: None,
        }
    }
}

impl KernelTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::InvalidConfig("latent_dim must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(
                "kernel learning_rate must be positive".into(),
            ));
        }
        if !(self.l2_reg >= 0.0) || !(self.jitter >= 0.0) {
            return Err(Error::InvalidConfig(
                "l2_reg and jitter must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn init_scale(&self) -> f64 {
        self.init_scale
            .unwrap_or(1.0 / libm::sqrt(self.latent_dim as f64))
    }
}

/// Objective value after one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelEpoch {
    pub epoch: usize,
    pub objective: f64,
    pub learning_rate: f64,
}

fn set_gram(v: &Matrix, set: &[usize], jitter: f64) -> Matrix {
    let k = set.len();
    let mut g = Matrix::zeros(k, k);
    for a in 0..k {
        for b in a..k {
            let x = linalg::dot(v.row(set[a]), v.row(set[b]));
            g[(a, b)] = x;
            g[(b, a)] = x;
        }
        g[(a, a)] += jitter;
    }
    g
}

fn set_log_det(v: &Matrix, set: &[usize], jitter: f64) -> Result<f64> {
    let g = set_gram(v, set, jitter);
    if jitter > 0.0 {
        linalg::log_det_psd(&g)
    } else {
        linalg::log_det_or_neg_inf(&g)
    }
}

fn check_indices(v: &Matrix, pairs: &[SetPair]) -> Result<()> {
    let m = v.rows();
    for p in pairs {
        if let Some(&bad) = p.positive.iter().chain(&p.negative).find(|&&i| i >= m) {
            return Err(Error::IndexOutOfRange { index: bad, len: m });
        }
    }
    Ok(())
}

/// Regularized paired-set log-likelihood of the factors `v`.
pub fn paired_set_objective(
    v: &DiversityKernelLowRank,
    pairs: &[SetPair],
    l2_reg: f64,
    jitter: f64,
) -> Result<f64> {
    let v = v.factors();
    check_indices(v, pairs)?;
    let mut total = 0.0;
    for p in pairs {
        total += set_log_det(v, &p.positive, jitter)? - set_log_det(v, &p.negative, jitter)?;
    }
    Ok(total - l2_reg * v.frobenius_sq())
}

/// Analytic gradient of [`paired_set_objective`] with respect to `V`.
pub fn paired_set_gradient(
    v: &DiversityKernelLowRank,
    pairs: &[SetPair],
    l2_reg: f64,
    jitter: f64,
) -> Result<Matrix> {
    let v = v.factors();
    check_indices(v, pairs)?;
    let d = v.cols();
    let mut grad = Matrix::zeros(v.rows(), d);
    for p in pairs {
        for (set, sign) in [(&p.positive, 2.0), (&p.negative, -2.0)] {
            if set.is_empty() {
                continue;
            }
            let inv = linalg::factor_psd(&set_gram(v, set, jitter))?.inverse();
            // rows S of the gradient += sign · (K_S + εI)⁻¹ V_S
            for (a, &ia) in set.iter().enumerate() {
                for (b, &ib) in set.iter().enumerate() {
                    let w = sign * inv[(a, b)];
                    let src = v.row(ib);
                    for (g, x) in grad.row_mut(ia).iter_mut().zip(src) {
                        *g += w * x;
                    }
                }
            }
        }
    }
    for (g, x) in grad.as_mut_slice().iter_mut().zip(v.as_slice()) {
        *g -= 2.0 * l2_reg * x;
    }
    Ok(grad)
}

/// Uniform `[−scale, scale]` factors for `num_items` rows.
pub fn init_factors(
    num_items: usize,
    config: &KernelTrainConfig,
) -> Result<DiversityKernelLowRank> {
    config.validate()?;
    let scale = config.init_scale();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut v = Matrix::zeros(num_items, config.latent_dim);
    for x in v.as_mut_slice() {
        *x = rng.gen_range(-scale..=scale);
    }
    DiversityKernelLowRank::new(v)
}

/// Fits `V` for a catalog of `num_items` items by gradient ascent.
///
/// After two consecutive epochs of decreasing objective the learning rate is
/// halved. Returns the unnormalized factors and the per-epoch objective log.
pub fn train_kernel(
    num_items: usize,
    pairs: &[SetPair],
    config: &KernelTrainConfig,
) -> Result<(DiversityKernelLowRank, Vec<KernelEpoch>)> {
    let v = init_factors(num_items, config)?;
    train_kernel_from(v, pairs, config)
}

/// [`train_kernel`] starting from given factors.
pub fn train_kernel_from(
    mut v: DiversityKernelLowRank,
    pairs: &[SetPair],
    config: &KernelTrainConfig,
) -> Result<(DiversityKernelLowRank, Vec<KernelEpoch>)> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::Empty("kernel training pairs"));
    }
    let mut lr = config.learning_rate;
    let mut prev = paired_set_objective(&v, pairs, config.l2_reg, config.jitter)?;
    if !prev.is_finite() {
        return Err(Error::NonFinite("initial kernel objective"));
    }
    let scale = 1.0 / pairs.len() as f64;
    let mut decreases = 0;
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let grad = paired_set_gradient(&v, pairs, config.l2_reg, config.jitter)?;
        let step = lr * scale;
        for (x, g) in v
            .factors_mut()
            .as_mut_slice()
            .iter_mut()
            .zip(grad.as_slice())
        {
            *x += step * g;
        }
        let objective = paired_set_objective(&v, pairs, config.l2_reg, config.jitter)?;
        if !objective.is_finite() {
            log::error!("kernel objective became {objective} at epoch {epoch} (lr {lr})");
            return Err(Error::NonFinite("kernel objective"));
        }
        log::debug!("kernel epoch {epoch}: objective {objective:.6} lr {lr:e}");
        log.push(KernelEpoch {
            epoch,
            objective,
            learning_rate: lr,
        });
        if objective < prev {
            decreases += 1;
            if decreases == 2 {
                lr *= 0.5;
                decreases = 0;
                log::info!(
                    "kernel objective fell two epochs running; learning rate halved to {lr:e}"
                );
            }
        } else {
            decreases = 0;
        }
        prev = objective;
    }
    Ok((v, log))
}

/// Rescales every factor row to unit length so that `diag(K) = 1`. An
/// all-zero row is replaced by a random unit row seeded by its index.
pub fn normalize_kernel(v: &DiversityKernelLowRank) -> DiversityKernelLowRank {
    let mut f = v.factors().clone();
    let d = f.cols();
    for i in 0..f.rows() {
        let row = f.row_mut(i);
        let mut norm = libm::sqrt(linalg::dot(row, row));
        if norm == 0.0 || !norm.is_finite() {
            log::warn!("kernel row {i} has zero norm; replacing with a random unit row");
            let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
            while norm == 0.0 || !norm.is_finite() {
                for x in row.iter_mut() {
                    *x = rng.gen_range(-1.0..1.0);
                }
                norm = libm::sqrt(linalg::dot(row, row));
            }
        }
        for x in row.iter_mut().take(d) {
            *x /= norm;
        }
    }
    DiversityKernelLowRank::with_normalized(f, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use dppseq_oracle::{cofactor_det, oracle_fd_gradient, rel_err, vec_rel_err};

    fn random_v(m: usize, d: usize, seed: u64) -> DiversityKernelLowRank {
        let cfg = KernelTrainConfig {
            latent_dim: d,
            seed,
            init_scale: Some(1.0),
            ..Default::default()
        };
        init_factors(m, &cfg).unwrap()
    }

    #[test]
    fn singleton_pair_objective() {
        let v =
            DiversityKernelLowRank::new(Matrix::from_rows(&[&[3.0, 4.0], &[1.0, 0.0]]).unwrap())
                .unwrap();
        let pairs = [SetPair::new(alloc::vec![0], alloc::vec![1])];
        let got = paired_set_objective(&v, &pairs, 0.0, 0.0).unwrap();
        assert!((got - (libm::log(25.0) - libm::log(1.0))).abs() < 1e-14);
    }

    #[test]
    fn identical_sets_leave_only_the_regularizer() {
        let v = random_v(6, 3, 1);
        let pairs = [SetPair::new(alloc::vec![0, 2, 4], alloc::vec![0, 2, 4])];
        let got = paired_set_objective(&v, &pairs, 0.3, 1e-6).unwrap();
        assert!((got + 0.3 * v.factors().frobenius_sq()).abs() < 1e-12);
    }

    #[test]
    fn objective_matches_cofactor_oracle() {
        let v = random_v(9, 4, 2);
        let pairs = [
            SetPair::new(alloc::vec![0, 1, 2], alloc::vec![3, 4, 5]),
            SetPair::new(alloc::vec![6, 7, 8], alloc::vec![0, 4, 8]),
            SetPair::new(alloc::vec![2, 5, 7], alloc::vec![1, 3, 6]),
        ];
        let jitter = 1e-6;
        let f = v.factors();
        let oracle_logdet = |set: &[usize]| {
            let k = set.len();
            let mut g = alloc::vec![0.0; k * k];
            for a in 0..k {
                for b in 0..k {
                    g[a * k + b] = linalg::dot(f.row(set[a]), f.row(set[b]))
                        + if a == b { jitter } else { 0.0 };
                }
            }
            libm::log(cofactor_det(k, &g))
        };
        let want: f64 = pairs
            .iter()
            .map(|p| oracle_logdet(&p.positive) - oracle_logdet(&p.negative))
            .sum::<f64>()
            - 0.01 * f.frobenius_sq();
        let got = paired_set_objective(&v, &pairs, 0.01, jitter).unwrap();
        assert!(rel_err(want, got) < 1e-9);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let v = random_v(10, 3, 3);
        let pairs = [
            SetPair::new(alloc::vec![0, 1, 2], alloc::vec![3, 4, 5]),
            SetPair::new(alloc::vec![6, 9], alloc::vec![7, 8]),
            SetPair::new(alloc::vec![2, 5, 8], alloc::vec![1, 4]),
        ];
        let grad = paired_set_gradient(&v, &pairs, 0.05, 1e-6).unwrap();
        let fd = oracle_fd_gradient(
            |x| {
                let m = Matrix::from_vec(10, 3, x.to_vec()).unwrap();
                let vv = DiversityKernelLowRank::new(m).unwrap();
                paired_set_objective(&vv, &pairs, 0.05, 1e-6).unwrap()
            },
            v.factors().as_slice(),
            1e-5,
        )
        .unwrap();
        assert!(vec_rel_err(grad.as_slice(), &fd) < 1e-4);
    }

    #[test]
    fn heavy_regularization_shrinks_monotonically() {
        let pairs = [SetPair::new(alloc::vec![0, 1], alloc::vec![2, 3])];
        let cfg = KernelTrainConfig {
            latent_dim: 3,
            learning_rate: 1e-5,
            epochs: 1,
            l2_reg: 1e4,
            seed: 4,
            ..Default::default()
        };
        let mut v = init_factors(4, &cfg).unwrap();
        let start = v.factors().frobenius_sq();
        let mut prev = start;
        for _ in 0..10 {
            v = train_kernel_from(v, &pairs, &cfg).unwrap().0;
            let now = v.factors().frobenius_sq();
            assert!(now < prev);
            prev = now;
        }
        assert!(prev < 0.05 * start, "{prev} vs {start}");
    }

    #[test]
    fn objective_does_not_decrease_with_small_steps() {
        let pairs: Vec<SetPair> = (0..8)
            .map(|i| {
                SetPair::new(
                    alloc::vec![i, (i + 5) % 12],
                    alloc::vec![(i + 1) % 12, (i + 2) % 12],
                )
            })
            .collect();
        let cfg = KernelTrainConfig {
            latent_dim: 4,
            learning_rate: 0.001,
            epochs: 40,
            seed: 5,
            ..Default::default()
        };
        let (_, log) = train_kernel(12, &pairs, &cfg).unwrap();
        for w in log.windows(2) {
            assert!(w[1].objective >= w[0].objective - 1e-12, "{log:?}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let pairs = [SetPair::new(alloc::vec![0, 1], alloc::vec![2, 3])];
        let cfg = KernelTrainConfig {
            latent_dim: 3,
            epochs: 5,
            seed: 6,
            ..Default::default()
        };
        assert_eq!(
            train_kernel(4, &pairs, &cfg).unwrap(),
            train_kernel(4, &pairs, &cfg).unwrap()
        );
    }

    #[test]
    fn planted_clusters_separate_positive_from_negative_sets() {
        let train = crate::synth::two_cluster_pairs(10, 200, 1).unwrap();
        let held_out = crate::synth::two_cluster_pairs(10, 200, 2).unwrap();
        let cfg = KernelTrainConfig {
            latent_dim: 3,
            epochs: 200,
            seed: 3,
            ..Default::default()
        };
        let (k, log) = train_kernel(20, &train, &cfg).unwrap();
        assert_eq!(log.len(), 200);
        let margin: f64 = held_out
            .iter()
            .map(|p| {
                let pos = set_log_det(k.factors(), &p.positive, cfg.jitter).unwrap();
                let neg = set_log_det(k.factors(), &p.negative, cfg.jitter).unwrap();
                pos - neg
            })
            .sum::<f64>()
            / held_out.len() as f64;
        assert!(margin > 0.0, "{margin}");
    }

    #[test]
    fn rejects_empty_pairs_and_bad_config() {
        let cfg = KernelTrainConfig::default();
        assert!(train_kernel(4, &[], &cfg).is_err());
        let bad = KernelTrainConfig {
            latent_dim: 0,
            ..Default::default()
        };
        assert!(init_factors(4, &bad).is_err());
    }

    #[test]
    fn normalize_fixtures() {
        let v =
            DiversityKernelLowRank::new(Matrix::from_rows(&[&[3.0, 4.0], &[0.0, 1.0]]).unwrap())
                .unwrap();
        let n = normalize_kernel(&v);
        assert!(n.is_normalized());
        assert_eq!(n.factors().row(0), &[0.6, 0.8]);
        assert_eq!(n.factors().row(1), &[0.0, 1.0]);
        let again = normalize_kernel(&n);
        assert_eq!(again.factors(), n.factors());
    }

    #[test]
    fn zero_rows_become_unit_rows() {
        let v = DiversityKernelLowRank::new(
            Matrix::from_rows(&[&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0]]).unwrap(),
        )
        .unwrap();
        let n = normalize_kernel(&v);
        let r = n.factors().row(0);
        assert!((linalg::dot(r, r) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalized_subsets_have_bounded_volume_and_keep_signs() {
        let v = random_v(30, 5, 7);
        let n = normalize_kernel(&v);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let k = rng.gen_range(1..6);
            let mut set: Vec<usize> = Vec::new();
            while set.len() < k {
                let i = rng.gen_range(0..30);
                if !set.contains(&i) {
                    set.push(i);
                }
            }
            let d = linalg::det(&n.submatrix(&set).unwrap()).unwrap();
            assert!((-1e-12..=1.0 + 1e-12).contains(&d));
        }
        for i in 0..30 {
            for j in 0..30 {
                assert_eq!(v.similarity(i, j) > 0.0, n.similarity(i, j) > 0.0);
            }
        }
    }
}
