//! Embedding scorer: a user vector plus the mean input embedding of the
//! previous items forms a context, and each candidate scores
//! `context · output_embedding + bias`. Trained with plain mini-batch SGD
//! and hand-written backpropagation.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{EvalCase, SequenceInstance};
use crate::diverse::CategoryCatalog;
use crate::dpp::DiversityKernelLowRank;
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::losses::{self, LossKind, LossResult};
use crate::metrics::{self, Scorer};

#[derive(Debug, Clone, PartialEq)]
pub struct ScorerParams {
    pub user_emb: Matrix,
    /// Embeddings of items when they appear as context.
    pub item_in: Matrix,
    /// Embeddings of items when they are scored.
    pub item_out: Matrix,
    pub item_bias: Vec<f64>,
}

impl ScorerParams {
    /// Uniform `±0.1/√d` embeddings, zero biases.
    pub fn init(num_users: usize, num_items: usize, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig(
                "embedding dimension must be at least 1".into(),
            ));
        }
        let bound = 0.1 / libm::sqrt(dim as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |rows: usize| {
            let data = (0..rows * dim)
                .map(|_| rng.gen_range(-bound..=bound))
                .collect();
            Matrix::from_vec(rows, dim, data)
        };
        Ok(ScorerParams {
            user_emb: fill(num_users)?,
            item_in: fill(num_items)?,
            item_out: fill(num_items)?,
            item_bias: vec![0.0; num_items],
        })
    }

    pub fn zeros(num_users: usize, num_items: usize, dim: usize) -> Self {
        ScorerParams {
            user_emb: Matrix::zeros(num_users, dim),
            item_in: Matrix::zeros(num_items, dim),
            item_out: Matrix::zeros(num_items, dim),
            item_bias: vec![0.0; num_items],
        }
    }

    pub fn from_parts(
        user_emb: Matrix,
        item_in: Matrix,
        item_out: Matrix,
        item_bias: Vec<f64>,
    ) -> Result<Self> {
        let d = user_emb.cols();
        if d == 0 {
            return Err(Error::InvalidConfig(
                "embedding dimension must be at least 1".into(),
            ));
        }
        for m in [&item_in, &item_out] {
            if m.cols() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: m.cols(),
                });
            }
        }
        if item_in.rows() != item_out.rows() {
            return Err(Error::DimensionMismatch {
                expected: item_in.rows(),
                got: item_out.rows(),
            });
        }
        if item_bias.len() != item_in.rows() {
            return Err(Error::DimensionMismatch {
                expected: item_in.rows(),
                got: item_bias.len(),
            });
        }
        let p = ScorerParams {
            user_emb,
            item_in,
            item_out,
            item_bias,
        };
        if !p.is_finite() {
            return Err(Error::NonFinite("scorer parameters"));
        }
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.user_emb.cols()
    }

    pub fn num_users(&self) -> usize {
        self.user_emb.rows()
    }

    pub fn num_items(&self) -> usize {
        self.item_bias.len()
    }

    pub fn is_finite(&self) -> bool {
        [&self.user_emb, &self.item_in, &self.item_out]
            .iter()
            .flat_map(|m| m.as_slice())
            .chain(&self.item_bias)
            .all(|x| x.is_finite())
    }

    fn check_item(&self, item: usize) -> Result<()> {
        if item >= self.num_items() {
            return Err(Error::IndexOutOfRange {
                index: item,
                len: self.num_items(),
            });
        }
        Ok(())
    }

    /// User embedding plus the mean context embedding of `previous`.
    pub fn context(&self, user: usize, previous: &[usize]) -> Result<Vec<f64>> {
        if user >= self.num_users() {
            return Err(Error::IndexOutOfRange {
                index: user,
                len: self.num_users(),
            });
        }
        if previous.is_empty() {
            return Err(Error::Empty("previous items"));
        }
        let mut c = self.user_emb.row(user).to_vec();
        let w = 1.0 / previous.len() as f64;
        for &p in previous {
            self.check_item(p)?;
            for (ck, &x) in c.iter_mut().zip(self.item_in.row(p)) {
                *ck += w * x;
            }
        }
        Ok(c)
    }

    pub fn score(&self, user: usize, previous: &[usize], candidates: &[usize]) -> Result<Vec<f64>> {
        let c = self.context(user, previous)?;
        candidates
            .iter()
            .map(|&i| {
                self.check_item(i)?;
                Ok(dot(&c, self.item_out.row(i)) + self.item_bias[i])
            })
            .collect()
    }

    /// Adds the gradient of `Σ_k grad_scores[k] · score(candidates[k])` to `grad`.
    pub fn backprop(
        &self,
        user: usize,
        previous: &[usize],
        candidates: &[usize],
        grad_scores: &[f64],
        grad: &mut ScorerGrad,
    ) -> Result<()> {
        if grad_scores.len() != candidates.len() {
            return Err(Error::DimensionMismatch {
                expected: candidates.len(),
                got: grad_scores.len(),
            });
        }
        let d = self.dim();
        let c = self.context(user, previous)?;
        let mut dc = vec![0.0; d];
        for (&i, &g) in candidates.iter().zip(grad_scores) {
            self.check_item(i)?;
            if g == 0.0 {
                continue;
            }
            *grad.item_bias.entry(i).or_insert(0.0) += g;
            let out = grad.item_out.entry(i).or_insert_with(|| vec![0.0; d]);
            for k in 0..d {
                out[k] += g * c[k];
                dc[k] += g * self.item_out[(i, k)];
            }
        }
        add_row(&mut grad.user_emb, user, &dc, 1.0);
        let w = 1.0 / previous.len() as f64;
        for &p in previous {
            add_row(&mut grad.item_in, p, &dc, w);
        }
        Ok(())
    }

    /// `θ ← θ − step · grad`.
    pub fn apply(&mut self, grad: &ScorerGrad, step: f64) {
        let update = |m: &mut Matrix, rows: &BTreeMap<usize, Vec<f64>>| {
            for (&r, g) in rows {
                for (x, gk) in m.row_mut(r).iter_mut().zip(g) {
                    *x -= step * gk;
                }
            }
        };
        update(&mut self.user_emb, &grad.user_emb);
        update(&mut self.item_in, &grad.item_in);
        update(&mut self.item_out, &grad.item_out);
        for (&i, g) in &grad.item_bias {
            self.item_bias[i] -= step * g;
        }
    }
}

impl Scorer for ScorerParams {
    fn score(&self, user: usize, previous: &[usize], candidates: &[usize]) -> Result<Vec<f64>> {
        ScorerParams::score(self, user, previous, candidates)
    }
}

fn add_row(rows: &mut BTreeMap<usize, Vec<f64>>, r: usize, g: &[f64], w: f64) {
    let row = rows.entry(r).or_insert_with(|| vec![0.0; g.len()]);
    for (x, gk) in row.iter_mut().zip(g) {
        *x += w * gk;
    }
}

/// Sparse gradient accumulator keyed by the rows an instance touches.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScorerGrad {
    pub user_emb: BTreeMap<usize, Vec<f64>>,
    pub item_in: BTreeMap<usize, Vec<f64>>,
    pub item_out: BTreeMap<usize, Vec<f64>>,
    pub item_bias: BTreeMap<usize, f64>,
}

impl ScorerGrad {
    pub fn clear(&mut self) {
        self.user_emb.clear();
        self.item_in.clear();
        self.item_out.clear();
        self.item_bias.clear();
    }
}

/// Loss of one instance and its parameter gradient, accumulated into `grad`.
pub fn instance_loss(
    params: &ScorerParams,
    instance: &SequenceInstance,
    kind: LossKind,
    kernel: Option<&DiversityKernelLowRank>,
    grad: &mut ScorerGrad,
) -> Result<LossResult> {
    let items = kind.scored_items(instance);
    let scores = params.score(instance.user, &instance.previous, &items)?;
    let loss = losses::compute(kind, instance, &scores, kernel)?;
    if !loss.skipped {
        params.backprop(
            instance.user,
            &instance.previous,
            &items,
            &loss.grad_scores,
            grad,
        )?;
    }
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 32,
            learning_rate: 0.5,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::InvalidConfig(
                "d, batch size, epochs and patience must be at least 1".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(
                "scorer learning rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Patience-based stopping on a score that should increase.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::NEG_INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Records an epoch's score. Returns whether it is a new best.
    pub fn observe(&mut self, epoch: usize, score: f64) -> bool {
        if score > self.best {
            self.best = score;
            self.best_epoch = epoch;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Validation data for the per-epoch NDCG@5 check.
#[derive(Debug, Clone, Copy)]
pub struct Validation<'a> {
    pub cases: &'a [EvalCase],
    pub num_items: usize,
    pub catalog: &'a CategoryCatalog,
}

pub const VALIDATION_CUTOFF: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// One-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_ndcg: f64,
    pub skipped: usize,
    pub improved: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation score.
    pub params: ScorerParams,
    pub best_epoch: usize,
    pub best_val_ndcg: f64,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// Mini-batch SGD over `instances` with early stopping on validation
/// NDCG@5. `on_epoch` sees every epoch record as it is produced.
pub fn train(
    mut params: ScorerParams,
    instances: &[SequenceInstance],
    kind: LossKind,
    kernel: Option<&DiversityKernelLowRank>,
    validation: Validation<'_>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if instances.is_empty() {
        return Err(Error::Empty("training instances"));
    }
    kind.check_targets(instances[0].targets.len())?;
    match (kind.needs_kernel(), kernel) {
        (true, None) => {
            return Err(Error::InvalidConfig(alloc::format!(
                "{kind} needs a diversity kernel"
            )))
        }
        (true, Some(k)) if k.num_items() < params.num_items() => {
            return Err(Error::DimensionMismatch {
                expected: params.num_items(),
                got: k.num_items(),
            })
        }
        _ => {}
    }
    let kernel = if kind.needs_kernel() { kernel } else { None };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..instances.len()).collect();
    let mut grad = ScorerGrad::default();
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = params.clone();
    let mut history = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let (mut total, mut counted, mut skipped) = (0.0, 0usize, 0usize);
        for batch in order.chunks(config.batch_size) {
            grad.clear();
            for &k in batch {
                let loss = instance_loss(&params, &instances[k], kind, kernel, &mut grad)?;
                if loss.skipped || !loss.value.is_finite() {
                    skipped += 1;
                    log::debug!("epoch {epoch}: skipped instance {k} with zero likelihood");
                } else {
                    total += loss.value;
                    counted += 1;
                }
            }
            params.apply(&grad, config.learning_rate / batch.len() as f64);
        }
        if skipped * 100 > instances.len() {
            return Err(Error::TooManySkipped {
                epoch,
                skipped,
                total: instances.len(),
            });
        }
        if !params.is_finite() {
            return Err(Error::NonFinite("scorer parameters diverged"));
        }
        let val = metrics::mean_ndcg(
            &params,
            validation.cases,
            validation.num_items,
            validation.catalog,
            VALIDATION_CUTOFF,
        )?;
        let improved = stopper.observe(epoch, val);
        if improved {
            best.clone_from(&params);
        }
        let record = EpochRecord {
            epoch,
            train_loss: if counted > 0 {
                total / counted as f64
            } else {
                f64::NAN
            },
            val_ndcg: val,
            skipped,
            improved,
        };
        log::info!(
            "{kind} epoch {epoch}: loss {:.6} val Nd@5 {val:.5}",
            record.train_loss
        );
        on_epoch(&record);
        history.push(record);
        if stopper.should_stop() {
            stopped_early = true;
            break;
        }
    }
    Ok(TrainOutcome {
        params: best,
        best_epoch: stopper.best_epoch(),
        best_val_ndcg: stopper.best(),
        history,
        stopped_early,
    })
}
