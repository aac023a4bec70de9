//! Top-N ranking metrics and evaluation over all unseen items.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::data::EvalCase;
use crate::diverse::CategoryCatalog;
use crate::error::{Error, Result};

/// Anything that can score candidate items for a user given their most
/// recent items.
pub trait Scorer {
    fn score(&self, user: usize, previous: &[usize], candidates: &[usize]) -> Result<Vec<f64>>;
}

impl<F> Scorer for F
where
    F: Fn(usize, &[usize], &[usize]) -> Result<Vec<f64>>,
{
    fn score(&self, user: usize, previous: &[usize], candidates: &[usize]) -> Result<Vec<f64>> {
        self(user, previous, candidates)
    }
}

/// Fraction of `relevant` found in the first `n` entries of `ranked`.
pub fn recall_at(ranked: &[usize], relevant: &[usize], n: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let rel: BTreeSet<usize> = relevant.iter().copied().collect();
    let hits = ranked.iter().take(n).filter(|i| rel.contains(i)).count();
    hits as f64 / rel.len() as f64
}

/// Binary-relevance NDCG over the first `n` entries of `ranked`.
pub fn ndcg_at(ranked: &[usize], relevant: &[usize], n: usize) -> f64 {
    let rel: BTreeSet<usize> = relevant.iter().copied().collect();
    let discount = |k: usize| 1.0 / libm::log2(k as f64 + 2.0);
    let dcg: f64 = ranked
        .iter()
        .take(n)
        .enumerate()
        .filter(|(_, i)| rel.contains(i))
        .map(|(k, _)| discount(k))
        .sum();
    let ideal: f64 = (0..rel.len().min(n)).map(discount).sum();
    if ideal == 0.0 {
        0.0
    } else {
        dcg / ideal
    }
}

/// Distinct categories among the first `n` ranked items, over the total
/// number of categories.
pub fn category_coverage(ranked: &[usize], catalog: &CategoryCatalog, n: usize) -> f64 {
    if catalog.num_categories() == 0 {
        return 0.0;
    }
    let cats: BTreeSet<usize> = ranked
        .iter()
        .take(n)
        .flat_map(|&i| catalog.categories(i).iter().copied())
        .collect();
    cats.len() as f64 / catalog.num_categories() as f64
}

/// Harmonic mean of a quality score and a diversity score.
pub fn f_score(quality: f64, diversity: f64) -> f64 {
    if quality + diversity <= 0.0 {
        0.0
    } else {
        2.0 * quality * diversity / (quality + diversity)
    }
}

/// Indices of the `n` best candidates, highest score first. Ties go to the
/// lower item index; NaN scores rank last.
pub fn top_n(candidates: &[usize], scores: &[f64], n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    let key = |k: usize| {
        if scores[k].is_nan() {
            f64::NEG_INFINITY
        } else {
            scores[k]
        }
    };
    let cmp = |&a: &usize, &b: &usize| {
        key(b)
            .partial_cmp(&key(a))
            .unwrap_or(Ordering::Equal)
            .then(candidates[a].cmp(&candidates[b]))
    };
    let n = n.min(order.len());
    if n == 0 {
        return Vec::new();
    }
    if n < order.len() {
        order.select_nth_unstable_by(n - 1, cmp);
        order.truncate(n);
    }
    order.sort_by(cmp);
    order.into_iter().map(|k| candidates[k]).collect()
}

/// Metrics for one user at each cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct UserMetrics {
    pub user: usize,
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub coverage: Vec<f64>,
}

/// Ranks every item outside the case's history and scores the top of the
/// list. Cases with no relevant items or no candidates return `None`.
pub fn evaluate_case<S: Scorer + ?Sized>(
    scorer: &S,
    case: &EvalCase,
    num_items: usize,
    catalog: &CategoryCatalog,
    cutoffs: &[usize],
) -> Result<Option<UserMetrics>> {
    if case.relevant.is_empty() {
        return Ok(None);
    }
    let candidates: Vec<usize> = (0..num_items).filter(|i| !case.seen.contains(i)).collect();
    if candidates.is_empty() {
        return Ok(None);
    }
    let scores = scorer.score(case.user, &case.previous, &candidates)?;
    if scores.len() != candidates.len() {
        return Err(Error::DimensionMismatch {
            expected: candidates.len(),
            got: scores.len(),
        });
    }
    let max_n = cutoffs.iter().copied().max().unwrap_or(0);
    let ranked = top_n(&candidates, &scores, max_n);
    Ok(Some(UserMetrics {
        user: case.user,
        recall: cutoffs
            .iter()
            .map(|&n| recall_at(&ranked, &case.relevant, n))
            .collect(),
        ndcg: cutoffs
            .iter()
            .map(|&n| ndcg_at(&ranked, &case.relevant, n))
            .collect(),
        coverage: cutoffs
            .iter()
            .map(|&n| category_coverage(&ranked, catalog, n))
            .collect(),
    }))
}

/// User-averaged metrics at one cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub loss: String,
    pub targets: usize,
    pub cutoff: usize,
    pub recall: f64,
    pub ndcg: f64,
    pub coverage: f64,
    /// F of the mean quality `(recall + ndcg) / 2` against coverage.
    pub f: f64,
}

/// Averages per-user metrics in the order given.
pub fn summarize(
    loss: &str,
    targets: usize,
    cutoffs: &[usize],
    users: &[UserMetrics],
) -> Result<Vec<MetricRow>> {
    if users.is_empty() {
        return Err(Error::Empty("no users to evaluate"));
    }
    let n = users.len() as f64;
    let mean = |f: &dyn Fn(&UserMetrics) -> f64| users.iter().map(f).sum::<f64>() / n;
    Ok(cutoffs
        .iter()
        .enumerate()
        .map(|(k, &cutoff)| {
            let recall = mean(&|u| u.recall[k]);
            let ndcg = mean(&|u| u.ndcg[k]);
            let coverage = mean(&|u| u.coverage[k]);
            MetricRow {
                loss: loss.into(),
                targets,
                cutoff,
                recall,
                ndcg,
                coverage,
                f: f_score((recall + ndcg) / 2.0, coverage),
            }
        })
        .collect())
}

/// Scores drawn from a seeded hash of `(user, item)`, so a ranking is a
/// fixed uniformly random permutation per user.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomScorer {
    pub seed: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Scorer for RandomScorer {
    fn score(&self, user: usize, _previous: &[usize], candidates: &[usize]) -> Result<Vec<f64>> {
        let base = splitmix(self.seed ^ splitmix(user as u64));
        Ok(candidates
            .iter()
            .map(|&i| (splitmix(base ^ i as u64) >> 11) as f64 / (1u64 << 53) as f64)
            .collect())
    }
}

/// Sequential evaluation of every case. Excluded cases are dropped; the
/// caller can count them as `cases.len() - result.len()`.
pub fn evaluate<S: Scorer + ?Sized>(
    scorer: &S,
    cases: &[EvalCase],
    num_items: usize,
    catalog: &CategoryCatalog,
    cutoffs: &[usize],
) -> Result<Vec<UserMetrics>> {
    let mut out = Vec::with_capacity(cases.len());
    for case in cases {
        if let Some(m) = evaluate_case(scorer, case, num_items, catalog, cutoffs)? {
            out.push(m);
        }
    }
    Ok(out)
}

/// Mean NDCG at a single cutoff, or zero with no evaluable users.
pub fn mean_ndcg<S: Scorer + ?Sized>(
    scorer: &S,
    cases: &[EvalCase],
    num_items: usize,
    catalog: &CategoryCatalog,
    cutoff: usize,
) -> Result<f64> {
    let users = evaluate(scorer, cases, num_items, catalog, &[cutoff])?;
    if users.is_empty() {
        return Ok(0.0);
    }
    Ok(users.iter().map(|u| u.ndcg[0]).sum::<f64>() / users.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn approx(a: f64, b: f64) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn ndcg_known_values() {
        approx(ndcg_at(&[1, 2, 3, 4, 5], &[1], 5), 1.0);
        approx(ndcg_at(&[2, 3, 1, 4, 5], &[1], 5), 0.5);
        approx(ndcg_at(&[2, 3, 4, 5, 6], &[1], 5), 0.0);
        let l3 = libm::log2(3.0);
        approx(
            ndcg_at(&[9, 7, 8], &[7, 8], 3),
            (1.0 / l3 + 0.5) / (1.0 + 1.0 / l3),
        );
    }

    #[test]
    fn hand_computed_fixtures() {
        // a, b, c, d = 0, 1, 2, 3
        approx(recall_at(&[0, 1, 2], &[1, 3], 3), 0.5);
        let nd = ndcg_at(&[0, 1, 2], &[1, 3], 3);
        assert!((nd - 0.38685).abs() < 5e-6, "{nd}");
        approx(nd, (1.0 / libm::log2(3.0)) / (1.0 + 1.0 / libm::log2(3.0)));
        let cat = CategoryCatalog::new(vec![vec![1], vec![1, 2], vec![3]], 10).unwrap();
        approx(category_coverage(&[0, 1, 2], &cat, 3), 0.3);
        approx(f_score(0.04, 0.3), 0.024 / 0.34);
        assert!((f_score(0.04, 0.3) - 0.070588).abs() < 5e-7);
    }

    #[test]
    fn random_scorer_is_a_fixed_permutation() {
        let r = RandomScorer { seed: 4 };
        let a = r.score(3, &[], &[0, 1, 2, 3]).unwrap();
        assert_eq!(a, r.score(3, &[9], &[0, 1, 2, 3]).unwrap());
        assert_ne!(a, r.score(4, &[], &[0, 1, 2, 3]).unwrap());
        assert!(a.iter().all(|x| (0.0..1.0).contains(x)));
    }

    #[test]
    fn recall_known_values() {
        approx(recall_at(&[1, 2, 3], &[3, 9], 3), 0.5);
        approx(recall_at(&[1, 2, 3], &[3, 9], 2), 0.0);
        approx(recall_at(&[1, 2, 3], &[], 2), 0.0);
    }

    #[test]
    fn f_score_values() {
        approx(f_score(0.5, 0.5), 0.5);
        approx(f_score(0.0, 0.0), 0.0);
        approx(f_score(1.0, 0.0), 0.0);
        approx(f_score(0.2, 0.6), 0.3);
    }

    #[test]
    fn top_n_breaks_ties_by_index() {
        let cands = [5, 2, 9, 1];
        let scores = [1.0, 1.0, 3.0, 1.0];
        assert_eq!(top_n(&cands, &scores, 3), [9, 1, 2]);
        assert_eq!(top_n(&cands, &[f64::NAN, 0.0, 0.0, 0.0], 4), [1, 2, 9, 5]);
        assert_eq!(top_n(&cands, &scores, 10).len(), 4);
    }

    #[test]
    fn coverage_counts_distinct_categories() {
        let cat = CategoryCatalog::new(vec![vec![0], vec![0, 1], vec![2], vec![3]], 4).unwrap();
        approx(category_coverage(&[0, 1, 2], &cat, 3), 0.75);
        approx(category_coverage(&[0, 1, 2], &cat, 1), 0.25);
    }

    #[test]
    fn random_scorer_recall_matches_expectation() {
        // One relevant item among C candidates: the chance of landing in the
        // top 10 of a uniformly random ranking is 10 / C.
        let num_items = 200;
        let cat = CategoryCatalog::new(vec![vec![0]; num_items], 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cases: Vec<EvalCase> = (0..4000)
            .map(|u| EvalCase {
                user: u,
                previous: vec![0],
                seen: (0..10).collect(),
                relevant: vec![rng.gen_range(10..num_items)],
            })
            .collect();
        let noise = core::cell::RefCell::new(ChaCha8Rng::seed_from_u64(17));
        let scorer = |_u: usize, _p: &[usize], c: &[usize]| -> Result<Vec<f64>> {
            Ok(c.iter().map(|_| noise.borrow_mut().gen::<f64>()).collect())
        };
        let users = evaluate(&scorer, &cases, num_items, &cat, &[10]).unwrap();
        let rows = summarize("random", 1, &[10], &users).unwrap();
        let p = 10.0 / 190.0;
        let sigma = libm::sqrt(p * (1.0 - p) / 4000.0);
        assert!(
            (rows[0].recall - p).abs() < 4.0 * sigma,
            "{} vs {p}",
            rows[0].recall
        );
    }

    #[test]
    fn oracle_scorer_is_perfect() {
        let num_items = 50;
        let cat = CategoryCatalog::new(vec![vec![0]; num_items], 1).unwrap();
        let cases: Vec<EvalCase> = (0..20)
            .map(|u| EvalCase {
                user: u,
                previous: vec![u],
                seen: [u].into_iter().collect(),
                relevant: vec![(u + 1) % num_items, (u + 7) % num_items],
            })
            .collect();
        let scorer = |u: usize, _p: &[usize], c: &[usize]| -> Result<Vec<f64>> {
            let rel = [(u + 1) % num_items, (u + 7) % num_items];
            Ok(c.iter()
                .map(|i| if rel.contains(i) { 1.0 } else { 0.0 })
                .collect())
        };
        let users = evaluate(&scorer, &cases, num_items, &cat, &[5, 10]).unwrap();
        for row in summarize("oracle", 2, &[5, 10], &users).unwrap() {
            approx(row.recall, 1.0);
            approx(row.ndcg, 1.0);
        }
    }

    #[test]
    fn empty_relevance_is_excluded() {
        let cat = CategoryCatalog::new(vec![vec![0]; 3], 1).unwrap();
        let case = EvalCase {
            user: 0,
            previous: vec![],
            seen: BTreeSet::new(),
            relevant: vec![],
        };
        let scorer =
            |_: usize, _: &[usize], c: &[usize]| -> Result<Vec<f64>> { Ok(vec![0.0; c.len()]) };
        assert!(evaluate_case(&scorer, &case, 3, &cat, &[5])
            .unwrap()
            .is_none());
    }
}
