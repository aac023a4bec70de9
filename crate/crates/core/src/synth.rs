//! Seeded synthetic data with planted structure, for smoke runs and tests.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::RawRecord;
use crate::error::{Error, Result};
use crate::kernel::SetPair;

/// Items `0..half` form one cluster and `half..2*half` the other. Positive
/// sets take one item from each cluster; negative sets take two items from
/// the same cluster.
pub fn two_cluster_pairs(half: usize, count: usize, seed: u64) -> Result<Vec<SetPair>> {
    if half < 2 {
        return Err(Error::InvalidConfig(
            "each cluster needs at least two items".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let a = rng.gen_range(0..half);
            let b = half + rng.gen_range(0..half);
            let base = if rng.gen_bool(0.5) { 0 } else { half };
            let x = rng.gen_range(0..half);
            let mut y = rng.gen_range(0..half - 1);
            if y >= x {
                y += 1;
            }
            SetPair::new(vec![a, b], vec![base + x, base + y])
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub users: usize,
    pub items: usize,
    pub categories: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Chance of moving to the user's other preferred category at each step.
    pub switch_prob: f64,
    /// Chance of a step drawn from any category.
    pub noise: f64,
    /// Exponent of the within-category popularity curve.
    pub popularity: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            users: 500,
            items: 200,
            categories: 10,
            min_len: 25,
            max_len: 40,
            switch_prob: 0.4,
            noise: 0.05,
            popularity: 0.8,
            seed: 0,
        }
    }
}

/// Interaction log in which every user draws from two preferred categories,
/// alternating between them, with occasional off-preference steps. Item `i`
/// belongs to category `i % categories`; users never repeat an item.
pub fn synthetic_interactions(cfg: &SyntheticConfig) -> Result<Vec<RawRecord>> {
    if cfg.categories < 2 || cfg.items < 2 * cfg.categories {
        return Err(Error::InvalidConfig(
            "need at least two categories of two items".into(),
        ));
    }
    if cfg.min_len == 0 || cfg.min_len > cfg.max_len || cfg.max_len > cfg.items {
        return Err(Error::InvalidConfig(
            "sequence lengths must satisfy 1 ≤ min ≤ max ≤ items".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let members: Vec<Vec<usize>> = (0..cfg.categories)
        .map(|c| (c..cfg.items).step_by(cfg.categories).collect())
        .collect();
    let weights: Vec<Vec<f64>> = members
        .iter()
        .map(|m| {
            (0..m.len())
                .map(|r| libm::pow(r as f64 + 1.0, -cfg.popularity))
                .collect()
        })
        .collect();

    let mut out = Vec::new();
    for u in 0..cfg.users {
        let mut cats: Vec<usize> = (0..cfg.categories).collect();
        cats.shuffle(&mut rng);
        let (pref, mut current) = ([cats[0], cats[1]], 0usize);
        let len = rng.gen_range(cfg.min_len..=cfg.max_len);
        let mut used = vec![false; cfg.items];
        let mut step = 0;
        while step < len {
            if rng.gen_bool(cfg.switch_prob) {
                current = 1 - current;
            }
            let cat = if rng.gen_bool(cfg.noise) {
                rng.gen_range(0..cfg.categories)
            } else {
                pref[current]
            };
            let avail: Vec<(usize, f64)> = members[cat]
                .iter()
                .zip(&weights[cat])
                .filter(|(i, _)| !used[**i])
                .map(|(i, w)| (*i, *w))
                .collect();
            if avail.is_empty() {
                current = 1 - current;
                if members[pref[0]]
                    .iter()
                    .chain(&members[pref[1]])
                    .all(|&i| used[i])
                {
                    let rest: Vec<usize> = (0..cfg.items).filter(|&i| !used[i]).collect();
                    let i = *rest.choose(&mut rng).expect("max_len ≤ items");
                    used[i] = true;
                    out.push(record(u, i, step, cfg.categories));
                    step += 1;
                }
                continue;
            }
            let pick = WeightedIndex::new(avail.iter().map(|a| a.1)).expect("positive weights");
            let i = avail[pick.sample(&mut rng)].0;
            used[i] = true;
            out.push(record(u, i, step, cfg.categories));
            step += 1;
        }
    }
    Ok(out)
}

fn record(user: usize, item: usize, step: usize, categories: usize) -> RawRecord {
    RawRecord {
        user: format!("u{user}"),
        item: format!("i{item}"),
        timestamp: 1_000 * user as i64 + step as i64,
        categories: vec![format!("c{}", item % categories)],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::InteractionLog;
    use alloc::collections::{BTreeMap, BTreeSet};

    #[test]
    fn cluster_pairs_follow_the_plan() {
        for p in two_cluster_pairs(10, 200, 1).unwrap() {
            assert!(p.positive[0] < 10 && p.positive[1] >= 10);
            assert_ne!(p.negative[0], p.negative[1]);
            assert_eq!(p.negative[0] < 10, p.negative[1] < 10);
        }
    }

    #[test]
    fn synthetic_shape() {
        let cfg = SyntheticConfig::default();
        let rows = synthetic_interactions(&cfg).unwrap();
        let log = InteractionLog::from_raw(&rows).unwrap();
        assert_eq!(log.num_users(), 500);
        assert!(log.num_items() <= 200 && log.num_items() > 150);
        assert_eq!(log.num_categories(), 10);
        let mut per_user: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for r in &rows {
            assert!(
                per_user.entry(&r.user).or_default().insert(&r.item),
                "repeat item"
            );
        }
        for seq in per_user.values() {
            assert!((25..=40).contains(&seq.len()));
        }
        assert_eq!(rows, synthetic_interactions(&cfg).unwrap());
    }

    #[test]
    fn users_concentrate_on_two_categories() {
        let rows = synthetic_interactions(&SyntheticConfig::default()).unwrap();
        let mut counts: BTreeMap<&str, BTreeMap<&str, usize>> = BTreeMap::new();
        for r in &rows {
            *counts
                .entry(&r.user)
                .or_default()
                .entry(&r.categories[0])
                .or_default() += 1;
        }
        let mut top_two = 0usize;
        let mut total = 0usize;
        for c in counts.values() {
            let mut v: Vec<usize> = c.values().copied().collect();
            v.sort_unstable_by(|a, b| b.cmp(a));
            top_two += v.iter().take(2).sum::<usize>();
            total += v.iter().sum::<usize>();
        }
        assert!(top_two as f64 / total as f64 > 0.85);
    }
}
