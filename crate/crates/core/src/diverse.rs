//! Ground-truth diverse item sets for diversity-kernel learning.
//!
//! Positive sets are drawn from a user's training items by weighted sampling
//! without replacement: after each pick, every remaining item that shares a
//! category with the picked one has its weight multiplied by `decay`, which
//! pushes each set toward covering several categories. Sets are emitted until
//! every training item has appeared at least once. Each positive set is paired
//! with a negative set of unseen items drawn from the same categories.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Item → categories and category → items lookups for a catalog.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryCatalog {
    item_categories: Vec<Vec<usize>>,
    by_category: Vec<Vec<usize>>,
}

impl CategoryCatalog {
    /// `item_categories[i]` lists the categories of catalog item `i`; every
    /// category index must be below `num_categories`.
    pub fn new(item_categories: Vec<Vec<usize>>, num_categories: usize) -> Result<Self> {
        let mut by_category = vec![Vec::new(); num_categories];
        for (item, cats) in item_categories.iter().enumerate() {
            for &c in cats {
                if c >= num_categories {
                    return Err(Error::IndexOutOfRange {
                        index: c,
                        len: num_categories,
                    });
                }
                by_category[c].push(item);
            }
        }
        Ok(CategoryCatalog {
            item_categories,
            by_category,
        })
    }

    pub fn num_items(&self) -> usize {
        self.item_categories.len()
    }

    pub fn num_categories(&self) -> usize {
        self.by_category.len()
    }

    pub fn categories(&self, item: usize) -> &[usize] {
        &self.item_categories[item]
    }

    pub fn items_in(&self, category: usize) -> &[usize] {
        &self.by_category[category]
    }

    pub fn item_categories(&self) -> &[Vec<usize>] {
        &self.item_categories
    }

    pub fn shares_category(&self, a: usize, b: usize) -> bool {
        let cb = &self.item_categories[b];
        self.item_categories[a].iter().any(|c| cb.contains(c))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiverseSetConfig {
    /// Weight multiplier applied to same-category items after each pick.
    pub decay: f64,
    /// Items per set (shrinks to the user's item count when smaller).
    pub set_size: usize,
}

impl Default for DiverseSetConfig {
    fn default() -> Self {
        DiverseSetConfig {
            decay: 0.5,
            set_size: 5,
        }
    }
}

impl DiverseSetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::InvalidConfig(alloc::format!(
                "decay must lie in (0, 1], got {}",
                self.decay
            )));
        }
        if self.set_size == 0 {
            return Err(Error::InvalidConfig("set_size must be positive".into()));
        }
        Ok(())
    }
}

/// Matched positive and negative sets for one user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairedDiverseSets {
    pub user: usize,
    pub positive: Vec<Vec<usize>>,
    pub negative: Vec<Vec<usize>>,
}

/// Positive diverse sets for one user's training items.
///
/// `decay` must lie in `(0, 1]`; `1.0` switches the decay off and is kept
/// available as a control.
pub fn generate_diverse_sets(
    user_items: &[usize],
    catalog: &CategoryCatalog,
    config: &DiverseSetConfig,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if user_items.is_empty() {
        return Err(Error::Empty("user items"));
    }
    config.validate()?;
    if let Some(&bad) = user_items.iter().find(|&&i| i >= catalog.num_items()) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            len: catalog.num_items(),
        });
    }

    let mut items: Vec<usize> = Vec::with_capacity(user_items.len());
    for &i in user_items {
        if !items.contains(&i) {
            items.push(i);
        }
    }
    let n = items.len();
    let size = config.set_size.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut covered = vec![false; n];
    let mut uncovered = n;
    let mut sets = Vec::new();
    let mut weights = vec![0.0; n];
    let mut taken = vec![false; n];

    while uncovered > 0 {
        weights.iter_mut().for_each(|w| *w = 1.0);
        taken.iter_mut().for_each(|t| *t = false);
        let mut set = Vec::with_capacity(size);
        for _ in 0..size {
            let pick = weighted_pick(&weights, &taken, &mut rng);
            taken[pick] = true;
            set.push(items[pick]);
            if !covered[pick] {
                covered[pick] = true;
                uncovered -= 1;
            }
            for j in 0..n {
                if !taken[j] && catalog.shares_category(items[pick], items[j]) {
                    weights[j] *= config.decay;
                }
            }
        }
        sets.push(set);
    }
    Ok(sets)
}

fn weighted_pick(weights: &[f64], taken: &[bool], rng: &mut impl Rng) -> usize {
    let total: f64 = weights
        .iter()
        .zip(taken)
        .filter(|(_, t)| !**t)
        .map(|(w, _)| w)
        .sum();
    let mut u = rng.gen::<f64>() * total;
    let mut last = 0;
    for (i, (&w, &t)) in weights.iter().zip(taken).enumerate() {
        if t {
            continue;
        }
        last = i;
        if u < w {
            return i;
        }
        u -= w;
    }
    last
}

/// One negative set matching `positive` category by category.
///
/// For each positive item, draws an unseen item sharing one of its
/// categories. When none is left, falls back to any unseen item.
pub fn sample_negative_set(
    positive: &[usize],
    user_history: &BTreeSet<usize>,
    catalog: &CategoryCatalog,
    seed: u64,
) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = Vec::with_capacity(positive.len());
    let mut pool: Vec<usize> = Vec::new();
    for &p in positive {
        if p >= catalog.num_items() {
            return Err(Error::IndexOutOfRange {
                index: p,
                len: catalog.num_items(),
            });
        }
        pool.clear();
        for &c in catalog.categories(p) {
            for &i in catalog.items_in(c) {
                if !user_history.contains(&i) && !chosen.contains(&i) && !pool.contains(&i) {
                    pool.push(i);
                }
            }
        }
        if pool.is_empty() {
            log::info!(
                "no unseen item shares a category with item {p}; sampling from all unseen items"
            );
            pool.extend(
                (0..catalog.num_items())
                    .filter(|i| !user_history.contains(i) && !chosen.contains(i)),
            );
        }
        if pool.is_empty() {
            return Err(Error::CatalogExhausted);
        }
        chosen.push(pool[rng.gen_range(0..pool.len())]);
    }
    Ok(chosen)
}

/// Positive sets for one user plus a matched negative set for each.
///
/// The per-user seed is `seed ^ user`, so results do not depend on the order
/// in which users are processed.
pub fn generate_pairs(
    user: usize,
    train_items: &[usize],
    full_history: &BTreeSet<usize>,
    catalog: &CategoryCatalog,
    config: &DiverseSetConfig,
    seed: u64,
) -> Result<PairedDiverseSets> {
    let user_seed = seed ^ user as u64;
    let positive = generate_diverse_sets(train_items, catalog, config, user_seed)?;
    let mut neg_rng = ChaCha8Rng::seed_from_u64(user_seed.rotate_left(32));
    let negative = positive
        .iter()
        .map(|set| sample_negative_set(set, full_history, catalog, neg_rng.gen()))
        .collect::<Result<Vec<_>>>()?;
    Ok(PairedDiverseSets {
        user,
        positive,
        negative,
    })
}
