//! Interaction logs and the sequence protocol built on them: k-core
//! filtering, per-user temporal splits, sliding-window training instances
//! and evaluation cases.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diverse::CategoryCatalog;
use crate::error::{Error, Result};

/// One input row before indexing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRecord {
    pub user: String,
    pub item: String,
    pub timestamp: i64,
    pub categories: Vec<String>,
}

/// An indexed interaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub timestamp: i64,
}

/// Indexed interactions plus the id tables that map indices back to input ids.
///
/// Users, items and categories are numbered in order of first appearance.
/// An item's categories are taken from its first record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionLog {
    records: Vec<Interaction>,
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    category_ids: Vec<String>,
    item_categories: Vec<Vec<usize>>,
}

fn intern(map: &mut BTreeMap<String, usize>, ids: &mut Vec<String>, key: &str) -> usize {
    if let Some(&i) = map.get(key) {
        return i;
    }
    let i = ids.len();
    ids.push(key.into());
    map.insert(key.into(), i);
    i
}

impl InteractionLog {
    pub fn from_raw(raw: &[RawRecord]) -> Result<Self> {
        let (mut users, mut items, mut cats) = (BTreeMap::new(), BTreeMap::new(), BTreeMap::new());
        let mut log = InteractionLog {
            records: Vec::with_capacity(raw.len()),
            user_ids: Vec::new(),
            item_ids: Vec::new(),
            category_ids: Vec::new(),
            item_categories: Vec::new(),
        };
        for r in raw {
            if r.categories.is_empty() {
                return Err(Error::Empty("item categories"));
            }
            let user = intern(&mut users, &mut log.user_ids, &r.user);
            let item = intern(&mut items, &mut log.item_ids, &r.item);
            if item == log.item_categories.len() {
                let mut cs: Vec<usize> = Vec::with_capacity(r.categories.len());
                for c in &r.categories {
                    let ci = intern(&mut cats, &mut log.category_ids, c);
                    if !cs.contains(&ci) {
                        cs.push(ci);
                    }
                }
                log.item_categories.push(cs);
            }
            log.records.push(Interaction {
                user,
                item,
                timestamp: r.timestamp,
            });
        }
        Ok(log)
    }

    /// Rows back in input order with their original ids.
    pub fn to_raw(&self) -> Vec<RawRecord> {
        self.records
            .iter()
            .map(|r| RawRecord {
                user: self.user_ids[r.user].clone(),
                item: self.item_ids[r.item].clone(),
                timestamp: r.timestamp,
                categories: self.item_categories[r.item]
                    .iter()
                    .map(|&c| self.category_ids[c].clone())
                    .collect(),
            })
            .collect()
    }

    pub fn records(&self) -> &[Interaction] {
        &self.records
    }

    pub fn num_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn num_categories(&self) -> usize {
        self.category_ids.len()
    }

    pub fn user_id(&self, user: usize) -> &str {
        &self.user_ids[user]
    }

    pub fn item_id(&self, item: usize) -> &str {
        &self.item_ids[item]
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn item_categories(&self) -> &[Vec<usize>] {
        &self.item_categories
    }

    pub fn catalog(&self) -> CategoryCatalog {
        CategoryCatalog::new(self.item_categories.clone(), self.num_categories())
            .expect("category indices are interned densely")
    }

    /// Each user's items ordered by timestamp, ties kept in input order.
    pub fn user_sequences(&self) -> Vec<Vec<usize>> {
        let mut per_user: Vec<Vec<(i64, usize)>> = alloc::vec![Vec::new(); self.num_users()];
        for r in &self.records {
            per_user[r.user].push((r.timestamp, r.item));
        }
        per_user
            .into_iter()
            .map(|mut seq| {
                seq.sort_by_key(|&(t, _)| t);
                seq.into_iter().map(|(_, i)| i).collect()
            })
            .collect()
    }

    fn degrees(&self) -> (Vec<usize>, Vec<usize>) {
        let mut u = alloc::vec![0; self.num_users()];
        let mut i = alloc::vec![0; self.num_items()];
        for r in &self.records {
            u[r.user] += 1;
            i[r.item] += 1;
        }
        (u, i)
    }

    /// Whether every user and item has at least `k` interactions.
    pub fn is_k_core(&self, k: usize) -> bool {
        let (u, i) = self.degrees();
        u.iter().chain(&i).all(|&d| d >= k)
    }
}

/// Repeatedly drops users and items with fewer than `k` interactions until
/// none remain, then re-indexes the survivors densely.
pub fn k_core_filter(log: &InteractionLog, k: usize) -> Result<InteractionLog> {
    if k == 0 {
        return Err(Error::InvalidConfig(
            "k-core threshold must be at least 1".into(),
        ));
    }
    let mut alive = alloc::vec![true; log.records.len()];
    loop {
        let mut du = alloc::vec![0usize; log.num_users()];
        let mut di = alloc::vec![0usize; log.num_items()];
        for (r, _) in log.records.iter().zip(&alive).filter(|(_, a)| **a) {
            du[r.user] += 1;
            di[r.item] += 1;
        }
        let mut changed = false;
        for (r, a) in log.records.iter().zip(alive.iter_mut()) {
            if *a && (du[r.user] < k || di[r.item] < k) {
                *a = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let survivors: Vec<RawRecord> = log
        .to_raw()
        .into_iter()
        .zip(&alive)
        .filter(|(_, a)| **a)
        .map(|(r, _)| r)
        .collect();
    if survivors.is_empty() {
        return Err(Error::Empty("no interactions survive the k-core filter"));
    }
    log::info!(
        "{k}-core kept {} of {} interactions",
        survivors.len(),
        log.records.len()
    );
    InteractionLog::from_raw(&survivors)
}

/// Length `L` of the previous-item window for target length `T`.
pub fn default_previous_len(targets: usize) -> usize {
    if targets == 1 {
        5
    } else {
        6
    }
}

/// Negatives per instance `Z` for target length `T`.
pub fn default_negatives(targets: usize) -> usize {
    if targets == 1 {
        2
    } else {
        targets
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserSplit {
    pub user: usize,
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl UserSplit {
    /// Every item the user interacted with, in any split.
    pub fn history(&self) -> BTreeSet<usize> {
        self.train
            .iter()
            .chain(&self.valid)
            .chain(&self.test)
            .copied()
            .collect()
    }
}

/// Per-user train / validation / test partition of the temporal sequences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub users: Vec<UserSplit>,
    /// Users with too few interactions to split.
    pub dropped: Vec<usize>,
    pub targets: usize,
    pub num_items: usize,
}

/// Last `T` actions of each user go to test; of the rest, the first
/// `floor(0.9 n)` train and the remainder validate. Users with `≤ T + 1`
/// actions are dropped.
pub fn temporal_split(log: &InteractionLog, targets: usize) -> Result<Split> {
    if targets == 0 {
        return Err(Error::InvalidConfig("T must be at least 1".into()));
    }
    let mut users = Vec::new();
    let mut dropped = Vec::new();
    for (user, seq) in log.user_sequences().into_iter().enumerate() {
        if seq.len() <= targets + 1 {
            dropped.push(user);
            continue;
        }
        let rest = seq.len() - targets;
        let n_train = rest * 9 / 10;
        users.push(UserSplit {
            user,
            train: seq[..n_train].to_vec(),
            valid: seq[n_train..rest].to_vec(),
            test: seq[rest..].to_vec(),
        });
    }
    if !dropped.is_empty() {
        log::info!(
            "temporal split dropped {} users with at most T + 1 actions",
            dropped.len()
        );
    }
    Ok(Split {
        users,
        dropped,
        targets,
        num_items: log.num_items(),
    })
}

/// Split boundary counts for one user, as recorded in a manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitCounts {
    pub user: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl Split {
    pub fn counts(&self) -> Vec<SplitCounts> {
        self.users
            .iter()
            .map(|u| SplitCounts {
                user: u.user,
                train: u.train.len(),
                valid: u.valid.len(),
                test: u.test.len(),
            })
            .collect()
    }

    /// Rebuilds a split from recorded boundaries over the same log.
    pub fn from_counts(
        log: &InteractionLog,
        targets: usize,
        counts: &[SplitCounts],
    ) -> Result<Split> {
        let seqs = log.user_sequences();
        let mut listed = alloc::vec![false; seqs.len()];
        let mut users = Vec::with_capacity(counts.len());
        for c in counts {
            let seq = seqs.get(c.user).ok_or(Error::IndexOutOfRange {
                index: c.user,
                len: seqs.len(),
            })?;
            if c.train + c.valid + c.test != seq.len() {
                return Err(Error::DimensionMismatch {
                    expected: seq.len(),
                    got: c.train + c.valid + c.test,
                });
            }
            listed[c.user] = true;
            let (a, b) = (c.train, c.train + c.valid);
            users.push(UserSplit {
                user: c.user,
                train: seq[..a].to_vec(),
                valid: seq[a..b].to_vec(),
                test: seq[b..].to_vec(),
            });
        }
        let dropped = (0..seqs.len()).filter(|&u| !listed[u]).collect();
        Ok(Split {
            users,
            dropped,
            targets,
            num_items: log.num_items(),
        })
    }
}

/// `(user, L previous items, T targets, Z negatives)` training record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceInstance {
    pub user: usize,
    /// Position of the first target in the user's sequence.
    pub time_step: usize,
    pub previous: Vec<usize>,
    pub targets: Vec<usize>,
    pub negatives: Vec<usize>,
}

/// Draws `count` distinct items outside `history` from `0..num_items`.
pub fn sample_unseen(
    history: &BTreeSet<usize>,
    num_items: usize,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    let unseen = num_items.saturating_sub(history.len());
    if unseen < count {
        return Err(Error::CatalogExhausted);
    }
    let mut out = Vec::with_capacity(count);
    if unseen * 2 >= num_items {
        while out.len() < count {
            let i = rng.gen_range(0..num_items);
            if !history.contains(&i) && !out.contains(&i) {
                out.push(i);
            }
        }
    } else {
        let mut pool: Vec<usize> = (0..num_items).filter(|i| !history.contains(i)).collect();
        for _ in 0..count {
            let k = rng.gen_range(0..pool.len());
            out.push(pool.swap_remove(k));
        }
    }
    Ok(out)
}

/// Slides a window of `L + T` items with stride one over every user's
/// training sequence and samples `Z` negatives per window. Windows that
/// repeat an item are skipped.
pub fn make_instances(
    split: &Split,
    previous_len: usize,
    targets: usize,
    negatives: usize,
    seed: u64,
) -> Result<Vec<SequenceInstance>> {
    if previous_len == 0 || targets == 0 || negatives == 0 {
        return Err(Error::InvalidConfig(
            "L, T and Z must all be at least 1".into(),
        ));
    }
    let window = previous_len + targets;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut repeated = 0usize;
    for u in &split.users {
        if u.train.len() < window {
            continue;
        }
        let history = u.history();
        for start in 0..=(u.train.len() - window) {
            let w = &u.train[start..start + window];
            let distinct: BTreeSet<usize> = w.iter().copied().collect();
            if distinct.len() != window {
                repeated += 1;
                continue;
            }
            let negs = sample_unseen(&history, split.num_items, negatives, &mut rng)?;
            out.push(SequenceInstance {
                user: u.user,
                time_step: start + previous_len,
                previous: w[..previous_len].to_vec(),
                targets: w[previous_len..].to_vec(),
                negatives: negs,
            });
        }
    }
    if repeated > 0 {
        log::info!("skipped {repeated} windows that repeat an item");
    }
    Ok(out)
}

/// One user's ranking task: score every item outside `seen`, compare the
/// top of the ranking against `relevant`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalCase {
    pub user: usize,
    pub previous: Vec<usize>,
    pub seen: BTreeSet<usize>,
    pub relevant: Vec<usize>,
}

fn last_n(seq: &[usize], n: usize) -> Vec<usize> {
    seq[seq.len().saturating_sub(n)..].to_vec()
}

impl Split {
    /// Validation cases: history = train, relevant = validation items.
    pub fn validation_cases(&self, previous_len: usize) -> Vec<EvalCase> {
        self.users
            .iter()
            .map(|u| EvalCase {
                user: u.user,
                previous: last_n(&u.train, previous_len),
                seen: u.train.iter().copied().collect(),
                relevant: u.valid.clone(),
            })
            .collect()
    }

    /// Test cases: history = train + validation, relevant = test items.
    pub fn test_cases(&self, previous_len: usize) -> Vec<EvalCase> {
        self.users
            .iter()
            .map(|u| {
                let hist: Vec<usize> = u.train.iter().chain(&u.valid).copied().collect();
                EvalCase {
                    user: u.user,
                    previous: last_n(&hist, previous_len),
                    seen: hist.iter().copied().collect(),
                    relevant: u.test.clone(),
                }
            })
            .collect()
    }
}
