//! Experiment stages. Each stage reads what earlier stages wrote to the
//! output directory, so any stage can be rerun on its own.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dppseq_core::data::{self, InteractionLog, Split};
use dppseq_core::diverse::generate_pairs;
use dppseq_core::dpp::DiversityKernelLowRank;
use dppseq_core::kernel::{self, KernelEpoch, SetPair};
use dppseq_core::losses::LossKind;
use dppseq_core::metrics::{self, MetricRow, UserMetrics};
use dppseq_core::model::{self, EpochRecord, ScorerParams, TrainOutcome, Validation};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::io::{self, IdIndex, Manifest};

/// File names inside the output directory.
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn resolved_config(&self) -> PathBuf {
        self.file("config.resolved.txt")
    }
    pub fn filtered(&self) -> PathBuf {
        self.file("filtered.csv")
    }
    pub fn manifest(&self) -> PathBuf {
        self.file("manifest.txt")
    }
    pub fn instances(&self) -> PathBuf {
        self.file("instances.tsv")
    }
    pub fn sets(&self) -> PathBuf {
        self.file("sets.tsv")
    }
    pub fn kernel(&self) -> PathBuf {
        self.file("kernel.ckpt")
    }
    pub fn raw_kernel(&self) -> PathBuf {
        self.file("kernel_raw.ckpt")
    }
    pub fn kernel_log(&self) -> PathBuf {
        self.file("kernel_log.csv")
    }
    pub fn scorer(&self, kind: LossKind) -> PathBuf {
        self.file(&format!("scorer_{kind}.ckpt"))
    }
    pub fn train_log(&self, kind: LossKind) -> PathBuf {
        self.file(&format!("train_{kind}.csv"))
    }
    pub fn timing(&self, kind: LossKind) -> PathBuf {
        self.file(&format!("timing_{kind}.csv"))
    }
    pub fn metrics(&self, kind: LossKind) -> PathBuf {
        self.file(&format!("metrics_{kind}.csv"))
    }
    pub fn report(&self) -> PathBuf {
        self.file("report.csv")
    }
    pub fn curves(&self) -> PathBuf {
        self.file("curves.csv")
    }
    pub fn efficiency(&self) -> PathBuf {
        self.file("efficiency.csv")
    }
}

fn require(path: &Path, hint: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "{} not found; run `{hint}` first",
            path.display()
        )))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareSummary {
    pub users: usize,
    pub items: usize,
    pub categories: usize,
    pub dropped_users: usize,
    pub malformed_lines: usize,
    pub instances: usize,
}

/// Load, k-core filter, split and window the dataset.
pub fn prepare(cfg: &ExperimentConfig) -> CliResult<PrepareSummary> {
    let dataset = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| CliError::Usage("no dataset configured (set `dataset = <path>`)".into()))?;
    if !dataset.is_file() {
        return Err(CliError::Usage(format!(
            "dataset {} not found",
            dataset.display()
        )));
    }
    let out = Layout::new(&cfg.out);
    let (raw, malformed) = io::load_interactions(dataset, cfg.strict)?;
    let log = data::k_core_filter(&raw, cfg.k_core)?;
    let split = data::temporal_split(&log, cfg.targets)?;
    let instances =
        data::make_instances(&split, cfg.previous, cfg.targets, cfg.negatives, cfg.seed)?;
    if instances.is_empty() {
        return Err(CliError::Data(
            "no user is long enough to form a training instance".into(),
        ));
    }
    let summary = PrepareSummary {
        users: log.num_users(),
        items: log.num_items(),
        categories: log.num_categories(),
        dropped_users: split.dropped.len(),
        malformed_lines: malformed.len(),
        instances: instances.len(),
    };
    let manifest = Manifest {
        settings: vec![
            ("targets".into(), cfg.targets.to_string()),
            ("previous".into(), cfg.previous.to_string()),
            ("negatives".into(), cfg.negatives.to_string()),
            ("k_core".into(), cfg.k_core.to_string()),
            ("users".into(), summary.users.to_string()),
            ("items".into(), summary.items.to_string()),
            ("categories".into(), summary.categories.to_string()),
            ("dropped_users".into(), summary.dropped_users.to_string()),
            (
                "malformed_lines".into(),
                summary.malformed_lines.to_string(),
            ),
            ("instances".into(), summary.instances.to_string()),
        ],
        counts: split.counts(),
    };
    let stamp = cfg.stamp();
    io::write_text(&out.resolved_config(), &cfg.dump())?;
    io::write_text(
        &out.filtered(),
        &io::format_interactions(&stamp, &log.to_raw())?,
    )?;
    io::write_text(&out.manifest(), &manifest.format(&stamp, &log))?;
    io::write_text(
        &out.instances(),
        &io::format_instances(&stamp, &log, &instances),
    )?;
    log::info!(
        "prepared {} users, {} items, {} instances",
        summary.users,
        summary.items,
        summary.instances
    );
    Ok(summary)
}

/// Filtered log and split as recorded by [`prepare`].
pub struct Prepared {
    pub log: InteractionLog,
    pub ids: IdIndex,
    pub split: Split,
    pub manifest: Manifest,
}

pub fn load_prepared(cfg: &ExperimentConfig) -> CliResult<Prepared> {
    let out = Layout::new(&cfg.out);
    require(&out.manifest(), "dppseq prepare")?;
    let (log, _) = io::load_interactions(&out.filtered(), true)?;
    let ids = IdIndex::new(&log);
    let manifest = Manifest::parse(&io::read(&out.manifest())?, &ids)?;
    for (key, want) in [
        ("targets", cfg.targets),
        ("previous", cfg.previous),
        ("negatives", cfg.negatives),
    ] {
        if manifest.setting(key) != Some(want.to_string().as_str()) {
            return Err(CliError::Usage(format!(
                "{} was prepared with a different {key}; rerun `dppseq prepare`",
                out.root().display()
            )));
        }
    }
    let split = Split::from_counts(&log, cfg.targets, &manifest.counts)?;
    Ok(Prepared {
        log,
        ids,
        split,
        manifest,
    })
}

/// Paired positive and negative diverse sets from every user's training items.
pub fn gen_sets(cfg: &ExperimentConfig) -> CliResult<Vec<(usize, SetPair)>> {
    let p = load_prepared(cfg)?;
    let catalog = p.log.catalog();
    let set_cfg = cfg.set_config();
    let mut pairs = Vec::new();
    for u in &p.split.users {
        let history: BTreeSet<usize> = u.history();
        let sets = generate_pairs(u.user, &u.train, &history, &catalog, &set_cfg, cfg.seed)?;
        for (pos, neg) in sets.positive.into_iter().zip(sets.negative) {
            pairs.push((u.user, SetPair::new(pos, neg)));
        }
    }
    let out = Layout::new(&cfg.out);
    io::write_text(&out.sets(), &io::format_sets(&cfg.stamp(), &p.log, &pairs))?;
    log::info!("generated {} diverse set pairs", pairs.len());
    Ok(pairs)
}

fn format_kernel_log(stamp: &str, epochs: &[KernelEpoch]) -> String {
    let mut s = format!("{stamp}epoch,objective,learning_rate\n");
    for e in epochs {
        let _ = writeln!(s, "{},{},{}", e.epoch, e.objective, e.learning_rate);
    }
    s
}

/// Learns the diversity kernel from the diverse-set dump, generating the
/// dump first when it is missing. Writes the raw and normalized factors.
pub fn train_kernel(
    cfg: &ExperimentConfig,
) -> CliResult<(DiversityKernelLowRank, Vec<KernelEpoch>)> {
    let out = Layout::new(&cfg.out);
    let p = load_prepared(cfg)?;
    let pairs: Vec<SetPair> = if out.sets().exists() {
        io::parse_sets(&io::read(&out.sets())?, &p.ids)?
    } else {
        gen_sets(cfg)?
    }
    .into_iter()
    .map(|(_, pair)| pair)
    .collect();
    let (raw, epochs) = kernel::train_kernel(p.log.num_items(), &pairs, &cfg.kernel_config())?;
    let normalized = kernel::normalize_kernel(&raw);
    let stamp = cfg.stamp();
    io::write_text(&out.raw_kernel(), &io::format_kernel(&stamp, &raw))?;
    io::write_text(&out.kernel(), &io::format_kernel(&stamp, &normalized))?;
    io::write_text(&out.kernel_log(), &format_kernel_log(&stamp, &epochs))?;
    Ok((normalized, epochs))
}

fn format_train_log(stamp: &str, history: &[EpochRecord]) -> String {
    let mut s = format!("{stamp}epoch,train_loss,val_ndcg5,skipped,improved\n");
    for r in history {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.epoch, r.train_loss, r.val_ndcg, r.skipped, r.improved as u8
        );
    }
    s
}

fn parse_train_log(text: &str) -> CliResult<Vec<(usize, f64, f64)>> {
    let mut out = Vec::new();
    for line in text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("epoch"))
    {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || CliError::Data(format!("malformed training log row {line:?}"));
        if f.len() != 5 {
            return Err(bad());
        }
        out.push((
            f[0].parse().map_err(|_| bad())?,
            f[1].parse().map_err(|_| bad())?,
            f[2].parse().map_err(|_| bad())?,
        ));
    }
    Ok(out)
}

/// Trains the scorer with one loss and writes its checkpoint, the
/// per-epoch training log and the per-epoch wall times.
pub fn train(cfg: &ExperimentConfig, kind: LossKind) -> CliResult<TrainOutcome> {
    kind.check_targets(cfg.targets)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let out = Layout::new(&cfg.out);
    let p = load_prepared(cfg)?;
    let instances = io::parse_instances(&io::read(&out.instances())?, &p.ids)?;
    let kernel = if kind.needs_kernel() {
        require(&out.kernel(), "dppseq train-kernel")?;
        Some(io::load_kernel(&out.kernel())?)
    } else {
        None
    };
    let catalog = p.log.catalog();
    let cases = p.split.validation_cases(cfg.previous);
    let validation = Validation {
        cases: &cases,
        num_items: p.log.num_items(),
        catalog: &catalog,
    };
    let scorer_cfg = cfg.scorer_config();
    let params = ScorerParams::init(
        p.log.num_users(),
        p.log.num_items(),
        scorer_cfg.dim,
        cfg.seed,
    )?;
    let mut times = Vec::new();
    let mut tick = Instant::now();
    let outcome = model::train(
        params,
        &instances,
        kind,
        kernel.as_ref(),
        validation,
        &scorer_cfg,
        |_| {
            times.push(tick.elapsed().as_secs_f64());
            tick = Instant::now();
        },
    )?;
    let stamp = cfg.stamp();
    io::write_text(
        &out.scorer(kind),
        &io::format_scorer(&stamp, &outcome.params),
    )?;
    io::write_text(
        &out.train_log(kind),
        &format_train_log(&stamp, &outcome.history),
    )?;
    let mut t = format!("{stamp}epoch,seconds\n");
    for (e, s) in times.iter().enumerate() {
        let _ = writeln!(t, "{},{s:.6}", e + 1);
    }
    io::write_text(&out.timing(kind), &t)?;
    log::info!(
        "{kind}: best validation Nd@5 {:.5} at epoch {} of {}",
        outcome.best_val_ndcg,
        outcome.best_epoch,
        outcome.history.len()
    );
    Ok(outcome)
}

/// Per-user test metrics, computed on `threads` workers and collected in
/// user order.
pub fn evaluate_users(
    params: &ScorerParams,
    p: &Prepared,
    cfg: &ExperimentConfig,
) -> CliResult<(Vec<UserMetrics>, usize)> {
    let catalog = p.log.catalog();
    let cases = p.split.test_cases(cfg.previous);
    let n = p.log.num_items();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {} threads: {e}", cfg.threads)))?;
    let results: Vec<Option<UserMetrics>> = pool.install(|| {
        cases
            .par_iter()
            .map(|c| metrics::evaluate_case(params, c, n, &catalog, &cfg.cutoffs))
            .collect::<Result<_, _>>()
    })?;
    let excluded = results.iter().filter(|r| r.is_none()).count();
    if excluded > 0 {
        log::info!("{excluded} users excluded from evaluation");
    }
    Ok((results.into_iter().flatten().collect(), excluded))
}

/// Test-set metric table for one trained scorer.
pub fn evaluate(
    cfg: &ExperimentConfig,
    kind: LossKind,
    checkpoint: Option<&Path>,
) -> CliResult<Vec<MetricRow>> {
    let out = Layout::new(&cfg.out);
    let path = checkpoint.map_or_else(|| out.scorer(kind), Path::to_path_buf);
    require(&path, &format!("dppseq train --loss {kind}"))?;
    let params = io::load_scorer(&path)?;
    let p = load_prepared(cfg)?;
    if params.num_items() != p.log.num_items() || params.num_users() != p.log.num_users() {
        return Err(CliError::Data(format!(
            "{} does not match the prepared dataset",
            path.display()
        )));
    }
    let (users, _) = evaluate_users(&params, &p, cfg)?;
    let rows = metrics::summarize(kind.as_str(), cfg.targets, &cfg.cutoffs, &users)?;
    io::write_text(&out.metrics(kind), &io::format_metrics(&cfg.stamp(), &rows))?;
    Ok(rows)
}

/// Efficiency summary for one loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Efficiency {
    pub loss: LossKind,
    pub seconds_per_epoch: f64,
    pub epochs: usize,
    pub best_epoch: usize,
    pub total_seconds: f64,
}

/// Combines per-loss metrics into one table, gathers validation curves,
/// and summarizes training time.
pub fn report(cfg: &ExperimentConfig) -> CliResult<Vec<MetricRow>> {
    let out = Layout::new(&cfg.out);
    let stamp = cfg.stamp();
    let mut rows = Vec::new();
    let mut curves = format!("{stamp}loss,epoch,train_loss,val_ndcg5\n");
    let mut eff = Vec::new();
    for &kind in &cfg.losses {
        require(
            &out.metrics(kind),
            &format!("dppseq evaluate --loss {kind}"),
        )?;
        let table = io::load_metrics(&out.metrics(kind))?;
        for &n in &cfg.cutoffs {
            let row = table
                .iter()
                .find(|r| r.cutoff == n && r.targets == cfg.targets)
                .ok_or_else(|| {
                    CliError::Data(format!("metrics for {kind} lack N={n}; rerun evaluate"))
                })?;
            rows.push(row.clone());
        }
        if out.train_log(kind).exists() {
            let log = parse_train_log(&io::read(&out.train_log(kind))?)?;
            for (epoch, loss, val) in &log {
                let _ = writeln!(curves, "{kind},{epoch},{loss},{val}");
            }
            let best_epoch = log
                .iter()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |b, &(e, _, v)| if v > b.1 { (e, v) } else { b },
                )
                .0;
            let secs: Vec<f64> = if out.timing(kind).exists() {
                io::read(&out.timing(kind))?
                    .lines()
                    .filter(|l| !l.starts_with('#') && !l.starts_with("epoch"))
                    .filter_map(|l| l.split(',').nth(1)?.parse().ok())
                    .collect()
            } else {
                Vec::new()
            };
            let total: f64 = secs.iter().sum();
            eff.push(Efficiency {
                loss: kind,
                seconds_per_epoch: if secs.is_empty() {
                    0.0
                } else {
                    total / secs.len() as f64
                },
                epochs: log.len(),
                best_epoch,
                total_seconds: total,
            });
        }
    }
    io::write_text(&out.report(), &io::format_metrics(&stamp, &rows))?;
    io::write_text(&out.curves(), &curves)?;
    let mut e = format!("{stamp}loss,seconds_per_epoch,epochs,best_epoch,total_seconds\n");
    for x in &eff {
        let _ = writeln!(
            e,
            "{},{:.4},{},{},{:.3}",
            x.loss, x.seconds_per_epoch, x.epochs, x.best_epoch, x.total_seconds
        );
    }
    io::write_text(&out.efficiency(), &e)?;
    Ok(rows)
}

/// Every stage in order.
pub fn run_all(cfg: &ExperimentConfig) -> CliResult<Vec<MetricRow>> {
    prepare(cfg)?;
    if cfg.losses.iter().any(|k| k.needs_kernel()) {
        gen_sets(cfg)?;
        train_kernel(cfg)?;
    }
    for &kind in &cfg.losses {
        train(cfg, kind)?;
        evaluate(cfg, kind, None)?;
    }
    report(cfg)
}
