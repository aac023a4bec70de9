//! On-disk formats: interaction CSV, matrix checkpoints, split manifests,
//! instance and diverse-set dumps, metric tables.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use dppseq_core::data::{InteractionLog, RawRecord, SequenceInstance, SplitCounts};
use dppseq_core::dpp::DiversityKernelLowRank;
use dppseq_core::kernel::SetPair;
use dppseq_core::linalg::Matrix;
use dppseq_core::metrics::MetricRow;
use dppseq_core::model::ScorerParams;

use crate::error::{CliError, CliResult};

pub const INTERACTION_HEADER: [&str; 4] = ["user_id", "item_id", "timestamp", "categories"];

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Lines that are neither blank nor `#` comments.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(n, l)| (n + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

/// A rejected input line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Malformed {
    pub line: u64,
    pub reason: String,
}

/// Parses `user_id,item_id,timestamp,cat1;cat2;...` rows after a header.
/// Lines starting with `#` are ignored. In strict mode the first malformed
/// line is an error; otherwise malformed lines are collected and skipped.
pub fn parse_interactions(text: &str, strict: bool) -> CliResult<(Vec<RawRecord>, Vec<Malformed>)> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| CliError::Data(format!("unreadable header: {e}")))?;
    if header.iter().collect::<Vec<_>>() != INTERACTION_HEADER {
        return Err(CliError::Data(format!(
            "expected header {:?}, found {:?}",
            INTERACTION_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    let mut bad = Vec::new();
    for rec in reader.records() {
        let (line, parsed) = match rec {
            Ok(r) => (r.position().map_or(0, |p| p.line()), parse_row(&r)),
            Err(e) => (e.position().map_or(0, |p| p.line()), Err(e.to_string())),
        };
        match parsed {
            Ok(row) => rows.push(row),
            Err(reason) if strict => return Err(CliError::Data(format!("line {line}: {reason}"))),
            Err(reason) => bad.push(Malformed { line, reason }),
        }
    }
    if !bad.is_empty() {
        log::warn!("skipped {} malformed lines", bad.len());
    }
    Ok((rows, bad))
}

fn parse_row(r: &csv::StringRecord) -> Result<RawRecord, String> {
    if r.len() != 4 {
        return Err(format!("expected 4 fields, found {}", r.len()));
    }
    let user = r[0].to_string();
    let item = r[1].to_string();
    if user.is_empty() || item.is_empty() {
        return Err("empty user or item id".into());
    }
    let timestamp = r[2]
        .parse::<i64>()
        .map_err(|_| format!("bad timestamp {:?}", &r[2]))?;
    let categories: Vec<String> = r[3]
        .split(';')
        .map(str::trim)
        .filter(|c| !c.is_empty())
        .map(String::from)
        .collect();
    if categories.is_empty() {
        return Err("empty category field".into());
    }
    Ok(RawRecord {
        user,
        item,
        timestamp,
        categories,
    })
}

pub fn load_interactions(path: &Path, strict: bool) -> CliResult<(InteractionLog, Vec<Malformed>)> {
    let text = read_text(path)?;
    let (rows, bad) = parse_interactions(&text, strict)?;
    if rows.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no interactions",
            path.display()
        )));
    }
    Ok((InteractionLog::from_raw(&rows)?, bad))
}

pub fn format_interactions(stamp: &str, rows: &[RawRecord]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(INTERACTION_HEADER)
        .map_err(|e| CliError::Data(e.to_string()))?;
    for r in rows {
        let ts = r.timestamp.to_string();
        let cats = r.categories.join(";");
        w.write_record([r.user.as_str(), r.item.as_str(), ts.as_str(), cats.as_str()])
            .map_err(|e| CliError::Data(e.to_string()))?;
    }
    let body = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    Ok(format!(
        "{stamp}{}",
        String::from_utf8(body).expect("csv writes utf-8")
    ))
}

/// Row-major matrix blocks, each behind a three-line header: row count,
/// column count, tag.
pub fn format_blocks(stamp: &str, blocks: &[(&str, &Matrix)]) -> String {
    let mut s = String::from(stamp);
    for (tag, m) in blocks {
        let _ = writeln!(s, "{}\n{}\n{tag}", m.rows(), m.cols());
        for r in 0..m.rows() {
            let row: Vec<String> = m.row(r).iter().map(|x| x.to_string()).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
    }
    s
}

pub fn parse_blocks(text: &str) -> CliResult<Vec<(String, Matrix)>> {
    let bad = |line: usize, what: &str| CliError::Data(format!("checkpoint line {line}: {what}"));
    let mut lines = content_lines(text);
    let mut out = Vec::new();
    while let Some((n, rows)) = lines.next() {
        let rows: usize = rows
            .trim()
            .parse()
            .map_err(|_| bad(n, "expected row count"))?;
        let (n, cols) = lines.next().ok_or_else(|| bad(n, "missing column count"))?;
        let cols: usize = cols
            .trim()
            .parse()
            .map_err(|_| bad(n, "expected column count"))?;
        let (n, tag) = lines.next().ok_or_else(|| bad(n, "missing tag"))?;
        let mut data = Vec::with_capacity(rows * cols);
        let mut last = n;
        for _ in 0..rows {
            let (n, row) = lines.next().ok_or_else(|| bad(last, "truncated matrix"))?;
            last = n;
            let before = data.len();
            for x in row.split_whitespace() {
                data.push(x.parse::<f64>().map_err(|_| bad(n, "expected a number"))?);
            }
            if data.len() - before != cols {
                return Err(bad(n, "wrong number of columns"));
            }
        }
        out.push((tag.trim().to_string(), Matrix::from_vec(rows, cols, data)?));
    }
    Ok(out)
}

pub fn format_kernel(stamp: &str, k: &DiversityKernelLowRank) -> String {
    let tag = if k.is_normalized() {
        "normalized"
    } else {
        "raw"
    };
    format_blocks(stamp, &[(tag, k.factors())])
}

pub fn parse_kernel(text: &str) -> CliResult<DiversityKernelLowRank> {
    let mut blocks = parse_blocks(text)?;
    if blocks.len() != 1 {
        return Err(CliError::Data(format!(
            "kernel checkpoint holds {} matrices, expected 1",
            blocks.len()
        )));
    }
    let (tag, v) = blocks.remove(0);
    let normalized = match tag.as_str() {
        "normalized" => true,
        "raw" => false,
        other => return Err(CliError::Data(format!("unknown kernel flag {other:?}"))),
    };
    Ok(DiversityKernelLowRank::from_checkpoint(v, normalized)?)
}

pub fn load_kernel(path: &Path) -> CliResult<DiversityKernelLowRank> {
    parse_kernel(&read_text(path)?)
}

const SCORER_TAGS: [&str; 4] = ["user_emb", "item_in", "item_out", "item_bias"];

pub fn format_scorer(stamp: &str, p: &ScorerParams) -> String {
    let bias = Matrix::from_vec(p.num_items(), 1, p.item_bias.clone())
        .expect("bias length matches item count");
    format_blocks(
        stamp,
        &[
            (SCORER_TAGS[0], &p.user_emb),
            (SCORER_TAGS[1], &p.item_in),
            (SCORER_TAGS[2], &p.item_out),
            (SCORER_TAGS[3], &bias),
        ],
    )
}

pub fn parse_scorer(text: &str) -> CliResult<ScorerParams> {
    let blocks = parse_blocks(text)?;
    let tags: Vec<&str> = blocks.iter().map(|(t, _)| t.as_str()).collect();
    if tags != SCORER_TAGS {
        return Err(CliError::Data(format!(
            "scorer checkpoint blocks {tags:?}, expected {SCORER_TAGS:?}"
        )));
    }
    let mut it = blocks.into_iter().map(|(_, m)| m);
    let (u, i, o, b) = (
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
    );
    if b.cols() != 1 {
        return Err(CliError::Data("item_bias must be a single column".into()));
    }
    Ok(ScorerParams::from_parts(u, i, o, b.as_slice().to_vec())?)
}

pub fn load_scorer(path: &Path) -> CliResult<ScorerParams> {
    parse_scorer(&read_text(path)?)
}

/// Maps input ids back to dense indices.
pub struct IdIndex {
    users: HashMap<String, usize>,
    items: HashMap<String, usize>,
}

impl IdIndex {
    pub fn new(log: &InteractionLog) -> Self {
        let map = |ids: &[String]| {
            ids.iter()
                .enumerate()
                .map(|(i, s)| (s.clone(), i))
                .collect()
        };
        IdIndex {
            users: map(log.user_ids()),
            items: map(log.item_ids()),
        }
    }

    pub fn user(&self, id: &str) -> CliResult<usize> {
        self.users
            .get(id)
            .copied()
            .ok_or_else(|| CliError::Data(format!("unknown user id {id:?}")))
    }

    pub fn item(&self, id: &str) -> CliResult<usize> {
        self.items
            .get(id)
            .copied()
            .ok_or_else(|| CliError::Data(format!("unknown item id {id:?}")))
    }

    fn items(&self, list: &str) -> CliResult<Vec<usize>> {
        list.split(',')
            .filter(|s| !s.is_empty())
            .map(|s| self.item(s))
            .collect()
    }
}

fn join_ids(log: &InteractionLog, items: &[usize]) -> String {
    items
        .iter()
        .map(|&i| log.item_id(i))
        .collect::<Vec<_>>()
        .join(",")
}

/// Split manifest: protocol settings as `key = value` lines, then one
/// `user_id,train,valid,test` row per kept user.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub settings: Vec<(String, String)>,
    pub counts: Vec<SplitCounts>,
}

pub const MANIFEST_HEADER: &str = "user_id,train,valid,test";

impl Manifest {
    pub fn format(&self, stamp: &str, log: &InteractionLog) -> String {
        let mut s = String::from(stamp);
        for (k, v) in &self.settings {
            let _ = writeln!(s, "{k} = {v}");
        }
        let _ = writeln!(s, "{MANIFEST_HEADER}");
        for c in &self.counts {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                log.user_id(c.user),
                c.train,
                c.valid,
                c.test
            );
        }
        s
    }

    pub fn parse(text: &str, ids: &IdIndex) -> CliResult<Self> {
        let mut settings = Vec::new();
        let mut counts = Vec::new();
        let mut in_rows = false;
        for (n, line) in content_lines(text) {
            if !in_rows {
                if line == MANIFEST_HEADER {
                    in_rows = true;
                } else {
                    let (k, v) = line.split_once('=').ok_or_else(|| {
                        CliError::Data(format!("manifest line {n}: expected key = value"))
                    })?;
                    settings.push((k.trim().to_string(), v.trim().to_string()));
                }
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            let num = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| CliError::Data(format!("manifest line {n}: bad count {s:?}")))
            };
            if f.len() != 4 {
                return Err(CliError::Data(format!(
                    "manifest line {n}: expected 4 fields"
                )));
            }
            counts.push(SplitCounts {
                user: ids.user(f[0])?,
                train: num(f[1])?,
                valid: num(f[2])?,
                test: num(f[3])?,
            });
        }
        if !in_rows {
            return Err(CliError::Data(format!(
                "manifest has no {MANIFEST_HEADER:?} section"
            )));
        }
        Ok(Manifest { settings, counts })
    }

    pub fn setting(&self, key: &str) -> Option<&str> {
        self.settings
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

pub const INSTANCE_HEADER: &str = "user_id\ttime_step\tprevious\ttargets\tnegatives";

pub fn format_instances(stamp: &str, log: &InteractionLog, inst: &[SequenceInstance]) -> String {
    let mut s = format!("{stamp}{INSTANCE_HEADER}\n");
    for x in inst {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}",
            log.user_id(x.user),
            x.time_step,
            join_ids(log, &x.previous),
            join_ids(log, &x.targets),
            join_ids(log, &x.negatives)
        );
    }
    s
}

pub fn parse_instances(text: &str, ids: &IdIndex) -> CliResult<Vec<SequenceInstance>> {
    let mut out = Vec::new();
    for (n, line) in content_lines(text) {
        if line == INSTANCE_HEADER {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(CliError::Data(format!(
                "instance line {n}: expected 5 tab-separated fields"
            )));
        }
        out.push(SequenceInstance {
            user: ids.user(f[0])?,
            time_step: f[1]
                .parse()
                .map_err(|_| CliError::Data(format!("instance line {n}: bad time step")))?,
            previous: ids.items(f[2])?,
            targets: ids.items(f[3])?,
            negatives: ids.items(f[4])?,
        });
    }
    Ok(out)
}

/// Diverse-set dump: `user_id<TAB>+|-<TAB>item,item,...`, each positive set
/// immediately followed by its matched negative set.
pub fn format_sets(stamp: &str, log: &InteractionLog, pairs: &[(usize, SetPair)]) -> String {
    let mut s = String::from(stamp);
    for (user, p) in pairs {
        let u = log.user_id(*user);
        let _ = writeln!(s, "{u}\t+\t{}", join_ids(log, &p.positive));
        let _ = writeln!(s, "{u}\t-\t{}", join_ids(log, &p.negative));
    }
    s
}

pub fn parse_sets(text: &str, ids: &IdIndex) -> CliResult<Vec<(usize, SetPair)>> {
    let mut out = Vec::new();
    let mut pending: Option<(usize, Vec<usize>)> = None;
    for (n, line) in content_lines(text) {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(CliError::Data(format!(
                "set line {n}: expected 3 tab-separated fields"
            )));
        }
        let user = ids.user(f[0])?;
        let items = ids.items(f[2])?;
        match (f[1], pending.take()) {
            ("+", None) => pending = Some((user, items)),
            ("-", Some((u, pos))) if u == user => out.push((user, SetPair::new(pos, items))),
            _ => {
                return Err(CliError::Data(format!(
                    "set line {n}: sets must alternate + then - per user"
                )))
            }
        }
    }
    if pending.is_some() {
        return Err(CliError::Data(
            "set dump ends with an unmatched positive set".into(),
        ));
    }
    Ok(out)
}

pub const METRIC_HEADER: &str = "loss,T,N,recall,ndcg,cc,f";

pub fn format_metrics(stamp: &str, rows: &[MetricRow]) -> String {
    let mut s = format!("{stamp}{METRIC_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{:.6},{:.6},{:.6}",
            r.loss, r.targets, r.cutoff, r.recall, r.ndcg, r.coverage, r.f
        );
    }
    s
}

pub fn parse_metrics(text: &str) -> CliResult<Vec<MetricRow>> {
    let mut out = Vec::new();
    for (n, line) in content_lines(text) {
        if line == METRIC_HEADER {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = || CliError::Data(format!("metric line {n}: malformed row"));
        if f.len() != 7 {
            return Err(bad());
        }
        let real = |s: &str| s.parse::<f64>().map_err(|_| bad());
        out.push(MetricRow {
            loss: f[0].to_string(),
            targets: f[1].parse().map_err(|_| bad())?,
            cutoff: f[2].parse().map_err(|_| bad())?,
            recall: real(f[3])?,
            ndcg: real(f[4])?,
            coverage: real(f[5])?,
            f: real(f[6])?,
        });
    }
    Ok(out)
}

pub fn load_metrics(path: &Path) -> CliResult<Vec<MetricRow>> {
    parse_metrics(&read_text(path)?)
}

pub fn read(path: &Path) -> CliResult<String> {
    read_text(path)
}
