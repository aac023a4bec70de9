//! Plain-text `key = value` experiment configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dppseq_core::data::{default_negatives, default_previous_len};
use dppseq_core::diverse::DiverseSetConfig;
use dppseq_core::kernel::KernelTrainConfig;
use dppseq_core::losses::LossKind;
use dppseq_core::model::TrainConfig;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Every setting of an experiment after defaults are applied.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: Option<PathBuf>,
    pub targets: usize,
    pub previous: usize,
    pub negatives: usize,
    pub k_core: usize,
    pub strict: bool,
    pub set_size: usize,
    pub set_decay: f64,
    pub kernel_dim: usize,
    pub kernel_lr: f64,
    pub kernel_epochs: usize,
    pub kernel_l2: f64,
    pub kernel_jitter: f64,
    pub scorer_dim: usize,
    pub scorer_lr: f64,
    pub scorer_batch: usize,
    pub scorer_max_epochs: usize,
    pub scorer_patience: usize,
    pub losses: Vec<LossKind>,
    pub cutoffs: Vec<usize>,
    pub seed: u64,
    pub threads: usize,
    pub out: PathBuf,
}

const KEYS: &[&str] = &[
    "dataset",
    "targets",
    "previous",
    "negatives",
    "k_core",
    "strict",
    "sets.size",
    "sets.decay",
    "kernel.dim",
    "kernel.lr",
    "kernel.epochs",
    "kernel.l2",
    "kernel.jitter",
    "scorer.dim",
    "scorer.lr",
    "scorer.batch",
    "scorer.max_epochs",
    "scorer.patience",
    "losses",
    "cutoffs",
    "seed",
    "threads",
    "out",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> CliResult<T> {
    value
        .parse()
        .map_err(|_| CliError::Usage(format!("invalid value for {key}: {value:?}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> CliResult<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

/// Raw assignments, in file order, before defaults are applied.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides(Vec<(String, String)>);

impl Overrides {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut out = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("config line {}: expected key = value", n + 1))
            })?;
            let k = k.trim();
            if !KEYS.contains(&k) {
                return Err(CliError::Usage(format!(
                    "config line {}: unknown key {k:?}",
                    n + 1
                )));
            }
            out.push((k.to_string(), v.trim().to_string()));
        }
        Ok(Overrides(out))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.0.push((key.to_string(), value.into()));
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.0
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

impl ExperimentConfig {
    pub fn resolve(o: &Overrides) -> CliResult<Self> {
        let get = |k: &str| o.get(k).filter(|v| !v.is_empty() && *v != "auto");
        let num = |k: &str, d: usize| get(k).map_or(Ok(d), |v| parse(k, v));
        let real = |k: &str, d: f64| get(k).map_or(Ok(d), |v| parse(k, v));

        let targets = num("targets", 3)?;
        if targets == 0 {
            return Err(CliError::Usage("targets must be at least 1".into()));
        }
        let kernel = KernelTrainConfig::default();
        let scorer = TrainConfig::default();
        let sets = DiverseSetConfig::default();
        let losses = match get("losses") {
            Some(v) => parse_list::<LossKind>("losses", v)?,
            None if targets > 1 => LossKind::ALL.to_vec(),
            None => vec![LossKind::Ce, LossKind::Bpr, LossKind::Cdsl],
        };
        let cfg = ExperimentConfig {
            dataset: get("dataset").map(PathBuf::from),
            targets,
            previous: num("previous", default_previous_len(targets))?,
            negatives: num("negatives", default_negatives(targets))?,
            k_core: num("k_core", 10)?,
            strict: get("strict").map_or(Ok(true), |v| parse("strict", v))?,
            set_size: num("sets.size", sets.set_size)?,
            set_decay: real("sets.decay", sets.decay)?,
            kernel_dim: num("kernel.dim", kernel.latent_dim)?,
            kernel_lr: real("kernel.lr", kernel.learning_rate)?,
            kernel_epochs: num("kernel.epochs", kernel.epochs)?,
            kernel_l2: real("kernel.l2", kernel.l2_reg)?,
            kernel_jitter: real("kernel.jitter", kernel.jitter)?,
            scorer_dim: num("scorer.dim", scorer.dim)?,
            scorer_lr: real("scorer.lr", scorer.learning_rate)?,
            scorer_batch: num("scorer.batch", scorer.batch_size)?,
            scorer_max_epochs: num("scorer.max_epochs", scorer.max_epochs)?,
            scorer_patience: num("scorer.patience", scorer.patience)?,
            losses,
            cutoffs: get("cutoffs").map_or(Ok(vec![3, 5, 10]), |v| parse_list("cutoffs", v))?,
            seed: get("seed").map_or(Ok(0), |v| parse("seed", v))?,
            threads: num("threads", 1)?,
            out: get("out").map_or_else(|| PathBuf::from("out"), PathBuf::from),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        for kind in &self.losses {
            kind.check_targets(self.targets)
                .map_err(|e| CliError::Usage(e.to_string()))?;
        }
        if self.losses.is_empty() {
            return Err(CliError::Usage("at least one loss is required".into()));
        }
        if self.cutoffs.is_empty() || self.cutoffs.contains(&0) {
            return Err(CliError::Usage("cutoffs must be positive".into()));
        }
        if self.previous == 0 || self.negatives == 0 || self.k_core == 0 {
            return Err(CliError::Usage(
                "previous, negatives and k_core must be at least 1".into(),
            ));
        }
        if self.threads == 0 {
            return Err(CliError::Usage("threads must be at least 1".into()));
        }
        self.kernel_config().validate().map_err(CliError::from)?;
        self.scorer_config().validate().map_err(CliError::from)?;
        self.set_config().validate().map_err(CliError::from)?;
        Ok(())
    }

    pub fn kernel_config(&self) -> KernelTrainConfig {
        KernelTrainConfig {
            latent_dim: self.kernel_dim,
            learning_rate: self.kernel_lr,
            epochs: self.kernel_epochs,
            l2_reg: self.kernel_l2,
            jitter: self.kernel_jitter,
            seed: self.seed,
            init_scale: None,
        }
    }

    pub fn scorer_config(&self) -> TrainConfig {
        TrainConfig {
            dim: self.scorer_dim,
            learning_rate: self.scorer_lr,
            batch_size: self.scorer_batch,
            max_epochs: self.scorer_max_epochs,
            patience: self.scorer_patience,
            seed: self.seed,
        }
    }

    pub fn set_config(&self) -> DiverseSetConfig {
        DiverseSetConfig {
            decay: self.set_decay,
            set_size: self.set_size,
        }
    }

    /// Settings that determine output contents, one `key = value` per line.
    fn content_lines(&self) -> String {
        let list = |v: &[String]| v.join(",");
        let mut s = String::new();
        let dataset = self
            .dataset
            .as_ref()
            .map_or(String::new(), |p| p.display().to_string());
        let _ = writeln!(s, "dataset = {dataset}");
        let _ = writeln!(s, "targets = {}", self.targets);
        let _ = writeln!(s, "previous = {}", self.previous);
        let _ = writeln!(s, "negatives = {}", self.negatives);
        let _ = writeln!(s, "k_core = {}", self.k_core);
        let _ = writeln!(s, "strict = {}", self.strict);
        let _ = writeln!(s, "sets.size = {}", self.set_size);
        let _ = writeln!(s, "sets.decay = {}", self.set_decay);
        let _ = writeln!(s, "kernel.dim = {}", self.kernel_dim);
        let _ = writeln!(s, "kernel.lr = {}", self.kernel_lr);
        let _ = writeln!(s, "kernel.epochs = {}", self.kernel_epochs);
        let _ = writeln!(s, "kernel.l2 = {}", self.kernel_l2);
        let _ = writeln!(s, "kernel.jitter = {}", self.kernel_jitter);
        let _ = writeln!(s, "scorer.dim = {}", self.scorer_dim);
        let _ = writeln!(s, "scorer.lr = {}", self.scorer_lr);
        let _ = writeln!(s, "scorer.batch = {}", self.scorer_batch);
        let _ = writeln!(s, "scorer.max_epochs = {}", self.scorer_max_epochs);
        let _ = writeln!(s, "scorer.patience = {}", self.scorer_patience);
        let losses: Vec<String> = self.losses.iter().map(|l| l.to_string()).collect();
        let _ = writeln!(s, "losses = {}", list(&losses));
        let cutoffs: Vec<String> = self.cutoffs.iter().map(|n| n.to_string()).collect();
        let _ = writeln!(s, "cutoffs = {}", list(&cutoffs));
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }

    /// Full resolved configuration, loadable as a config file.
    pub fn dump(&self) -> String {
        format!(
            "# config_hash = {}\n{}threads = {}\nout = {}\n",
            self.hash(),
            self.content_lines(),
            self.threads,
            self.out.display()
        )
    }

    /// Digest of every setting that affects output contents. Thread count
    /// and output directory are excluded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.content_lines().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Comment line stamped at the top of every output file.
    pub fn stamp(&self) -> String {
        format!("# config_hash={} seed={}\n", self.hash(), self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(text: &str) -> CliResult<ExperimentConfig> {
        ExperimentConfig::resolve(&Overrides::parse(text)?)
    }

    #[test]
    fn protocol_defaults_follow_target_length() {
        let one = resolve("targets = 1").unwrap();
        assert_eq!((one.negatives, one.previous), (2, 5));
        assert!(!one.losses.contains(&LossKind::Dsl));
        let three = resolve("targets = 3").unwrap();
        assert_eq!((three.negatives, three.previous), (3, 6));
        assert_eq!(three.losses, LossKind::ALL);
        assert_eq!(three.k_core, 10);
        assert_eq!(three.scorer_patience, 10);
    }

    #[test]
    fn dsl_with_single_target_is_a_usage_error() {
        let err = resolve("targets = 1\nlosses = ce,dsl").unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(resolve("colour = blue").is_err());
        assert!(resolve("targets = three").is_err());
        assert!(resolve("just a line").is_err());
    }

    #[test]
    fn dump_round_trips_and_hash_ignores_threads() {
        let a = resolve("targets = 2\nseed = 7\nlosses = cdsl, ce\n").unwrap();
        let b = ExperimentConfig::resolve(&Overrides::parse(&a.dump()).unwrap()).unwrap();
        assert_eq!(a, b);
        let c = resolve("targets = 2\nseed = 7\nlosses = cdsl, ce\nthreads = 4\nout = elsewhere")
            .unwrap();
        assert_eq!(a.hash(), c.hash());
        let d = resolve("targets = 2\nseed = 8\nlosses = cdsl, ce\n").unwrap();
        assert_ne!(a.hash(), d.hash());
    }

    #[test]
    fn later_assignments_win() {
        let mut o = Overrides::parse("seed = 1").unwrap();
        o.set("seed", "5");
        assert_eq!(ExperimentConfig::resolve(&o).unwrap().seed, 5);
    }
}
