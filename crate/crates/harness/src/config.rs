//! Line-oriented `key = value` configuration files.
//!
//! ```text
//! # comments start with '#'
//! data.sigma_b = 1.2
//! scheduler.kind = miles
//! scheduler.tau = 0.2
//! train.epochs = 60
//! ```
//!
//! Later assignments override earlier ones; command-line `--set key=value`
//! pairs are applied last. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use miles_core::datagen::{SignalMode, SyntheticSpec};
use miles_core::{FusionKind, GroupId, MetricKind, MilesConfig, ModelConfig, MslrVariant, SchedulerKind, Split};

use crate::error::HarnessError;

type Result<T> = std::result::Result<T, HarnessError>;

const KNOWN_KEYS: &[&str] = &[
    "data.file",
    "data.mode",
    "data.classes",
    "data.k_a",
    "data.k_b",
    "data.n_train",
    "data.n_val",
    "data.n_test",
    "data.dim_a",
    "data.dim_b",
    "data.sigma_a",
    "data.sigma_b",
    "data.prototype_scale",
    "data.nonlinear_b",
    "data.mix_gain",
    "data.imbalance",
    "data.seed",
    "model.hidden_a",
    "model.hidden_b",
    "model.latent_a",
    "model.latent_b",
    "model.fusion",
    "scheduler.kind",
    "scheduler.tau",
    "scheduler.mu",
    "scheduler.lr_a",
    "scheduler.lr_b",
    "scheduler.gamma",
    "scheduler.window",
    "scheduler.factor",
    "scheduler.patience",
    "train.lr",
    "train.epochs",
    "train.batch_size",
    "train.seed",
    "train.metric",
    "train.utilization_split",
    "train.stronger",
    "output.dir",
    "sweep.tau",
    "sweep.mu",
    "sweep.seeds",
    "sweep.threads",
    "compare.seeds",
];

/// Raw key/value pairs in file order, later keys winning.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(HarnessError::Config(format!(
                    "line {}: expected `key = value`, got `{raw}`",
                    lineno + 1
                )));
            };
            map.set(k.trim(), v.trim())
                .map_err(|e| HarnessError::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(map)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(HarnessError::Config(format!("unknown key `{key}`")));
        }
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies `key=value` overrides.
    pub fn apply_overrides<'a>(&mut self, pairs: impl IntoIterator<Item = &'a str>) -> Result<()> {
        for pair in pairs {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| HarnessError::Usage(format!("override `{pair}` is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    fn parsed<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| HarnessError::Config(format!("{key} = `{v}`: {e}"))),
        }
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        let Some(v) = self.get(key) else { return Ok(None) };
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|e| HarnessError::Config(format!("{key}: `{s}`: {e}")))
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    /// Renders the map back to `key = value` text in sorted key order.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(HarnessError::Config(format!("{key}: expected a boolean, got `{v}`"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Synthetic(SyntheticSpec),
    File(PathBuf),
}

/// Layer sizes; input widths and class count come from the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub hidden_a: Vec<usize>,
    pub hidden_b: Vec<usize>,
    pub latent_a: usize,
    pub latent_b: usize,
    pub fusion: FusionKind,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            hidden_a: vec![64],
            hidden_b: vec![64],
            latent_a: 32,
            latent_b: 32,
            fusion: FusionKind::Concat,
        }
    }
}

impl Architecture {
    pub fn model_config(&self, input_a: usize, input_b: usize, classes: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            input_a,
            input_b,
            hidden_a: self.hidden_a.clone(),
            hidden_b: self.hidden_b.clone(),
            latent_a: self.latent_a,
            latent_b: self.latent_b,
            classes,
            fusion: self.fusion,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    pub architecture: Architecture,
    pub scheduler: SchedulerKind,
    /// Global learning rate.
    pub alpha: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub metric: MetricKind,
    pub utilization_split: Split,
    /// Modality whose encoder is designated stronger when computing the gap.
    pub stronger: GroupId,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::Synthetic(SyntheticSpec::default()),
            architecture: Architecture::default(),
            scheduler: SchedulerKind::Miles(MilesConfig::default()),
            alpha: 1e-3,
            epochs: 60,
            batch_size: 64,
            seed: 0,
            metric: MetricKind::Accuracy,
            utilization_split: Split::Validation,
            stronger: GroupId::ModalityA,
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(HarnessError::Config("train.epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(HarnessError::Config("train.batch_size must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(HarnessError::Config(format!(
                "train.lr must be positive, got {}",
                self.alpha
            )));
        }
        if self.stronger == GroupId::Fusion {
            return Err(HarnessError::Config("train.stronger must be A or B".into()));
        }
        self.scheduler.validate()?;
        if let DatasetSource::Synthetic(spec) = &self.dataset {
            spec.validate()?;
        }
        Ok(())
    }

    /// Same configuration with a different MILES `(tau, mu)` pair.
    pub fn with_miles(&self, tau: f64, mu: f64) -> Self {
        let mut c = self.clone();
        c.scheduler = SchedulerKind::Miles(MilesConfig {
            tau,
            mu,
            utilization_split: self.utilization_split,
        });
        c
    }

    /// Same configuration with a different training seed (initialization
    /// and shuffling); the dataset is left alone.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seed = seed;
        c
    }

    pub fn from_map(map: &ConfigMap) -> Result<Self> {
        let d = RunConfig::default();
        let dataset = match map.get("data.file") {
            Some(path) => DatasetSource::File(PathBuf::from(path)),
            None => DatasetSource::Synthetic(synthetic_spec(map)?),
        };
        let da = Architecture::default();
        let architecture = Architecture {
            hidden_a: map.list("model.hidden_a")?.unwrap_or(da.hidden_a),
            hidden_b: map.list("model.hidden_b")?.unwrap_or(da.hidden_b),
            latent_a: map.parsed("model.latent_a", da.latent_a)?,
            latent_b: map.parsed("model.latent_b", da.latent_b)?,
            fusion: map.parsed("model.fusion", da.fusion)?,
        };
        let alpha = map.parsed("train.lr", d.alpha)?;
        let utilization_split = map.parsed("train.utilization_split", d.utilization_split)?;
        let stronger = match map.get("train.stronger").map(str::to_ascii_uppercase).as_deref() {
            None | Some("A") => GroupId::ModalityA,
            Some("B") => GroupId::ModalityB,
            Some(other) => {
                return Err(HarnessError::Config(format!(
                    "train.stronger must be A or B, got `{other}`"
                )))
            }
        };
        let scheduler = scheduler_kind(map, alpha, utilization_split)?;
        let cfg = RunConfig {
            dataset,
            architecture,
            scheduler,
            alpha,
            epochs: map.parsed("train.epochs", d.epochs)?,
            batch_size: map.parsed("train.batch_size", d.batch_size)?,
            seed: map.parsed("train.seed", d.seed)?,
            metric: map.parsed("train.metric", d.metric)?,
            utilization_split,
            stronger,
            output_dir: map.get("output.dir").map(PathBuf::from),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Key/value rendering that [`RunConfig::from_map`] reads back to an equal config.
    pub fn to_map(&self) -> ConfigMap {
        let mut m = ConfigMap::default();
        let mut put = |k: &str, v: String| {
            m.entries.insert(k.to_string(), v);
        };
        match &self.dataset {
            DatasetSource::File(p) => put("data.file", p.display().to_string()),
            DatasetSource::Synthetic(s) => {
                match s.mode {
                    SignalMode::Shared => put("data.mode", "shared".into()),
                    SignalMode::Complementary { k_a, k_b } => {
                        put("data.mode", "complementary".into());
                        put("data.k_a", k_a.to_string());
                        put("data.k_b", k_b.to_string());
                    }
                }
                put("data.classes", s.classes.to_string());
                put("data.n_train", s.n_train.to_string());
                put("data.n_val", s.n_val.to_string());
                put("data.n_test", s.n_test.to_string());
                put("data.dim_a", s.dim_a.to_string());
                put("data.dim_b", s.dim_b.to_string());
                put("data.sigma_a", s.sigma_a.to_string());
                put("data.sigma_b", s.sigma_b.to_string());
                put("data.prototype_scale", s.prototype_scale.to_string());
                put("data.nonlinear_b", s.nonlinear_b.to_string());
                put("data.mix_gain", s.mix_gain.to_string());
                put("data.imbalance", s.imbalance.to_string());
                put("data.seed", s.seed.to_string());
            }
        }
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        put("model.hidden_a", join(&self.architecture.hidden_a));
        put("model.hidden_b", join(&self.architecture.hidden_b));
        put("model.latent_a", self.architecture.latent_a.to_string());
        put("model.latent_b", self.architecture.latent_b.to_string());
        put("model.fusion", self.architecture.fusion.to_string());
        put("scheduler.kind", self.scheduler.name().to_string());
        match self.scheduler {
            SchedulerKind::Vanilla => {}
            SchedulerKind::Miles(c) => {
                put("scheduler.tau", c.tau.to_string());
                put("scheduler.mu", c.mu.to_string());
            }
            SchedulerKind::Mslr(MslrVariant::Keep { lr_a, lr_b }) => {
                put("scheduler.lr_a", lr_a.to_string());
                put("scheduler.lr_b", lr_b.to_string());
            }
            SchedulerKind::Mslr(MslrVariant::Smooth { gamma, lr_a, lr_b }) => {
                put("scheduler.gamma", gamma.to_string());
                put("scheduler.lr_a", lr_a.to_string());
                put("scheduler.lr_b", lr_b.to_string());
            }
            SchedulerKind::Mslr(MslrVariant::Dynamic { window, factor }) => {
                put("scheduler.window", window.to_string());
                put("scheduler.factor", factor.to_string());
            }
            SchedulerKind::Mses { patience } => put("scheduler.patience", patience.to_string()),
        }
        put("train.lr", self.alpha.to_string());
        put("train.epochs", self.epochs.to_string());
        put("train.batch_size", self.batch_size.to_string());
        put("train.seed", self.seed.to_string());
        put("train.metric", self.metric.to_string());
        put("train.utilization_split", self.utilization_split.to_string());
        put(
            "train.stronger",
            if self.stronger == GroupId::ModalityB { "B" } else { "A" }.into(),
        );
        if let Some(dir) = &self.output_dir {
            put("output.dir", dir.display().to_string());
        }
        m
    }
}

pub fn synthetic_spec(map: &ConfigMap) -> Result<SyntheticSpec> {
    let d = SyntheticSpec::default();
    let classes = map.parsed("data.classes", d.classes)?;
    let mode = match map.get("data.mode").unwrap_or("shared").to_ascii_lowercase().as_str() {
        "shared" => SignalMode::Shared,
        "complementary" => SignalMode::Complementary {
            k_a: map.parsed("data.k_a", 0usize)?,
            k_b: map.parsed("data.k_b", 0usize)?,
        },
        other => return Err(HarnessError::Config(format!("data.mode: unknown mode `{other}`"))),
    };
    let nonlinear_b = match map.get("data.nonlinear_b") {
        None => d.nonlinear_b,
        Some(v) => parse_bool("data.nonlinear_b", v)?,
    };
    let spec = SyntheticSpec {
        mode,
        classes,
        n_train: map.parsed("data.n_train", d.n_train)?,
        n_val: map.parsed("data.n_val", d.n_val)?,
        n_test: map.parsed("data.n_test", d.n_test)?,
        dim_a: map.parsed("data.dim_a", d.dim_a)?,
        dim_b: map.parsed("data.dim_b", d.dim_b)?,
        sigma_a: map.parsed("data.sigma_a", d.sigma_a)?,
        sigma_b: map.parsed("data.sigma_b", d.sigma_b)?,
        prototype_scale: map.parsed("data.prototype_scale", d.prototype_scale)?,
        nonlinear_b,
        mix_gain: map.parsed("data.mix_gain", d.mix_gain)?,
        imbalance: map.parsed("data.imbalance", d.imbalance)?,
        seed: map.parsed("data.seed", d.seed)?,
    };
    spec.validate()?;
    Ok(spec)
}

/// Default per-modality rates for the MSLR baselines: A, the usually
/// dominant modality, at half the global rate.
fn default_mslr_rates(map: &ConfigMap, alpha: f64) -> Result<(f64, f64)> {
    Ok((
        map.parsed("scheduler.lr_a", 0.5 * alpha)?,
        map.parsed("scheduler.lr_b", alpha)?,
    ))
}

fn scheduler_kind(map: &ConfigMap, alpha: f64, split: Split) -> Result<SchedulerKind> {
    let kind = map.get("scheduler.kind").unwrap_or("miles").to_ascii_lowercase();
    named_scheduler(map, &kind, alpha, split)
}

/// Scheduler names in comparison-table order.
pub const COMPARE_METHODS: [&str; 6] = ["vanilla", "mslr-k", "mslr-s", "mslr-d", "mses", "miles"];

/// Every scheduler of the comparison table, each configured from the
/// `scheduler.*` keys that apply to it.
pub fn compare_methods(map: &ConfigMap) -> Result<Vec<SchedulerKind>> {
    let alpha = map.parsed("train.lr", RunConfig::default().alpha)?;
    let split = map.parsed("train.utilization_split", RunConfig::default().utilization_split)?;
    COMPARE_METHODS
        .iter()
        .map(|name| {
            let kind = named_scheduler(map, name, alpha, split)?;
            kind.validate()?;
            Ok(kind)
        })
        .collect()
}

fn named_scheduler(map: &ConfigMap, kind: &str, alpha: f64, split: Split) -> Result<SchedulerKind> {
    let dm = MilesConfig::default();
    Ok(match kind {
        "vanilla" => SchedulerKind::Vanilla,
        "miles" => SchedulerKind::Miles(MilesConfig {
            tau: map.parsed("scheduler.tau", dm.tau)?,
            mu: map.parsed("scheduler.mu", dm.mu)?,
            utilization_split: split,
        }),
        "mslr-k" => {
            let (lr_a, lr_b) = default_mslr_rates(map, alpha)?;
            SchedulerKind::Mslr(MslrVariant::Keep { lr_a, lr_b })
        }
        "mslr-s" => {
            let (lr_a, lr_b) = default_mslr_rates(map, alpha)?;
            SchedulerKind::Mslr(MslrVariant::Smooth {
                gamma: map.parsed("scheduler.gamma", 0.1)?,
                lr_a,
                lr_b,
            })
        }
        "mslr-d" => SchedulerKind::Mslr(MslrVariant::Dynamic {
            window: map.parsed("scheduler.window", 2)?,
            factor: map.parsed("scheduler.factor", 0.05)?,
        }),
        "mses" => SchedulerKind::Mses {
            patience: map.parsed("scheduler.patience", 5)?,
        },
        other => {
            return Err(HarnessError::Config(format!(
                "scheduler.kind: unknown scheduler `{other}`"
            )))
        }
    })
}

/// Grid for `sweep`: tau values, mu values and seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub taus: Vec<f64>,
    pub mus: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Worker threads; 0 picks the available parallelism.
    pub threads: usize,
}

impl SweepGrid {
    pub fn from_map(map: &ConfigMap) -> Result<Self> {
        let grid = SweepGrid {
            taus: map.list("sweep.tau")?.unwrap_or_else(|| vec![0.0, 0.05, 0.1, 0.2, 0.3]),
            mus: map
                .list("sweep.mu")?
                .unwrap_or_else(|| vec![0.01, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0]),
            seeds: map.list("sweep.seeds")?.unwrap_or_else(|| vec![0, 1, 2]),
            threads: map.parsed("sweep.threads", 0)?,
        };
        if grid.taus.is_empty() || grid.mus.is_empty() || grid.seeds.is_empty() {
            return Err(HarnessError::Config("sweep grids must be nonempty".into()));
        }
        Ok(grid)
    }
}

pub fn compare_seeds(map: &ConfigMap) -> Result<Vec<u64>> {
    let seeds = map.list("compare.seeds")?.unwrap_or_else(|| vec![0, 1, 2, 3, 4]);
    if seeds.is_empty() {
        return Err(HarnessError::Config("compare.seeds must be nonempty".into()));
    }
    Ok(seeds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let mut m =
            ConfigMap::parse("# header\ntrain.epochs = 5 # inline\n\nscheduler.tau=0.3\ntrain.epochs = 7\n").unwrap();
        assert_eq!(m.get("train.epochs"), Some("7"));
        m.apply_overrides(["train.epochs=9"]).unwrap();
        let cfg = RunConfig::from_map(&m).unwrap();
        assert_eq!(cfg.epochs, 9);
        assert!(matches!(cfg.scheduler, SchedulerKind::Miles(c) if c.tau == 0.3 && c.mu == 0.5));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_lines() {
        assert!(ConfigMap::parse("train.epoch = 3").is_err());
        assert!(ConfigMap::parse("just words").is_err());
        let m = ConfigMap::parse("train.epochs = many").unwrap();
        assert!(RunConfig::from_map(&m).is_err());
        let m = ConfigMap::parse("scheduler.kind = ogm").unwrap();
        assert!(RunConfig::from_map(&m).is_err());
        let m = ConfigMap::parse("scheduler.mu = 1.5").unwrap();
        assert!(RunConfig::from_map(&m).is_err());
    }

    #[test]
    fn defaults() {
        let cfg = RunConfig::from_map(&ConfigMap::default()).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!((cfg.batch_size, cfg.alpha, cfg.epochs), (64, 1e-3, 60));
    }

    #[test]
    fn map_roundtrip() {
        let mut cfg = RunConfig {
            scheduler: SchedulerKind::Mslr(MslrVariant::Smooth {
                gamma: 0.25,
                lr_a: 1e-4,
                lr_b: 3e-3,
            }),
            stronger: GroupId::ModalityB,
            utilization_split: Split::Train,
            ..RunConfig::default()
        };
        cfg.architecture.hidden_b = vec![16, 8];
        let text = cfg.to_map().render();
        let back = RunConfig::from_map(&ConfigMap::parse(&text).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn complementary_dataset_keys() {
        let m = ConfigMap::parse("data.mode = complementary\ndata.classes = 4\ndata.k_a = 2\ndata.k_b = 2").unwrap();
        let spec = synthetic_spec(&m).unwrap();
        assert_eq!(spec.mode, SignalMode::Complementary { k_a: 2, k_b: 2 });
        let m = ConfigMap::parse("data.mode = complementary\ndata.classes = 5").unwrap();
        assert!(synthetic_spec(&m).is_err());
    }
}
