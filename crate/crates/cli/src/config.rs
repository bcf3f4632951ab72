//! INI-style run configuration.
//!
//! ```text
//! # comment
//! [section]
//! key = value
//! ```
//!
//! Keys are unique within a section. Every key must be known; relative paths
//! resolve against the config file's directory.

use mixda_core::model::{ModelConfig, ModelError, RoutingMode};
use mixda_core::training::{PretrainConfig, Stage1Config, Stage2Config, DEFAULT_BATCH_SIZES, DEFAULT_LEARNING_RATES};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("unknown key [{section}] {key}")]
    UnknownKey { section: String, key: String },
    #[error("unknown section [{0}]")]
    UnknownSection(String),
    #[error("[{section}] {key}: invalid value {value:?}")]
    Value {
        section: String,
        key: String,
        value: String,
    },
    #[error("[{section}] {key} is required")]
    Missing { section: String, key: String },
    #[error("{0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, ConfigError>;

/// Parsed INI text: section name to key-value pairs, both in file order
/// of first appearance.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Ini {
    pub sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl Ini {
    pub fn parse(text: &str) -> Result<Self> {
        let mut ini = Ini::default();
        let mut current: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let n = i + 1;
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| ConfigError::Syntax {
                    line: n,
                    reason: "unterminated section header".into(),
                })?;
                let name = name.trim();
                if name.is_empty() {
                    return Err(ConfigError::Syntax {
                        line: n,
                        reason: "empty section name".into(),
                    });
                }
                if ini.sections.contains_key(name) {
                    return Err(ConfigError::Syntax {
                        line: n,
                        reason: format!("section [{name}] repeated"),
                    });
                }
                ini.sections.insert(name.to_string(), BTreeMap::new());
                current = Some(name.to_string());
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: n,
                reason: "expected key = value".into(),
            })?;
            let section = current.as_ref().ok_or_else(|| ConfigError::Syntax {
                line: n,
                reason: "key outside any section".into(),
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError::Syntax {
                    line: n,
                    reason: "empty key".into(),
                });
            }
            let map = ini.sections.get_mut(section).expect("section inserted");
            if map.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(ConfigError::Syntax {
                    line: n,
                    reason: format!("key {key} repeated in [{section}]"),
                });
            }
        }
        Ok(ini)
    }

    /// Sections and keys in sorted order, one `key = value` per line.
    pub fn to_canonical(&self) -> String {
        let mut s = String::new();
        for (name, keys) in &self.sections {
            s.push_str(&format!("[{name}]\n"));
            for (k, v) in keys {
                s.push_str(&format!("{k} = {v}\n"));
            }
        }
        s
    }
}

/// Section reader that consumes keys so leftovers can be reported.
struct Section<'a> {
    name: &'a str,
    keys: BTreeMap<String, String>,
}

impl<'a> Section<'a> {
    fn take(ini: &mut Ini, name: &'a str) -> Self {
        Self {
            name,
            keys: ini.sections.remove(name).unwrap_or_default(),
        }
    }

    fn raw(&mut self, key: &str) -> Option<String> {
        self.keys.remove(key)
    }

    fn bad(&self, key: &str, value: &str) -> ConfigError {
        ConfigError::Value {
            section: self.name.into(),
            key: key.into(),
            value: value.into(),
        }
    }

    fn get<T: FromStr>(&mut self, key: &str, into: &mut T) -> Result<()> {
        if let Some(v) = self.raw(key) {
            *into = v.parse().map_err(|_| self.bad(key, &v))?;
        }
        Ok(())
    }

    fn list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>> {
        let Some(v) = self.raw(key) else { return Ok(None) };
        let items = v
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| self.bad(key, &v)))
            .collect::<Result<Vec<T>>>()?;
        if items.is_empty() {
            return Err(self.bad(key, &v));
        }
        Ok(Some(items))
    }

    fn finish(self) -> Result<()> {
        match self.keys.into_keys().next() {
            Some(key) => Err(ConfigError::UnknownKey {
                section: self.name.into(),
                key,
            }),
            None => Ok(()),
        }
    }
}

pub fn parse_routing(s: &str) -> Option<RoutingMode> {
    match s {
        "vanilla" => Some(RoutingMode::Vanilla),
        "gated" => Some(RoutingMode::Gated),
        _ => s
            .strip_prefix("adapter-only")
            .map(|rest| rest.strip_prefix(':').map_or(Some(0), |i| i.parse().ok()))?
            .map(RoutingMode::AdapterOnly),
    }
}

pub fn routing_name(mode: &RoutingMode) -> String {
    match mode {
        RoutingMode::Vanilla => "vanilla".into(),
        RoutingMode::Gated => "gated".into(),
        RoutingMode::AdapterOnly(i) => format!("adapter-only:{i}"),
        RoutingMode::Forced(w) => format!("forced:{w:?}"),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    /// General-domain sentences (jsonl-text).
    pub general: Option<PathBuf>,
    /// Domain corpus: triples (tsv-triples) or text (jsonl-text).
    pub domain: Option<PathBuf>,
    pub domain_format: String,
    /// Extra `tag<TAB>pattern` relation templates.
    pub templates: Option<PathBuf>,
    /// Pre-fitted backbone checkpoint; when absent Stage 1 fits one.
    pub backbone: Option<PathBuf>,
    /// Labeled pool the few-shot splits are drawn from (jsonl-labeled).
    pub train: Option<PathBuf>,
    /// Labeled evaluation set (jsonl-labeled).
    pub test: Option<PathBuf>,
    /// Domain adapter checkpoints for `grid`, in expert order.
    pub adapters: Vec<PathBuf>,
    pub vocab_max: usize,
    pub k: usize,
    pub metric: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            general: None,
            domain: None,
            domain_format: "tsv-triples".into(),
            templates: None,
            backbone: None,
            train: None,
            test: None,
            adapters: Vec::new(),
            vocab_max: 300,
            k: 16,
            metric: "micro-f1".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Stage-2 seeds; defaults to `[seed]`.
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub pretrain: PretrainConfig,
    pub stage1: Stage1Config,
    /// Stop Stage 1 once trained-fact mask-fill accuracy reaches this value.
    pub stage1_stop_at: Option<f64>,
    pub stage2: Stage2Config,
    /// `None` picks gated routing when the model has a gate, vanilla otherwise.
    pub stage2_routing: Option<RoutingMode>,
    pub grid_lrs: Vec<f64>,
    pub grid_batches: Vec<usize>,
    /// Canonical text of the parsed file, stored in checkpoints.
    pub canonical: String,
}

fn model_defaults() -> ModelConfig {
    ModelConfig {
        gate_style: "mlp".into(),
        task_adapter_style: "pfeiffer".into(),
        ..ModelConfig::default()
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Invalid(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses `text`; relative paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut ini = Ini::parse(text)?;
        let canonical = ini.to_canonical();
        let resolve = |p: String| -> PathBuf {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };

        let mut run = Section::take(&mut ini, "run");
        let mut seed = 0u64;
        run.get("seed", &mut seed)?;
        let seeds = run.list("seeds")?;
        let output = resolve(run.raw("output").unwrap_or_else(|| "out".into()));
        run.finish()?;

        let mut model = model_defaults();
        let mut m = Section::take(&mut ini, "model");
        for (key, value) in std::mem::take(&mut m.keys) {
            if key == "vocab_size" {
                return Err(ConfigError::Invalid(
                    "[model] vocab_size is derived from the data and cannot be set".into(),
                ));
            }
            model.set_key(&key, &value).map_err(|e| match e {
                ModelError::UnknownKey(k) => ConfigError::UnknownKey {
                    section: "model".into(),
                    key: k,
                },
                _ => ConfigError::Value {
                    section: "model".into(),
                    key: key.clone(),
                    value: value.clone(),
                },
            })?;
        }

        let mut data = DataConfig::default();
        let mut d = Section::take(&mut ini, "data");
        data.general = d.raw("general").map(resolve);
        data.domain = d.raw("domain").map(resolve);
        if let Some(f) = d.raw("domain_format") {
            if f != "tsv-triples" && f != "jsonl-text" {
                return Err(d.bad("domain_format", &f));
            }
            data.domain_format = f;
        }
        data.templates = d.raw("templates").map(resolve);
        data.backbone = d.raw("backbone").map(resolve);
        data.train = d.raw("train").map(resolve);
        data.test = d.raw("test").map(resolve);
        data.adapters = d
            .list::<String>("adapters")?
            .unwrap_or_default()
            .into_iter()
            .map(resolve)
            .collect();
        d.get("vocab_max", &mut data.vocab_max)?;
        d.get("k", &mut data.k)?;
        if let Some(mname) = d.raw("metric") {
            if !mixda_core::eval::metrics().contains(&mname) {
                return Err(d.bad("metric", &mname));
            }
            data.metric = mname;
        }
        d.finish()?;

        let mut pretrain = PretrainConfig {
            seed,
            ..PretrainConfig::default()
        };
        let mut p = Section::take(&mut ini, "pretrain");
        p.get("epochs", &mut pretrain.epochs)?;
        p.get("lr", &mut pretrain.lr)?;
        p.get("batch_size", &mut pretrain.batch_size)?;
        p.get("warmup_epochs", &mut pretrain.warmup_epochs)?;
        p.get("weight_decay", &mut pretrain.weight_decay)?;
        p.get("summary_token", &mut pretrain.summary_token)?;
        p.finish()?;

        let mut stage1 = Stage1Config {
            seed,
            ..Stage1Config::default()
        };
        let mut s1 = Section::take(&mut ini, "stage1");
        s1.get("lambda", &mut stage1.lambda)?;
        s1.get("lr", &mut stage1.lr)?;
        s1.get("batch_size", &mut stage1.batch_size)?;
        s1.get("weight_decay", &mut stage1.weight_decay)?;
        s1.get("epochs", &mut stage1.epochs)?;
        s1.get("warmup_epochs", &mut stage1.warmup_epochs)?;
        s1.get("mix_ratio", &mut stage1.mix_ratio)?;
        s1.get("sampling_loss", &mut stage1.sampling_loss)?;
        s1.get("summary_token", &mut stage1.summary_token)?;
        let stop = s1.raw("stop_at");
        let stage1_stop_at = match stop {
            Some(v) => Some(
                v.parse::<f64>()
                    .ok()
                    .filter(|x| (0.0..=1.0).contains(x))
                    .ok_or_else(|| s1.bad("stop_at", &v))?,
            ),
            None => None,
        };
        s1.finish()?;

        let mut stage2 = Stage2Config {
            seed,
            ..Stage2Config::default()
        };
        let mut s2 = Section::take(&mut ini, "stage2");
        s2.get("lr", &mut stage2.lr)?;
        s2.get("batch_size", &mut stage2.batch_size)?;
        s2.get("epochs", &mut stage2.epochs)?;
        s2.get("warmup_epochs", &mut stage2.warmup_epochs)?;
        s2.get("weight_decay", &mut stage2.weight_decay)?;
        let stage2_routing = match s2.raw("routing") {
            Some(v) => Some(parse_routing(&v).ok_or_else(|| s2.bad("routing", &v))?),
            None => None,
        };
        s2.finish()?;

        let mut g = Section::take(&mut ini, "grid");
        let grid_lrs = g.list("lrs")?.unwrap_or_else(|| DEFAULT_LEARNING_RATES.to_vec());
        let grid_batches = g.list("batch_sizes")?.unwrap_or_else(|| DEFAULT_BATCH_SIZES.to_vec());
        g.finish()?;

        if let Some(name) = ini.sections.into_keys().next() {
            return Err(ConfigError::UnknownSection(name));
        }
        stage1.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        // The vocabulary is only known once the data is read; any positive
        // size lets the structural checks run now.
        ModelConfig {
            vocab_size: 1,
            num_domain_adapters: model.num_domain_adapters.max(1),
            ..model.clone()
        }
        .validate()
        .map_err(|e| ConfigError::Invalid(format!("[model] {e}")))?;
        let seeds = seeds.unwrap_or_else(|| vec![seed]);
        Ok(Self {
            seed,
            seeds,
            output,
            model,
            data,
            pretrain,
            stage1,
            stage1_stop_at,
            stage2,
            stage2_routing,
            grid_lrs,
            grid_batches,
            canonical,
        })
    }

    /// Replaces the base seed everywhere it was defaulted from.
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.seeds = vec![seed];
        self.pretrain.seed = seed;
        self.stage1.seed = seed;
        self.stage2.seed = seed;
    }

    pub fn require<'a>(&self, path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
        path.as_deref().ok_or_else(|| ConfigError::Missing {
            section: "data".into(),
            key: key.into(),
        })
    }
}
