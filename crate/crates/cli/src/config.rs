//! Run configuration: a fixed schema of `section.key` settings with defaults,
//! overridden by a `key = value` file and then by command-line flags.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use tgt::{
    AblationConfig, CandidatePolicy, EtaMode, ModelConfig, RefineMode, SyntheticConfig, TrainConfig,
};

/// `(key, default, description)`
pub const SCHEMA: &[(&str, &str, &str)] = &[
    (
        "data.interactions",
        "interactions.tsv",
        "tab-separated user, item, behavior, timestamp log",
    ),
    (
        "data.behaviors",
        "view,fav,cart,buy",
        "comma-separated behavior labels",
    ),
    (
        "data.vocabulary",
        "",
        "behavior vocabulary file, one label per line; replaces data.behaviors",
    ),
    ("data.target", "buy", "label of the behavior to predict"),
    (
        "data.target_only",
        "false",
        "drop context behaviors from the training input",
    ),
    ("model.dim", "16", "hidden size"),
    ("model.layers", "2", "propagation layers"),
    ("model.attention_heads", "2", "attention heads"),
    ("model.channels", "2", "projection channels"),
    ("model.window", "6", "events per sub-sequence"),
    (
        "model.eta_mode",
        "softmax",
        "user aggregation weights: softmax or literal",
    ),
    (
        "model.refine_gamma",
        "fresh",
        "sub-user refinement: fresh or literal",
    ),
    (
        "model.mean_normalize",
        "false",
        "average item messages instead of summing",
    ),
    (
        "model.ablation",
        "",
        "comma-separated variant flags: ce, sd, mcp, lbd, cta, fba",
    ),
    ("time.granularity_seconds", "3600", "seconds per time slot"),
    (
        "time.origin",
        "",
        "timestamp of slot 0; defaults to the earliest training event",
    ),
    ("train.epochs", "20", "training epochs"),
    ("train.batch_size", "256", "users per batch"),
    ("train.learning_rate", "0.001", "initial Adam step size"),
    ("train.decay", "0.96", "per-epoch learning rate decay"),
    ("train.lambda", "0.005", "L2 weight"),
    ("train.negatives", "1", "negatives per positive"),
    (
        "train.mask_labels",
        "true",
        "hide a batch's positive events from its graph",
    ),
    (
        "eval.cutoffs",
        "1,5,10,20",
        "comma-separated ranking cutoffs",
    ),
    (
        "eval.candidates",
        "99",
        "sampled negatives per user, or `full`",
    ),
    (
        "run.seed",
        "0",
        "seed for initialization, sampling and synthesis",
    ),
    (
        "run.output",
        "out",
        "directory for checkpoints, logs and reports",
    ),
    (
        "run.checkpoint",
        "",
        "checkpoint path; defaults to <output>/checkpoint.bin",
    ),
    (
        "run.resume",
        "false",
        "continue training from the checkpoint",
    ),
    ("synth.users", "1000", "synthetic users"),
    ("synth.items", "500", "synthetic items"),
    (
        "synth.rates",
        "0.2,0.05,0.05,0.002",
        "per-behavior event rates; the last behavior is the target",
    ),
    ("synth.kappa", "0.5", "purchase boost after a context event"),
    (
        "synth.window",
        "3",
        "steps a context event stays influential",
    ),
    ("synth.horizon", "60", "steps per user"),
    ("synth.preferred_items", "30", "items each user prefers"),
    ("synth.step_seconds", "3600", "seconds per step"),
];

/// Flags that stand for a fixed setting: `(flag, key, value)`.
pub const SHORTHANDS: &[(&str, &str, &str)] = &[
    ("full-catalog", "eval.candidates", "full"),
    ("paper-literal-eta", "model.eta_mode", "literal"),
];

/// A configuration problem; reported as a usage error.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: SCHEMA.iter().map(|(k, v, _)| (*k, v.to_string())).collect(),
        }
    }
}

/// Resolve a full `section.key` or an unambiguous bare key.
fn resolve(key: &str) -> Result<&'static str, ConfigError> {
    if let Some((k, _, _)) = SCHEMA.iter().find(|(k, _, _)| *k == key) {
        return Ok(k);
    }
    if !key.contains('.') {
        let hits: Vec<&'static str> = SCHEMA
            .iter()
            .map(|(k, _, _)| *k)
            .filter(|k| k.rsplit('.').next() == Some(key))
            .collect();
        match hits.as_slice() {
            [one] => return Ok(one),
            [] => {}
            many => return err(format!("ambiguous key `{key}`: one of {}", many.join(", "))),
        }
    }
    err(format!("unknown configuration key `{key}`"))
}

fn is_bool(key: &str) -> bool {
    SCHEMA
        .iter()
        .any(|(k, v, _)| *k == key && (*v == "true" || *v == "false"))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let k = resolve(key)?;
        self.values.insert(k, value.trim().to_string());
        Ok(())
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("`{key}` is not in the schema"))
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<T, ConfigError> {
        let v = self.raw(key);
        v.parse()
            .or_else(|_| err(format!("invalid value `{v}` for `{key}`")))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, ConfigError> {
        let v = self.raw(key);
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .or_else(|_| err(format!("invalid entry `{s}` in `{key}`")))
            })
            .collect()
    }

    /// Apply a `key = value` file. `[section]` lines prefix later bare keys;
    /// `#` starts a comment.
    pub fn apply_file_text(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut section = String::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return err(format!("line {}: expected `key = value`", n + 1));
            };
            let key = key.trim();
            let full = if section.is_empty() || key.contains('.') {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            self.set(&full, value)
                .map_err(|e| ConfigError(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    /// Build from defaults, an optional `--config` file and `--key value`
    /// flags. Returns the configuration and the positional arguments.
    pub fn from_args(args: &[String]) -> Result<(Self, Vec<String>), ConfigError> {
        let mut positional = Vec::new();
        let mut overrides: Vec<(String, String)> = Vec::new();
        let mut file: Option<PathBuf> = None;
        let mut i = 0;
        while i < args.len() {
            let arg = &args[i];
            i += 1;
            let Some(flag) = arg.strip_prefix("--") else {
                positional.push(arg.clone());
                continue;
            };
            if let Some(&(_, key, value)) = SHORTHANDS.iter().find(|(f, _, _)| *f == flag) {
                overrides.push((key.to_string(), value.to_string()));
                continue;
            }
            let (key, value) = match flag.split_once('=') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => {
                    let takes_value = flag == "config" || !is_bool(resolve(flag)?);
                    let next_is_value = args.get(i).is_some_and(|v| !v.starts_with("--"));
                    if takes_value || next_is_value {
                        let Some(v) = args.get(i) else {
                            return err(format!("flag `--{flag}` needs a value"));
                        };
                        i += 1;
                        (flag.to_string(), v.clone())
                    } else {
                        (flag.to_string(), "true".to_string())
                    }
                }
            };
            if key == "config" {
                file = Some(PathBuf::from(value));
            } else {
                resolve(&key)?;
                overrides.push((key, value));
            }
        }
        let mut cfg = Self::default();
        if let Some(path) = file {
            let text = fs::read_to_string(&path)
                .or_else(|e| err(format!("cannot read config `{}`: {e}", path.display())))?;
            cfg.apply_file_text(&text)?;
        }
        for (k, v) in overrides {
            cfg.set(&k, &v)?;
        }
        Ok((cfg, positional))
    }

    pub fn bool(&self, key: &str) -> Result<bool, ConfigError> {
        self.parse(key)
    }

    pub fn seed(&self) -> Result<u64, ConfigError> {
        self.parse("run.seed")
    }

    pub fn output(&self) -> PathBuf {
        PathBuf::from(self.raw("run.output"))
    }

    pub fn checkpoint(&self) -> PathBuf {
        match self.raw("run.checkpoint") {
            "" => self.output().join("checkpoint.bin"),
            p => PathBuf::from(p),
        }
    }

    pub fn interactions(&self) -> &Path {
        Path::new(self.raw("data.interactions"))
    }

    pub fn behaviors(&self) -> Result<Vec<String>, ConfigError> {
        self.list("data.behaviors")
    }

    pub fn vocabulary(&self) -> Option<&Path> {
        match self.raw("data.vocabulary") {
            "" => None,
            p => Some(Path::new(p)),
        }
    }

    pub fn ablation(&self) -> Result<AblationConfig, ConfigError> {
        let flags: Vec<String> = self.list("model.ablation")?;
        AblationConfig::from_flags(flags.iter().map(String::as_str)).or_else(|e| err(e.to_string()))
    }

    pub fn model(&self) -> Result<ModelConfig, ConfigError> {
        let eta_mode = match self.raw("model.eta_mode") {
            "softmax" => EtaMode::Softmax,
            "literal" => EtaMode::Literal,
            v => return err(format!("invalid value `{v}` for `model.eta_mode`")),
        };
        let refine = match self.raw("model.refine_gamma") {
            "fresh" => RefineMode::Fresh,
            "literal" => RefineMode::Literal,
            v => return err(format!("invalid value `{v}` for `model.refine_gamma`")),
        };
        let time_origin = match self.raw("time.origin") {
            "" => None,
            _ => Some(self.parse("time.origin")?),
        };
        let cfg = ModelConfig {
            dim: self.parse("model.dim")?,
            layers: self.parse("model.layers")?,
            attention_heads: self.parse("model.attention_heads")?,
            channels: self.parse("model.channels")?,
            window: self.parse("model.window")?,
            granularity: self.parse("time.granularity_seconds")?,
            time_origin,
            eta_mode,
            refine,
            mean_normalize: self.bool("model.mean_normalize")?,
            ablation: self.ablation()?,
        };
        cfg.validate().or_else(|e| err(e.to_string()))?;
        Ok(cfg)
    }

    pub fn train(&self) -> Result<TrainConfig, ConfigError> {
        let cfg = TrainConfig {
            epochs: self.parse("train.epochs")?,
            batch_size: self.parse("train.batch_size")?,
            learning_rate: self.parse("train.learning_rate")?,
            decay: self.parse("train.decay")?,
            lambda: self.parse("train.lambda")?,
            negatives: self.parse("train.negatives")?,
            seed: self.seed()?,
            mask_labels: self.bool("train.mask_labels")?,
        };
        cfg.validate().or_else(|e| err(e.to_string()))?;
        Ok(cfg)
    }

    pub fn cutoffs(&self) -> Result<Vec<usize>, ConfigError> {
        let c: Vec<usize> = self.list("eval.cutoffs")?;
        if c.is_empty() || c.contains(&0) {
            return err("`eval.cutoffs` needs positive cutoffs");
        }
        Ok(c)
    }

    pub fn candidates(&self) -> Result<CandidatePolicy, ConfigError> {
        match self.raw("eval.candidates") {
            "full" => Ok(CandidatePolicy::FullCatalog),
            _ => Ok(CandidatePolicy::Sampled(self.parse("eval.candidates")?)),
        }
    }

    pub fn synthetic(&self) -> Result<SyntheticConfig, ConfigError> {
        let base_rates: Vec<f64> = self.list("synth.rates")?;
        let cfg = SyntheticConfig {
            users: self.parse("synth.users")?,
            items: self.parse("synth.items")?,
            target: base_rates.len().saturating_sub(1),
            base_rates,
            kappa: self.parse("synth.kappa")?,
            window: self.parse("synth.window")?,
            horizon: self.parse("synth.horizon")?,
            preferred_items: self.parse("synth.preferred_items")?,
            step_seconds: self.parse("synth.step_seconds")?,
            seed: self.seed()?,
        };
        cfg.validate().or_else(|e| err(e.to_string()))?;
        Ok(cfg)
    }
}
