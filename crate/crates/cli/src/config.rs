//! Flat `key = value` run configuration.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use hettree_core::model::Variant;
use hettree_core::tensor::Activation;
use hettree_core::train::{Optimizer, Selection};
use hettree_core::{AggregateMode, FeaturelessPolicy, ModelConfig, TrainConfig};
use serde::Serialize;

/// Every tunable of a run. Values come from defaults, then the config file,
/// then command-line flags.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub pre: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub hops: usize,
    #[serde(serialize_with = "as_string")]
    pub mode: AggregateMode,
    pub max_expansions: usize,
    pub featureless: String,
    pub hidden: usize,
    pub mlp_layers: usize,
    #[serde(serialize_with = "as_string")]
    pub activation: Activation,
    pub dropout: f64,
    #[serde(serialize_with = "as_string")]
    pub variant: Variant,
    pub share_tree_params: bool,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub optimizer: String,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub patience: usize,
    pub label_mask_rate: f64,
    pub selection: String,
    pub split: String,
    pub workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        RunConfig {
            data: None,
            pre: None,
            out: None,
            model: None,
            hops: 2,
            mode: AggregateMode::NormalizedProduct,
            max_expansions: hettree_core::aggregate::DEFAULT_MAX_EXPANSIONS,
            featureless: "constant".into(),
            hidden: m.hidden,
            mlp_layers: m.mlp_layers,
            activation: m.activation,
            dropout: m.dropout,
            variant: m.variant,
            share_tree_params: m.share_tree_params,
            epochs: t.epochs,
            lr: t.lr,
            weight_decay: t.weight_decay,
            optimizer: "adam".into(),
            momentum: 0.0,
            batch_size: t.batch_size,
            seed: 0,
            patience: t.patience,
            label_mask_rate: t.label_mask_rate,
            selection: "micro-f1".into(),
            split: "test".into(),
            workers: None,
        }
    }
}

fn as_string<T: std::fmt::Display, S: serde::Serializer>(v: &T, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(v)
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow!(ConfigError(format!("bad value {value:?} for {key}: {e}"))))
}

/// Marker for errors that map to the configuration exit code.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "data" => self.data = Some(v.into()),
            "pre" => self.pre = Some(v.into()),
            "out" => self.out = Some(v.into()),
            "model" => self.model = Some(v.into()),
            "hops" => self.hops = parse(key, v)?,
            "mode" => self.mode = parse(key, v)?,
            "max_expansions" => self.max_expansions = parse(key, v)?,
            "featureless" => self.featureless = v.into(),
            "hidden" => self.hidden = parse(key, v)?,
            "mlp_layers" => self.mlp_layers = parse(key, v)?,
            "activation" => self.activation = parse(key, v)?,
            "dropout" => self.dropout = parse(key, v)?,
            "variant" => self.variant = parse(key, v)?,
            "share_tree_params" => self.share_tree_params = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "optimizer" => self.optimizer = v.into(),
            "momentum" => self.momentum = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "patience" => self.patience = parse(key, v)?,
            "label_mask_rate" => self.label_mask_rate = parse(key, v)?,
            "selection" => self.selection = v.into(),
            "split" => self.split = v.into(),
            "workers" => self.workers = Some(parse(key, v)?),
            other => bail!(ConfigError(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a `key = value` file (`#` starts a comment) or a JSON object
    /// such as a previous run's `run.json`.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        if text.trim_start().starts_with('{') {
            return self.apply_json(&text).with_context(|| format!("config {}", path.display()));
        }
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!(ConfigError(format!("{}:{}: expected key = value", path.display(), i + 1))))?;
            self.set(k, v)
                .with_context(|| format!("{}:{}", path.display(), i + 1))?;
        }
        Ok(())
    }

    fn apply_json(&mut self, text: &str) -> Result<()> {
        let map: serde_json::Map<String, serde_json::Value> =
            serde_json::from_str(text).map_err(|e| anyhow!(ConfigError(format!("bad JSON config: {e}"))))?;
        for (k, v) in &map {
            match v {
                serde_json::Value::Null => {}
                serde_json::Value::String(s) => self.set(k, s)?,
                other => self.set(k, &other.to_string())?,
            }
        }
        Ok(())
    }

    pub fn featureless_policy(&self) -> Result<FeaturelessPolicy> {
        match self.featureless.as_str() {
            "constant" => Ok(FeaturelessPolicy::Constant),
            "random" => Ok(FeaturelessPolicy::Random { seed: self.seed }),
            other => bail!(ConfigError(format!("featureless must be constant or random, got {other}"))),
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            hidden: self.hidden,
            mlp_layers: self.mlp_layers,
            activation: self.activation,
            dropout: self.dropout,
            variant: self.variant,
            share_tree_params: self.share_tree_params,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let optimizer = match self.optimizer.as_str() {
            "adam" => Optimizer::adam(),
            "sgd" => Optimizer::Sgd {
                momentum: self.momentum,
            },
            other => bail!(ConfigError(format!("optimizer must be adam or sgd, got {other}"))),
        };
        let selection = match self.selection.as_str() {
            "micro-f1" => Selection::MicroF1,
            "accuracy" => Selection::Accuracy,
            other => bail!(ConfigError(format!("selection must be micro-f1 or accuracy, got {other}"))),
        };
        let cfg = TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            weight_decay: self.weight_decay,
            optimizer,
            batch_size: self.batch_size,
            seed: self.seed,
            patience: self.patience,
            label_mask_rate: self.label_mask_rate,
            selection,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn require<'a>(&self, value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
        value
            .as_deref()
            .ok_or_else(|| anyhow!(ConfigError(format!("missing --{flag}"))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_json_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("activation", "leaky_relu:0.1").unwrap();
        cfg.set("variant", "parent-att").unwrap();
        cfg.set("mode", "exact").unwrap();
        cfg.set("workers", "2").unwrap();
        cfg.data = Some("d".into());
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        assert!(json.contains("\"leaky_relu:0.1\""), "{json}");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, json).unwrap();
        let mut back = RunConfig::default();
        back.apply_file(&path).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn file_then_set() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "# run\nhops = 1\nvariant = no-label\nlr=0.01 # fast\n\n").unwrap();
        let mut c = RunConfig::default();
        c.apply_file(&path).unwrap();
        assert_eq!(c.hops, 1);
        assert_eq!(c.variant, Variant::NoLabel);
        assert_eq!(c.lr, 0.01);
        c.set("hops", "3").unwrap();
        assert_eq!(c.hops, 3);
    }

    #[test]
    fn unknown_keys_and_bad_values() {
        let mut c = RunConfig::default();
        let e = c.set("hop", "2").unwrap_err();
        assert!(e.to_string().contains("unknown config key"));
        assert!(e.downcast_ref::<ConfigError>().is_some());
        assert!(c.set("dropout", "lots").is_err());
        assert!(c.set("mode", "fast").is_err());
        c.optimizer = "lbfgs".into();
        assert!(c.train_config().is_err());
    }
}
