//! Experiment configuration: one TOML file, strict about unknown keys, with
//! dotted `key=value` overrides applied on top.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::toy::MixtureSpec;
use crate::augment::AugmentationParams;
use crate::data::{DatasetSpec, PhantomSpec};
use crate::error::{Error, Result};
use crate::fingerprint::fingerprint;
use crate::metrics::EvalOptions;
use crate::model::TrainConfig;
use crate::nn::{Architecture, DataLayout};
use crate::sampler::SamplerConfig;
use crate::volume::PHASES;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub rows: usize,
    pub cols: usize,
    pub ellipses: [usize; 2],
    pub vessels: [usize; 2],
    pub amplitudes: [f64; PHASES],
    pub tissue_noise: f64,
    pub train_count: usize,
    pub test_count: usize,
    pub dose_fraction: f64,
    pub base_sigma: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        let p = PhantomSpec::default();
        Self {
            rows: p.rows,
            cols: p.cols,
            ellipses: p.ellipses,
            vessels: p.vessels,
            amplitudes: p.amplitudes,
            tissue_noise: p.tissue_noise,
            train_count: 64,
            test_count: 8,
            dose_fraction: 0.1,
            base_sigma: 0.02,
        }
    }
}

impl DataConfig {
    pub fn dataset(&self, count: usize, seed: u64) -> DatasetSpec {
        DatasetSpec {
            phantom: PhantomSpec {
                rows: self.rows,
                cols: self.cols,
                ellipses: self.ellipses,
                vessels: self.vessels,
                amplitudes: self.amplitudes,
                tissue_noise: self.tissue_noise,
                seed,
            },
            count,
            dose_fraction: self.dose_fraction,
            base_sigma: self.base_sigma,
        }
    }

    pub fn layout(&self) -> DataLayout {
        DataLayout::Volume {
            rows: self.rows,
            cols: self.cols,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// Augmented dimension.
    pub d: usize,
    pub sigma_data: f64,
    pub p_mean: f64,
    pub p_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::ConvNet { width: 16 },
            d: 128,
            sigma_data: 0.5,
            p_mean: -1.2,
            p_std: 1.2,
        }
    }
}

impl ModelConfig {
    pub fn augmentation(&self, n: usize) -> AugmentationParams {
        AugmentationParams {
            n,
            d: self.d,
            sigma_data: self.sigma_data,
            p_mean: self.p_mean,
            p_std: self.p_std,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub checkpoint_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            iterations: 1000,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            checkpoint_every: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub d_values: Vec<usize>,
    pub w_values: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            d_values: vec![2, 8, 32, 64, 128, 256, 512, 2048],
            w_values: vec![0.0, 0.05, 0.1, 0.2, 0.5],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub mixture: MixtureSpec,
    pub d: usize,
    /// Starting radius; defaults to `sigma_max·√D` of the sampler section.
    pub r_max: Option<f64>,
    pub steps: usize,
    pub trajectories: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            mixture: MixtureSpec::default(),
            d: 128,
            r_max: None,
            steps: 200,
            trajectories: 4,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub sampler: SamplerConfig,
    pub eval: EvalOptions,
    pub sweep: SweepConfig,
    pub oracle: OracleConfig,
}

/// Derives an independent stream seed from the run seed and a purpose tag.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest holds 32 bytes"))
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

/// Parses a `key=value` override. The value is read as a TOML value and
/// falls back to a bare string.
fn parse_override(spec: &str) -> Result<(Vec<String>, toml::Value)> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not of the form key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(Error::Config(format!("override key {key:?} has an empty segment")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((path, value))
}

fn apply_override(table: &mut toml::Table, path: &[String], value: toml::Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("override path is nonempty");
    let mut node = table;
    for (i, key) in parents.iter().enumerate() {
        let entry = node
            .entry(key.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry.as_table_mut().ok_or_else(|| {
            Error::Config(format!("override {}: {key:?} is not a table", path[..=i].join(".")))
        })?;
    }
    node.insert(last.clone(), value);
    Ok(())
}

impl ExperimentConfig {
    /// Parses config text, then applies overrides and an optional seed.
    pub fn from_toml(text: &str, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        // A first typed pass reports file errors with line and column.
        toml::from_str::<ExperimentConfig>(text).map_err(config_err)?;
        let mut table: toml::Table = toml::from_str(text).map_err(config_err)?;
        for spec in overrides {
            let (path, value) = parse_override(spec)?;
            apply_override(&mut table, &path, value)?;
        }
        let mut config: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| Error::Config(format!("after overrides {overrides:?}: {e}")))?;
        if let Some(s) = seed {
            config.seed = s;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides, seed).map_err(|e| match (e, path) {
            (Error::Config(m), Some(p)) => Error::Config(format!("{}: {m}", p.display())),
            (e, _) => e,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(config_err)
    }

    pub fn fingerprint(&self) -> Result<String> {
        fingerprint(self)
    }

    /// Fingerprint of everything that determines the generated datasets.
    pub fn data_fingerprint(&self) -> Result<String> {
        fingerprint(&(self.seed, &self.data))
    }

    pub fn layout(&self) -> DataLayout {
        self.data.layout()
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            batch_size: t.batch_size,
            iterations: t.iterations,
            lr: t.lr,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            seed: derive_seed(self.seed, "train"),
            checkpoint_every: t.checkpoint_every,
            augmentation: self.model.augmentation(self.layout().data_len()),
        }
    }

    pub fn oracle_r_max(&self) -> f64 {
        self.oracle
            .r_max
            .unwrap_or(self.sampler.sigma_max * (self.oracle.d as f64).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| Error::Config(e.to_string());
        self.data.dataset(1, 0).phantom.validate().map_err(cfg)?;
        if self.data.train_count == 0 || self.data.test_count == 0 {
            return Err(Error::Config("data.train_count and data.test_count must be positive".into()));
        }
        if !(self.data.dose_fraction > 0.0 && self.data.dose_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "data.dose_fraction must lie in (0, 1], got {}",
                self.data.dose_fraction
            )));
        }
        if !(self.data.base_sigma >= 0.0) {
            return Err(Error::Config("data.base_sigma must be nonnegative".into()));
        }
        if let Architecture::ConvNet { width } = self.model.architecture {
            if width == 0 || !self.data.rows.is_multiple_of(2) || !self.data.cols.is_multiple_of(2) {
                return Err(Error::Config(
                    "conv_net needs a positive width and even data.rows/data.cols".into(),
                ));
            }
        }
        self.train_config().validate().map_err(cfg)?;
        self.sampler.schedule().map_err(cfg)?;
        if self.eval.feature_grid == 0 || self.eval.feature_grid > self.data.rows.min(self.data.cols) {
            return Err(Error::Config("eval.feature_grid must lie in 1..=min(rows, cols)".into()));
        }
        if !(self.eval.max > 0.0) {
            return Err(Error::Config("eval.max must be positive".into()));
        }
        if self.sweep.d_values.contains(&0) {
            return Err(Error::Config("sweep.d_values must be positive".into()));
        }
        if self.sweep.w_values.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::Config("sweep.w_values must lie in [0, 1]".into()));
        }
        if self.oracle.d == 0 || self.oracle.steps == 0 || self.oracle_r_max() <= crate::oracle::R_MIN {
            return Err(Error::Config("oracle.d and oracle.steps must be positive and r_max above r_min".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = ExperimentConfig::from_toml("", &[], None).unwrap();
        assert_eq!(c, ExperimentConfig::default());
        let round = ExperimentConfig::from_toml(&c.to_toml().unwrap(), &[], None).unwrap();
        assert_eq!(round, c);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ExperimentConfig::from_toml("[model]\nd = 8\ndimension = 3\n", &[], None).unwrap_err();
        assert!(err.is_config());
        let msg = err.to_string();
        assert!(msg.contains("dimension"), "{msg}");
        assert!(msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn overrides_and_seed() {
        let c = ExperimentConfig::from_toml(
            "seed = 3\n[model]\nd = 8\n",
            &["model.d=64".into(), "sampler.init_mode=condition_plus_noise".into(), "sweep.w_values=[0.0, 0.3]".into()],
            Some(11),
        )
        .unwrap();
        assert_eq!(c.model.d, 64);
        assert_eq!(c.seed, 11);
        assert_eq!(c.sampler.init_mode, crate::sampler::InitMode::ConditionPlusNoise);
        assert_eq!(c.sweep.w_values, vec![0.0, 0.3]);
        let err = ExperimentConfig::from_toml("", &["model.depth=3".into()], None).unwrap_err();
        assert!(err.to_string().contains("depth"));
        assert!(ExperimentConfig::from_toml("", &["model.d".into()], None).is_err());
        assert!(ExperimentConfig::from_toml("", &["sampler.w=2.0".into()], None).is_err());
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.model.d = 64;
        assert_ne!(a.fingerprint().unwrap(), b.fingerprint().unwrap());
        assert_eq!(a.data_fingerprint().unwrap(), b.data_fingerprint().unwrap());
        assert_ne!(derive_seed(0, "train"), derive_seed(0, "sampler"));
    }
}
