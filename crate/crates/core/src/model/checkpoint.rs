use std::path::Path;

use serde_json::json;

use super::adam::AdamState;
use super::train::TrainConfig;
use super::DenoiserModel;
use crate::data::{read_archive, write_archive, Archive, Tensor};
use crate::error::{Error, Result};
use crate::fingerprint::fingerprint;
use crate::nn::{Architecture, DataLayout};

/// Model parameters, optimizer state and training provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: DenoiserModel<f32>,
    pub optimizer: AdamState<f32>,
    pub iteration: usize,
    pub fingerprint: String,
    pub loss_history: Vec<f64>,
    pub config: TrainConfig,
}

fn meta<T: serde::de::DeserializeOwned>(archive: &Archive, key: &str) -> Result<T> {
    let value = archive
        .metadata
        .get(key)
        .ok_or_else(|| Error::Model(format!("checkpoint metadata lacks {key:?}")))?;
    serde_json::from_value(value.clone()).map_err(|e| Error::Model(format!("checkpoint metadata {key:?}: {e}")))
}

impl Checkpoint {
    pub fn new(
        model: DenoiserModel<f32>,
        optimizer: AdamState<f32>,
        loss_history: Vec<f64>,
        config: TrainConfig,
    ) -> Result<Self> {
        Ok(Self {
            iteration: loss_history.len(),
            fingerprint: fingerprint(&config)?,
            model,
            optimizer,
            loss_history,
            config,
        })
    }

    pub fn to_archive(&self) -> Result<Archive> {
        let metadata = json!({
            "kind": "checkpoint",
            "iteration": self.iteration,
            "adam_step": self.optimizer.step,
            "fingerprint": self.fingerprint,
            "loss_history": self.loss_history,
            "architecture": self.model.architecture(),
            "layout": self.model.layout(),
            "sigma_data": self.model.sigma_data(),
            "train_config": self.config,
        });
        let mut archive = Archive::with_metadata(metadata);
        let vector = |v: &[f32]| Tensor::new(vec![v.len()], v.to_vec());
        archive.insert("params", vector(self.model.params()))?;
        archive.insert("adam_m", vector(&self.optimizer.m))?;
        archive.insert("adam_v", vector(&self.optimizer.v))?;
        Ok(archive)
    }

    pub fn from_archive(archive: &Archive) -> Result<Self> {
        let architecture: Architecture = meta(archive, "architecture")?;
        let layout: DataLayout = meta(archive, "layout")?;
        let sigma_data: f64 = meta(archive, "sigma_data")?;
        let params = archive.require("params")?.data.clone();
        let model = DenoiserModel::from_params(architecture, layout, sigma_data, params)?;
        let optimizer = AdamState {
            m: archive.require("adam_m")?.data.clone(),
            v: archive.require("adam_v")?.data.clone(),
            step: meta(archive, "adam_step")?,
        };
        if optimizer.m.len() != model.num_params() || optimizer.v.len() != model.num_params() {
            return Err(Error::Model("optimizer moments do not match the parameter count".into()));
        }
        Ok(Self {
            model,
            optimizer,
            iteration: meta(archive, "iteration")?,
            fingerprint: meta(archive, "fingerprint")?,
            loss_history: meta(archive, "loss_history")?,
            config: meta(archive, "train_config")?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(write_archive(path, &self.to_archive()?)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_archive(&read_archive(path)?)
    }
}
