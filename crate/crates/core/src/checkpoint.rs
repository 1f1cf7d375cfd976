//! Training checkpoints: parameters, optimiser state, counters, the
//! configuration and a metric snapshot in one container file.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::container::{self, TensorRecord};
use crate::model::is_text_param;
use crate::nn::{Adam, ParamStore};
use crate::taxonomy::AttributeTaxonomy;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CAMOCKPT";
const FORMAT: u32 = 1;

const PARAM: &str = "param/";
const ADAM_M: &str = "adam.m/";
const ADAM_V: &str = "adam.v/";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    format: u32,
    epoch: usize,
    step: u64,
    adam_step: u64,
    config: TrainConfig,
    config_hash: String,
    taxonomy: AttributeTaxonomy,
    metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub config_hash: String,
    pub taxonomy: AttributeTaxonomy,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimiser steps.
    pub step: u64,
    pub metrics: BTreeMap<String, f64>,
    /// Every stored tensor of the model, including frozen weights and
    /// normalisation statistics, by name.
    pub params: BTreeMap<String, TensorRecord>,
    pub adam_step: u64,
    pub adam_m: BTreeMap<String, TensorRecord>,
    pub adam_v: BTreeMap<String, TensorRecord>,
}

fn record(name: &str, t: &Tensor) -> Result<TensorRecord> {
    Ok(TensorRecord {
        name: name.to_string(),
        shape: t.dims().to_vec(),
        data: t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?,
    })
}

fn tensor(r: &TensorRecord, dtype: DType) -> Result<Tensor> {
    Ok(Tensor::from_vec(r.data.clone(), r.shape.as_slice(), &Device::Cpu)?.to_dtype(dtype)?)
}

impl Checkpoint {
    pub fn capture(
        store: &ParamStore,
        adam: &Adam,
        config: &TrainConfig,
        taxonomy: &AttributeTaxonomy,
        epoch: usize,
        step: u64,
        metrics: BTreeMap<String, f64>,
    ) -> Result<Self> {
        let params = store
            .all()
            .into_iter()
            .map(|(n, v)| Ok((n.clone(), record(&n, v.as_tensor())?)))
            .collect::<Result<_>>()?;
        let (adam_step, m, v) = adam.state();
        let moments = |map: &BTreeMap<String, Tensor>| -> Result<BTreeMap<String, TensorRecord>> {
            map.iter().map(|(n, t)| Ok((n.clone(), record(n, t)?))).collect()
        };
        Ok(Self {
            config: config.clone(),
            config_hash: config.hash(),
            taxonomy: taxonomy.clone(),
            epoch,
            step,
            metrics,
            params,
            adam_step,
            adam_m: moments(m)?,
            adam_v: moments(v)?,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_value(Meta {
            format: FORMAT,
            epoch: self.epoch,
            step: self.step,
            adam_step: self.adam_step,
            config: self.config.clone(),
            config_hash: self.config_hash.clone(),
            taxonomy: self.taxonomy.clone(),
            metrics: self.metrics.clone(),
        })?;
        let mut tensors = Vec::new();
        for (prefix, map) in [(PARAM, &self.params), (ADAM_M, &self.adam_m), (ADAM_V, &self.adam_v)] {
            for (name, r) in map {
                tensors.push(TensorRecord {
                    name: format!("{prefix}{name}"),
                    ..r.clone()
                });
            }
        }
        container::encode(CHECKPOINT_MAGIC, &meta, &tensors)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (meta, tensors) = container::decode(bytes, CHECKPOINT_MAGIC)?;
        let meta: Meta = serde_json::from_value(meta)?;
        if meta.format != FORMAT {
            return Err(Error::Checkpoint(format!("unsupported checkpoint format {}", meta.format)));
        }
        if meta.config.hash() != meta.config_hash {
            return Err(Error::Checkpoint("stored config hash does not match the stored config".into()));
        }
        let mut params = BTreeMap::new();
        let mut adam_m = BTreeMap::new();
        let mut adam_v = BTreeMap::new();
        for t in tensors {
            let (map, name) = if let Some(n) = t.name.strip_prefix(PARAM) {
                (&mut params, n.to_string())
            } else if let Some(n) = t.name.strip_prefix(ADAM_M) {
                (&mut adam_m, n.to_string())
            } else if let Some(n) = t.name.strip_prefix(ADAM_V) {
                (&mut adam_v, n.to_string())
            } else {
                return Err(Error::Checkpoint(format!("unexpected tensor `{}`", t.name)));
            };
            map.insert(name.clone(), TensorRecord { name, ..t });
        }
        Ok(Self {
            config: meta.config,
            config_hash: meta.config_hash,
            taxonomy: meta.taxonomy,
            epoch: meta.epoch,
            step: meta.step,
            metrics: meta.metrics,
            params,
            adam_step: meta.adam_step,
            adam_m,
            adam_v,
        })
    }

    /// Writes to a temporary sibling and renames it over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        container::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Copies stored values into every tensor of `store`. Text-side entries
    /// the store lacks are ignored (an inference build); any other
    /// difference in names or shapes is an error.
    pub fn restore_params(&self, store: &ParamStore) -> Result<()> {
        let names: Vec<String> = store.all().into_iter().map(|(n, _)| n).collect();
        for name in &names {
            let r = self
                .params
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("checkpoint lacks parameter `{name}`; model config differs")))?;
            store.set(name, &tensor(r, store.dtype())?)?;
        }
        for name in self.params.keys() {
            if store.kind(name).is_none() && !is_text_param(name) {
                return Err(Error::Checkpoint(format!("checkpoint parameter `{name}` has no place in this model")));
            }
        }
        Ok(())
    }

    pub fn restore_adam(&self, dtype: DType) -> Result<Adam> {
        let load = |map: &BTreeMap<String, TensorRecord>| -> Result<BTreeMap<String, Tensor>> {
            map.iter().map(|(n, r)| Ok((n.clone(), tensor(r, dtype)?))).collect()
        };
        Ok(Adam::restore(self.config.adam, self.adam_step, load(&self.adam_m)?, load(&self.adam_v)?))
    }
}
