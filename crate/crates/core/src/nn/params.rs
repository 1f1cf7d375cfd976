//! Named parameter storage with seeded initialisation.

use std::collections::BTreeMap;
use std::sync::Mutex;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::{Error, Result};

/// How a freshly created parameter is filled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Const(f64),
    Normal(f64),
    /// Uniform on `[-bound, bound]`.
    Uniform(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimiser.
    Trainable,
    /// Loaded and saved but never updated (frozen encoders).
    Frozen,
    /// Running statistics, updated in place during training forward passes.
    Buffer,
}

struct Entry {
    var: Var,
    kind: ParamKind,
}

struct Inner {
    rng: ChaCha8Rng,
    entries: BTreeMap<String, Entry>,
}

/// All parameters of a model, keyed by dotted path.
///
/// Initial values are drawn from a ChaCha stream seeded at construction, in
/// the order parameters are created, so building the same model twice with
/// the same seed yields bitwise identical weights on every platform.
pub struct ParamStore {
    inner: Mutex<Inner>,
    dtype: DType,
    device: Device,
}

impl ParamStore {
    pub fn new(dtype: DType, seed: u64) -> Self {
        Self {
            inner: Mutex::new(Inner {
                rng: ChaCha8Rng::seed_from_u64(seed),
                entries: BTreeMap::new(),
            }),
            dtype,
            device: Device::Cpu,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn root(&self) -> Scope<'_> {
        Scope {
            store: self,
            prefix: String::new(),
            frozen: false,
        }
    }

    fn create(&self, name: String, shape: &[usize], init: Init, kind: ParamKind) -> Result<Var> {
        let mut inner = self.inner.lock().expect("parameter store poisoned");
        if inner.entries.contains_key(&name) {
            return Err(Error::Config(format!("parameter `{name}` defined twice")));
        }
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Const(v) => vec![v; n],
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
                (0..n).map(|_| dist.sample(&mut inner.rng)).collect()
            }
            Init::Uniform(bound) => (0..n).map(|_| inner.rng.gen_range(-bound..=bound)).collect(),
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        inner.entries.insert(name, Entry { var: var.clone(), kind });
        Ok(var)
    }

    /// Trainable parameters in name order.
    pub fn trainable(&self) -> Vec<(String, Var)> {
        self.filtered(|k| k == ParamKind::Trainable)
    }

    /// Every stored tensor (trainable, frozen and buffers) in name order.
    pub fn all(&self) -> Vec<(String, Var)> {
        self.filtered(|_| true)
    }

    fn filtered(&self, keep: impl Fn(ParamKind) -> bool) -> Vec<(String, Var)> {
        let inner = self.inner.lock().expect("parameter store poisoned");
        inner
            .entries
            .iter()
            .filter(|(_, e)| keep(e.kind))
            .map(|(k, e)| (k.clone(), e.var.clone()))
            .collect()
    }

    pub fn kind(&self, name: &str) -> Option<ParamKind> {
        self.inner.lock().expect("parameter store poisoned").entries.get(name).map(|e| e.kind)
    }

    pub fn get(&self, name: &str) -> Option<Tensor> {
        let inner = self.inner.lock().expect("parameter store poisoned");
        inner.entries.get(name).map(|e| e.var.as_detached_tensor())
    }

    /// Overwrites a stored value; the shape must match.
    pub fn set(&self, name: &str, value: &Tensor) -> Result<()> {
        let inner = self.inner.lock().expect("parameter store poisoned");
        let entry = inner
            .entries
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter `{name}`")))?;
        if entry.var.dims() != value.dims() {
            return Err(Error::shape("parameter assignment", entry.var.dims(), value.dims()));
        }
        entry.var.set(&value.to_dtype(self.dtype)?)?;
        Ok(())
    }

    /// Total number of scalar values held by trainable parameters.
    pub fn trainable_count(&self) -> usize {
        self.trainable().iter().map(|(_, v)| v.elem_count()).sum()
    }
}

/// A view of the store under a name prefix.
#[derive(Clone)]
pub struct Scope<'a> {
    store: &'a ParamStore,
    prefix: String,
    frozen: bool,
}

impl<'a> Scope<'a> {
    /// Child scope `prefix.name`.
    pub fn pp(&self, name: impl std::fmt::Display) -> Scope<'a> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        Scope {
            store: self.store,
            prefix,
            frozen: self.frozen,
        }
    }

    /// Parameters created below this scope are frozen when `frozen` is set.
    pub fn frozen(mut self, frozen: bool) -> Self {
        self.frozen = self.frozen || frozen;
        self
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype
    }

    pub fn device(&self) -> &'a Device {
        &self.store.device
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    /// Creates a parameter. Trainable parameters come back attached to the
    /// autograd graph; frozen ones detached.
    pub fn param(&self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let kind = if self.frozen { ParamKind::Frozen } else { ParamKind::Trainable };
        let var = self.store.create(self.full_name(name), shape, init, kind)?;
        Ok(match kind {
            ParamKind::Trainable => var.as_tensor().clone(),
            _ => var.as_detached_tensor(),
        })
    }

    pub fn buffer(&self, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        self.store.create(self.full_name(name), shape, init, ParamKind::Buffer)
    }
}
