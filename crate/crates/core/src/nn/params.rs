//! Named, seeded parameter storage.
//!
//! Candle's CPU RNG cannot be seeded, so initial values are drawn here from a
//! ChaCha stream; building the same network twice from the same seed gives
//! bit-identical parameters.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex};

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

struct Inner {
    vars: BTreeMap<String, Var>,
    rng: ChaCha8Rng,
}

/// A shared table of trainable tensors keyed by dotted path.
#[derive(Clone)]
pub struct ParamStore {
    inner: Arc<Mutex<Inner>>,
    dtype: DType,
    device: Device,
}

impl std::fmt::Debug for ParamStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamStore")
            .field("params", &self.inner.lock().unwrap().vars.len())
            .field("dtype", &self.dtype)
            .finish()
    }
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType) -> Self {
        Self {
            inner: Arc::new(Mutex::new(Inner {
                vars: BTreeMap::new(),
                rng: ChaCha8Rng::seed_from_u64(seed),
            })),
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

    pub fn root(&self) -> ParamPath {
        ParamPath {
            store: self.clone(),
            prefix: String::new(),
        }
    }

    pub fn names(&self) -> Vec<String> {
        self.inner.lock().unwrap().vars.keys().cloned().collect()
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        self.inner.lock().unwrap().vars.get(name).cloned()
    }

    /// All variables whose name starts with `prefix`, in name order.
    pub fn vars_with_prefix(&self, prefix: &str) -> Vec<(String, Var)> {
        self.inner
            .lock()
            .unwrap()
            .vars
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    /// Exact number of scalars under `prefix`.
    pub fn count(&self, prefix: &str) -> usize {
        self.vars_with_prefix(prefix)
            .iter()
            .map(|(_, v)| v.elem_count())
            .sum()
    }

    /// SHA-256 over names and raw values under `prefix`.
    pub fn hash(&self, prefix: &str) -> Result<String> {
        let mut h = Sha256::new();
        for (name, var) in self.vars_with_prefix(prefix) {
            h.update(name.as_bytes());
            let values: Vec<f64> = var
                .as_tensor()
                .to_dtype(DType::F64)?
                .flatten_all()?
                .to_vec1()?;
            for v in values {
                h.update(v.to_le_bytes());
            }
        }
        Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn save_safetensors(&self, path: &Path) -> Result<()> {
        let tensors: HashMap<String, Tensor> = self
            .inner
            .lock()
            .unwrap()
            .vars
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().clone()))
            .collect();
        candle_core::safetensors::save(&tensors, path)?;
        Ok(())
    }

    /// Overwrite every variable from a safetensors file. Names and shapes must
    /// match exactly.
    pub fn load_safetensors(&self, path: &Path) -> Result<()> {
        let loaded = candle_core::safetensors::load(path, &self.device)?;
        let inner = self.inner.lock().unwrap();
        if loaded.len() != inner.vars.len() {
            return Err(Error::Other(format!(
                "{}: {} tensors, network has {}",
                path.display(),
                loaded.len(),
                inner.vars.len()
            )));
        }
        for (name, var) in &inner.vars {
            let t = loaded
                .get(name)
                .ok_or_else(|| Error::Other(format!("{}: missing tensor `{name}`", path.display())))?;
            if t.dims() != var.dims() {
                return Err(Error::shape(format!(
                    "`{name}`: stored {:?}, network {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    /// Copy values of matching names from another store.
    pub fn copy_from(&self, other: &ParamStore, prefix: &str) -> Result<()> {
        for (name, src) in other.vars_with_prefix(prefix) {
            let dst = self
                .get(&name)
                .ok_or_else(|| Error::Other(format!("no parameter `{name}` to copy into")))?;
            dst.set(&src.as_tensor().to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    fn create(&self, name: String, shape: &[usize], init: Init) -> Result<Tensor> {
        let mut inner = self.inner.lock().unwrap();
        if inner.vars.contains_key(&name) {
            return Err(Error::Other(format!("parameter `{name}` defined twice")));
        }
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Uniform(bound) => (0..n)
                .map(|_| inner.rng.random_range(-bound..=bound))
                .collect(),
            Init::Const(c) => vec![c; n],
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        inner.vars.insert(name, var);
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Uniform(f64),
    Const(f64),
}

/// A prefix into a [`ParamStore`], used while building a network.
#[derive(Clone)]
pub struct ParamPath {
    store: ParamStore,
    prefix: String,
}

impl ParamPath {
    pub fn pp(&self, name: impl AsRef<str>) -> ParamPath {
        let prefix = if self.prefix.is_empty() {
            name.as_ref().to_string()
        } else {
            format!("{}.{}", self.prefix, name.as_ref())
        };
        ParamPath {
            store: self.store.clone(),
            prefix,
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn param(&self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        self.store.create(self.pp(name).prefix, shape, init)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_init_is_reproducible() {
        let a = ParamStore::new(5, DType::F32);
        let b = ParamStore::new(5, DType::F32);
        for s in [&a, &b] {
            s.root().pp("x").param("w", &[3, 4], Init::Uniform(0.5)).unwrap();
            s.root().pp("x").param("b", &[4], Init::Const(0.0)).unwrap();
        }
        assert_eq!(a.hash("").unwrap(), b.hash("").unwrap());
        assert_eq!(a.count("x."), 16);
        assert_eq!(a.names(), vec!["x.b".to_string(), "x.w".to_string()]);
        let c = ParamStore::new(6, DType::F32);
        c.root().pp("x").param("w", &[3, 4], Init::Uniform(0.5)).unwrap();
        c.root().pp("x").param("b", &[4], Init::Const(0.0)).unwrap();
        assert_ne!(a.hash("").unwrap(), c.hash("").unwrap());
    }

    #[test]
    fn duplicate_names_rejected() {
        let s = ParamStore::new(0, DType::F32);
        s.root().param("w", &[1], Init::Const(1.0)).unwrap();
        assert!(s.root().param("w", &[1], Init::Const(1.0)).is_err());
    }

    #[test]
    fn safetensors_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.safetensors");
        let a = ParamStore::new(1, DType::F32);
        a.root().param("w", &[2, 3], Init::Uniform(1.0)).unwrap();
        a.save_safetensors(&path).unwrap();
        let b = ParamStore::new(2, DType::F32);
        b.root().param("w", &[2, 3], Init::Uniform(1.0)).unwrap();
        assert_ne!(a.hash("").unwrap(), b.hash("").unwrap());
        b.load_safetensors(&path).unwrap();
        assert_eq!(a.hash("").unwrap(), b.hash("").unwrap());

        let c = ParamStore::new(2, DType::F32);
        c.root().param("w", &[3, 2], Init::Uniform(1.0)).unwrap();
        assert!(c.load_safetensors(&path).is_err());
    }
}
