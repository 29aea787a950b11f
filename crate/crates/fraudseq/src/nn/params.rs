//! Named parameter collections, their gradients, the Adagrad optimizer,
//! and the versioned binary persistence format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Ordered, named collection of parameter tensors. Shapes are fixed at
/// creation; the stored seed records how the tensors were initialized.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterStore {
    entries: IndexMap<String, Tensor>,
    pub rng_seed: u64,
}

impl ParameterStore {
    pub fn new(rng_seed: u64) -> Self {
        ParameterStore { entries: IndexMap::new(), rng_seed }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        assert!(
            !self.entries.contains_key(&name),
            "duplicate parameter `{name}`"
        );
        self.entries.insert(name, tensor);
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Gradients keyed by parameter name; accumulation sums across batches.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    entries: IndexMap<String, Tensor>,
}

impl Gradients {
    pub fn new() -> Self {
        Gradients::default()
    }

    pub fn accumulate(&mut self, name: &str, grad: Tensor) {
        match self.entries.get_mut(name) {
            Some(existing) => existing.add_assign(&grad),
            None => {
                self.entries.insert(name.to_string(), grad);
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Euclidean norm over gradients whose name starts with `prefix`.
    pub fn norm_with_prefix(&self, prefix: &str) -> f64 {
        self.entries
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, t)| t.data().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

/// Adagrad state: per-parameter squared-gradient accumulators.
#[derive(Clone, Debug)]
pub struct AdagradState {
    pub lr: f64,
    pub eps: f64,
    accumulators: IndexMap<String, Tensor>,
}

impl AdagradState {
    pub fn new(params: &ParameterStore, lr: f64, eps: f64) -> Self {
        assert!(lr > 0.0 && eps > 0.0);
        let accumulators = params
            .iter()
            .map(|(name, t)| (name.to_string(), Tensor::zeros(t.shape())))
            .collect();
        AdagradState { lr, eps, accumulators }
    }

    pub fn accumulator(&self, name: &str) -> &Tensor {
        &self.accumulators[name]
    }
}

/// One Adagrad update: G += g^2, then theta -= lr * g / (sqrt(G) + eps),
/// elementwise over every parameter.
pub fn adagrad_step(
    params: &mut ParameterStore,
    grads: &Gradients,
    state: &mut AdagradState,
) -> Result<()> {
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let grad = grads
            .get(&name)
            .ok_or_else(|| Error::MissingGradient(name.clone()))?;
        let acc = state
            .accumulators
            .get_mut(&name)
            .expect("accumulator shapes fixed at construction");
        let theta = params.get_mut(&name);
        assert_eq!(theta.shape(), grad.shape(), "gradient shape mismatch for `{name}`");
        let (lr, eps) = (state.lr, state.eps);
        for ((p, g), a) in theta
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(acc.data_mut())
        {
            *a += g * g;
            *p -= lr * g / (a.sqrt() + eps);
        }
    }
    Ok(())
}

const PARAMS_MAGIC: &[u8; 4] = b"FSPS";
const PARAMS_VERSION: u32 = 1;

/// Versioned binary format: magic, version, seed, entry count, then per
/// entry a length-prefixed name, rank, extents, and little-endian f64 data.
pub fn save_params(params: &ParameterStore, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = BufWriter::new(file);
    let io_err = |e| Error::io(path.display().to_string(), e);
    out.write_all(PARAMS_MAGIC).map_err(io_err)?;
    out.write_all(&PARAMS_VERSION.to_le_bytes()).map_err(io_err)?;
    out.write_all(&params.rng_seed.to_le_bytes()).map_err(io_err)?;
    out.write_all(&(params.len() as u64).to_le_bytes()).map_err(io_err)?;
    for (name, tensor) in params.iter() {
        out.write_all(&(name.len() as u32).to_le_bytes()).map_err(io_err)?;
        out.write_all(name.as_bytes()).map_err(io_err)?;
        out.write_all(&(tensor.shape().len() as u32).to_le_bytes()).map_err(io_err)?;
        for &dim in tensor.shape() {
            out.write_all(&(dim as u64).to_le_bytes()).map_err(io_err)?;
        }
        for v in tensor.data() {
            out.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    out.flush().map_err(io_err)
}

pub fn load_params(path: &Path) -> Result<ParameterStore> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut input = BufReader::new(file);
    let corrupt = |reason: &str| Error::CorruptFile {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(|_| corrupt("truncated header"))?;
    if &magic != PARAMS_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let mut u32buf = [0u8; 4];
    let mut u64buf = [0u8; 8];
    input.read_exact(&mut u32buf).map_err(|_| corrupt("truncated header"))?;
    let version = u32::from_le_bytes(u32buf);
    if version != PARAMS_VERSION {
        return Err(corrupt(&format!("unsupported version {version}")));
    }
    input.read_exact(&mut u64buf).map_err(|_| corrupt("truncated header"))?;
    let rng_seed = u64::from_le_bytes(u64buf);
    input.read_exact(&mut u64buf).map_err(|_| corrupt("truncated header"))?;
    let count = u64::from_le_bytes(u64buf) as usize;
    let mut store = ParameterStore::new(rng_seed);
    for _ in 0..count {
        input.read_exact(&mut u32buf).map_err(|_| corrupt("truncated entry"))?;
        let name_len = u32::from_le_bytes(u32buf) as usize;
        let mut name = vec![0u8; name_len];
        input.read_exact(&mut name).map_err(|_| corrupt("truncated name"))?;
        let name = String::from_utf8(name).map_err(|_| corrupt("name is not UTF-8"))?;
        input.read_exact(&mut u32buf).map_err(|_| corrupt("truncated shape"))?;
        let rank = u32::from_le_bytes(u32buf) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            input.read_exact(&mut u64buf).map_err(|_| corrupt("truncated shape"))?;
            shape.push(u64::from_le_bytes(u64buf) as usize);
        }
        let volume: usize = shape.iter().product();
        let mut data = Vec::with_capacity(volume);
        for _ in 0..volume {
            input.read_exact(&mut u64buf).map_err(|_| corrupt("truncated data"))?;
            data.push(f64::from_le_bytes(u64buf));
        }
        store.insert(name, Tensor::from_vec(&shape, data)?);
    }
    Ok(store)
}
