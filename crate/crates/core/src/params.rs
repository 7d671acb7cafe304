//! Named parameter tensors, their gradients, and the AdamW optimizer.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Parameter tensors keyed by hierarchical names such as `encoder.layer1.attn.wq`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
    index: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    /// Registers a tensor. Panics on a duplicate name: parameter layouts are
    /// fixed at model construction.
    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.values.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn add_normal<R: Rng>(&mut self, name: impl Into<String>, rows: usize, cols: usize, std: f64, rng: &mut R) -> ParamId {
        let normal = Normal::new(0.0, std).expect("finite std");
        let value = Mat::from_shape_simple_fn((rows, cols), || normal.sample(rng));
        self.add(name, value)
    }

    /// Xavier-style init scaled by fan-in and fan-out.
    pub fn add_xavier<R: Rng>(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut R) -> ParamId {
        let std = (2.0 / (rows + cols) as f64).sqrt();
        self.add_normal(name, rows, cols, std, rng)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Mat::zeros((rows, cols)))
    }

    pub fn add_ones(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Mat::ones((rows, cols)))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn to_named(&self) -> BTreeMap<String, NamedTensor> {
        self.names
            .iter()
            .zip(&self.values)
            .map(|(n, v)| (n.clone(), NamedTensor::from(v)))
            .collect()
    }

    /// Overwrites values from a name-keyed map. Every registered name must
    /// be present with a matching shape, and no extra names are allowed.
    pub fn load_named(&mut self, named: &BTreeMap<String, NamedTensor>) -> Result<(), String> {
        if named.len() != self.names.len() {
            return Err(format!("expected {} tensors, found {}", self.names.len(), named.len()));
        }
        for (idx, name) in self.names.iter().enumerate() {
            let t = named.get(name).ok_or_else(|| format!("missing tensor {name}"))?;
            let m = t.to_mat()?;
            if m.dim() != self.values[idx].dim() {
                return Err(format!(
                    "tensor {name}: shape {:?} does not match {:?}",
                    m.dim(),
                    self.values[idx].dim()
                ));
            }
            self.values[idx] = m;
        }
        Ok(())
    }
}

/// Serialized form of one tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&Mat> for NamedTensor {
    fn from(m: &Mat) -> Self {
        NamedTensor {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.iter().copied().collect(),
        }
    }
}

impl NamedTensor {
    pub fn to_mat(&self) -> Result<Mat, String> {
        Mat::from_shape_vec((self.rows, self.cols), self.data.clone()).map_err(|e| e.to_string())
    }
}

/// Gradients aligned with a [`ParamStore`]; untouched parameters stay `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    values: Vec<Option<Mat>>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Grads {
        Grads {
            values: vec![None; store.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.values.get(id.0).and_then(Option::as_ref)
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Mat) {
        match &mut self.values[id.0] {
            Some(acc) => *acc += g,
            slot @ None => *slot = Some(g.clone()),
        }
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (idx, g) in other.values.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(idx), g);
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.values.iter_mut().flatten() {
            *g *= factor;
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .map(|g| g.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().flatten().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-5,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with decoupled weight decay. Decay is skipped for 1-row tensors
/// (biases and norm gains).
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, store: &ParamStore) -> AdamW {
        let zeros: Vec<Mat> = store.values.iter().map(|p| Mat::zeros(p.dim())).collect();
        AdamW {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) {
        self.step += 1;
        let AdamWConfig {
            lr,
            weight_decay,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (idx, param) in store.values.iter_mut().enumerate() {
            let Some(g) = grads.values[idx].as_ref() else {
                continue;
            };
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let decay = if param.nrows() > 1 { weight_decay } else { 0.0 };
            ndarray::Zip::from(param).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let update = (*m / bc1) / ((*v / bc2).sqrt() + eps);
                *p -= lr * (update + decay * *p);
            });
        }
    }
}
