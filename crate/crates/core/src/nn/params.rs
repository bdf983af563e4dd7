use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    /// Trained by the optimizer.
    Weight,
    /// Running statistic, updated during training-mode forward passes.
    Buffer,
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    kind: ParamKind,
    data: Vec<f32>,
}

/// Named parameter arrays keyed by canonical layer names
/// (e.g. `calib.stage1.block0.conv1.weight`).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Params {
    entries: Vec<Entry>,
}

impl Params {
    pub fn add(&mut self, name: &str, shape: &[usize], kind: ParamKind, data: Vec<f32>) -> ParamId {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "{name}");
        assert!(self.find(name).is_none(), "duplicate parameter {name}");
        self.entries.push(Entry {
            name: name.to_string(),
            shape: shape.to_vec(),
            kind,
            data,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &[f32] {
        &self.entries[id.0].data
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f32] {
        &mut self.entries[id.0].data
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.entries[id.0].shape
    }

    pub fn kind(&self, id: ParamId) -> ParamKind {
        self.entries[id.0].kind
    }

    /// Total number of trainable scalars.
    pub fn num_weights(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Weight)
            .map(|e| e.data.len())
            .sum()
    }

    /// Replaces the contents of a named array, checking the shape.
    pub fn assign(&mut self, name: &str, shape: &[usize], data: Vec<f32>) -> Result<()> {
        let id = self
            .find(name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
        let e = &mut self.entries[id.0];
        if e.shape != shape || data.len() != e.data.len() {
            return Err(Error::Checkpoint(format!(
                "parameter {name} has shape {:?}, checkpoint has {shape:?}",
                e.shape
            )));
        }
        e.data = data;
        Ok(())
    }

    pub fn apply_bn_updates(&mut self, updates: Vec<BnUpdate>) {
        for u in updates {
            let m = u.momentum;
            for (r, b) in self.get_mut(u.running_mean).iter_mut().zip(&u.batch_mean) {
                *r = (1.0 - m) * *r + m * b;
            }
            for (r, b) in self.get_mut(u.running_var).iter_mut().zip(&u.batch_var) {
                *r = (1.0 - m) * *r + m * b;
            }
        }
    }
}

/// Gradient accumulators aligned with a [`Params`] store. Buffers have no
/// gradient and map to empty slices.
#[derive(Debug, Clone)]
pub struct Grads {
    data: Vec<Vec<f32>>,
}

impl Grads {
    pub fn zeros_like(params: &Params) -> Self {
        let data = params
            .ids()
            .map(|id| match params.kind(id) {
                ParamKind::Weight => vec![0.0; params.get(id).len()],
                ParamKind::Buffer => Vec::new(),
            })
            .collect();
        Self { data }
    }

    pub fn get(&self, id: ParamId) -> &[f32] {
        &self.data[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f32] {
        &mut self.data[id.0]
    }

    pub fn zero(&mut self) {
        for g in &mut self.data {
            g.fill(0.0);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().flatten().all(|v| v.is_finite())
    }
}

/// Pending running-statistics update from one batch-norm forward pass.
#[derive(Debug, Clone)]
pub struct BnUpdate {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub batch_mean: Vec<f32>,
    pub batch_var: Vec<f32>,
    pub momentum: f32,
}

/// Per-forward-pass context: train/eval mode, the dropout RNG, and the
/// batch-norm updates to apply once the pass completes.
pub struct Ctx<'a> {
    pub train: bool,
    pub rng: Option<&'a mut ChaCha8Rng>,
    pub bn_updates: Vec<BnUpdate>,
}

impl<'a> Ctx<'a> {
    pub fn eval() -> Self {
        Self {
            train: false,
            rng: None,
            bn_updates: Vec::new(),
        }
    }

    pub fn train(rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            train: true,
            rng: Some(rng),
            bn_updates: Vec::new(),
        }
    }
}
