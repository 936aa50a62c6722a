//! Named, ordered parameter storage shared by the encoders, the optimizer
//! and the checkpoint format.
//!
//! Values sit behind `Arc` so per-item computation graphs can reference the
//! live parameters without copying; the optimizer unshares lazily via
//! `Arc::make_mut` once the step's graphs are dropped.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use veracity_autodiff::{Graph, NodeId};

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Arc<Vec<f64>>,
}

/// Insertion-ordered map of named parameter tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: &str, shape: Vec<usize>, values: Vec<f64>) {
        assert_eq!(
            shape.iter().product::<usize>(),
            values.len(),
            "parameter {name} shape/value mismatch"
        );
        assert!(
            !self.index.contains_key(name),
            "parameter {name} registered twice"
        );
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            shape,
            values: Arc::new(values),
        });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|e| e.values.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamEntry> {
        self.entries.iter()
    }

    pub fn entry(&self, name: &str) -> &ParamEntry {
        &self.entries[*self.index.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"))]
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    pub fn index_of(&self, name: &str) -> usize {
        *self.index.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn values(&self, name: &str) -> &[f64] {
        &self.entry(name).values
    }

    pub fn values_mut(&mut self, name: &str) -> &mut Vec<f64> {
        let i = *self.index.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        Arc::make_mut(&mut self.entries[i].values)
    }

    pub fn entry_values_mut(&mut self, idx: usize) -> &mut Vec<f64> {
        Arc::make_mut(&mut self.entries[idx].values)
    }

    /// Create a graph leaf backed by this parameter without copying.
    pub fn leaf(&self, g: &mut Graph, name: &str, trainable: bool) -> NodeId {
        let entry = self.entry(name);
        g.leaf_shared(entry.shape.clone(), Arc::clone(&entry.values), trainable)
            .expect("stored parameters are consistent")
    }

    /// Bitwise equality of a named subset of parameters (prefix match).
    pub fn bitwise_eq_prefix(&self, other: &ParamStore, prefix: &str) -> bool {
        let mine: Vec<&ParamEntry> = self.entries.iter().filter(|e| e.name.starts_with(prefix)).collect();
        let theirs: Vec<&ParamEntry> = other.entries.iter().filter(|e| e.name.starts_with(prefix)).collect();
        if mine.len() != theirs.len() {
            return false;
        }
        mine.iter().zip(theirs.iter()).all(|(a, b)| {
            a.name == b.name
                && a.shape == b.shape
                && a.values.len() == b.values.len()
                && a.values
                    .iter()
                    .zip(b.values.iter())
                    .all(|(x, y)| x.to_bits() == y.to_bits())
        })
    }
}

/// Serialized form: name -> shape + row-major values, plus a format version.
#[derive(Debug, Serialize, Deserialize)]
pub struct ParamDump {
    pub version: u32,
    pub params: Vec<ParamDumpEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ParamDumpEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

pub const PARAM_DUMP_VERSION: u32 = 1;

impl ParamStore {
    pub fn dump(&self) -> ParamDump {
        ParamDump {
            version: PARAM_DUMP_VERSION,
            params: self
                .entries
                .iter()
                .map(|e| ParamDumpEntry {
                    name: e.name.clone(),
                    shape: e.shape.clone(),
                    values: e.values.as_ref().clone(),
                })
                .collect(),
        }
    }

    pub fn from_dump(dump: ParamDump) -> Result<Self, String> {
        if dump.version != PARAM_DUMP_VERSION {
            return Err(format!(
                "unsupported parameter dump version {}, expected {PARAM_DUMP_VERSION}",
                dump.version
            ));
        }
        let mut store = ParamStore::new();
        for e in dump.params {
            if e.shape.iter().product::<usize>() != e.values.len() {
                return Err(format!("parameter {} shape/value mismatch", e.name));
            }
            store.add(&e.name, e.shape, e.values);
        }
        Ok(store)
    }
}

/// Per-graph cache mapping parameter names to their leaf nodes so each
/// parameter appears exactly once per graph regardless of how many times an
/// encoder touches it. Gradient extraction walks this map after backward.
#[derive(Debug)]
pub struct ParamLeaves<'a> {
    store: &'a ParamStore,
    trainable: bool,
    map: HashMap<String, NodeId>,
}

impl<'a> ParamLeaves<'a> {
    pub fn new(store: &'a ParamStore, trainable: bool) -> Self {
        ParamLeaves {
            store,
            trainable,
            map: HashMap::new(),
        }
    }

    /// Wrap externally created leaves (one per parameter, by name) so code
    /// built on [`ParamLeaves`] can run against caller-owned graph nodes,
    /// e.g. inside a gradient-check closure.
    pub fn from_map(store: &'a ParamStore, map: HashMap<String, NodeId>) -> Self {
        ParamLeaves {
            store,
            trainable: true,
            map,
        }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn leaf(&mut self, g: &mut Graph, name: &str) -> NodeId {
        if let Some(&id) = self.map.get(name) {
            return id;
        }
        let id = self.store.leaf(g, name, self.trainable);
        self.map.insert(name.to_string(), id);
        id
    }

    /// Gradients of all touched parameters, aligned to store entry order.
    pub fn collect_grads(&self, g: &Graph) -> Vec<Option<Vec<f64>>> {
        let mut out = vec![None; self.store.len()];
        for (name, &id) in &self.map {
            if let Some(grad) = g.grad(id) {
                out[self.store.index_of(name)] = Some(grad.to_vec());
            }
        }
        out
    }
}
