//! Physical network model: one base station object per grid cell.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type PnoId = u32;

/// Grid shape and per-cell internal property defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub rows: usize,
    pub cols: usize,
    #[serde(default = "default_capacity")]
    pub capacity: f64,
}

fn default_capacity() -> f64 {
    100.0
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            rows: 10,
            cols: 10,
            capacity: default_capacity(),
        }
    }
}

/// A network entity with internal properties (scalars describing itself)
/// and external properties (links to other entities it affects).
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalNetworkObject {
    pub id: PnoId,
    pub position: (f64, f64),
    pub internal_props: BTreeMap<String, f64>,
    pub external_props: BTreeMap<String, PnoId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalNetwork {
    pub grid_dims: (usize, usize),
    pub objects: Vec<PhysicalNetworkObject>,
    epoch: u64,
}

pub fn build_physical_network(config: &NetworkConfig) -> Result<PhysicalNetwork> {
    if config.rows == 0 {
        return Err(Error::config("network.rows", "must be at least 1"));
    }
    if config.cols == 0 {
        return Err(Error::config("network.cols", "must be at least 1"));
    }
    if !(config.capacity.is_finite() && config.capacity >= 0.0) {
        return Err(Error::config("network.capacity", "must be finite and non-negative"));
    }
    let mut objects = Vec::with_capacity(config.rows * config.cols);
    for r in 0..config.rows {
        for c in 0..config.cols {
            let id = (r * config.cols + c) as PnoId;
            let mut internal_props = BTreeMap::new();
            internal_props.insert("capacity".to_string(), config.capacity);
            objects.push(PhysicalNetworkObject {
                id,
                position: (c as f64, r as f64),
                internal_props,
                external_props: BTreeMap::new(),
            });
        }
    }
    Ok(PhysicalNetwork {
        grid_dims: (config.rows, config.cols),
        objects,
        epoch: 0,
    })
}

impl PhysicalNetwork {
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn cell_ids(&self) -> Vec<PnoId> {
        self.objects.iter().map(|o| o.id).collect()
    }

    pub fn get(&self, id: PnoId) -> Option<&PhysicalNetworkObject> {
        // Ids are dense row-major indices for grid-built networks.
        match self.objects.get(id as usize) {
            Some(o) if o.id == id => Some(o),
            _ => self.objects.iter().find(|o| o.id == id),
        }
    }

    fn index_of(&self, id: PnoId) -> Result<usize> {
        match self.objects.get(id as usize) {
            Some(o) if o.id == id => Ok(id as usize),
            _ => self
                .objects
                .iter()
                .position(|o| o.id == id)
                .ok_or_else(|| Error::State(format!("unknown network object {id}"))),
        }
    }

    /// Points external property `key` of `from` at `to`.
    ///
    /// When `from` was itself the target of `key` links (it headed a group),
    /// those dependants are re-pointed at `to` as well, mirroring how a
    /// change in one object's attachment ripples to the objects attached
    /// through it. Returns the ids whose properties changed, and advances
    /// the epoch once.
    pub fn set_external(&mut self, from: PnoId, key: &str, to: PnoId) -> Result<Vec<PnoId>> {
        let from_idx = self.index_of(from)?;
        self.index_of(to)?;
        let mut changed = vec![from];
        self.objects[from_idx].external_props.insert(key.to_string(), to);
        if from != to {
            for obj in self.objects.iter_mut() {
                if obj.id != from && obj.external_props.get(key) == Some(&from) {
                    obj.external_props.insert(key.to_string(), to);
                    changed.push(obj.id);
                }
            }
        }
        self.epoch += 1;
        Ok(changed)
    }

    /// Checks id uniqueness, grid bounds and that every link resolves.
    pub fn validate(&self) -> Result<()> {
        let (rows, cols) = self.grid_dims;
        if rows * cols != self.objects.len() {
            return Err(Error::State(format!(
                "grid {rows}x{cols} does not match {} objects",
                self.objects.len()
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for o in &self.objects {
            if !seen.insert(o.id) {
                return Err(Error::State(format!("duplicate object id {}", o.id)));
            }
            let (x, y) = o.position;
            if !(x >= 0.0 && x < cols as f64 && y >= 0.0 && y < rows as f64) {
                return Err(Error::State(format!("object {} outside grid bounds", o.id)));
            }
        }
        for o in &self.objects {
            for (key, target) in &o.external_props {
                if !seen.contains(target) {
                    return Err(Error::State(format!(
                        "object {} property `{key}` references missing object {target}",
                        o.id
                    )));
                }
            }
        }
        Ok(())
    }
}
