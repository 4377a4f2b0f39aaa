use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::CoreError;

use super::graph::{Graph, Var};
use super::tensor::Tensor;

/// Index of a named parameter inside a [`ParamSet`].
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct ParamId(pub usize);

/// Ordered, named collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            self.entries.iter().all(|(n, _)| *n != name),
            "duplicate parameter name {name}"
        );
        self.entries.push((name, tensor));
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].1
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].1
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    /// Registers every parameter on a fresh graph, in declaration order.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound(self.entries.iter().map(|(_, t)| g.param(t)).collect())
    }

    /// Gradients for all parameters after a backward pass, aligned by index.
    pub fn collect_grads(&self, g: &Graph, bound: &Bound) -> Vec<Tensor> {
        bound.0.iter().map(|&v| g.grad_tensor(v)).collect()
    }
}

/// Graph handles for a bound [`ParamSet`], indexed by [`ParamId`].
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn from_vars(vars: Vec<Var>) -> Bound {
        Bound(vars)
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }
}

#[derive(Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl ParamSet {
    /// One JSON record per line: `{"name", "shape", "values"}`. f64 values
    /// are printed in shortest round-trip form, so save/load is bit-exact.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), CoreError> {
        for (name, tensor) in &self.entries {
            tensor.check_finite(&format!("checkpoint parameter {name}"))?;
            let rec = ParamRecord {
                name: name.clone(),
                shape: tensor.shape().to_vec(),
                values: tensor.data().to_vec(),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self, CoreError> {
        let mut set = ParamSet::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ParamRecord =
                serde_json::from_str(&line).map_err(|e| CoreError::MalformedRecord {
                    index: i,
                    msg: e.to_string(),
                })?;
            let tensor =
                Tensor::new(rec.shape, rec.values).map_err(|e| CoreError::BadParameter {
                    name: rec.name.clone(),
                    msg: e.to_string(),
                })?;
            set.add(rec.name, tensor);
        }
        Ok(set)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), CoreError> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CoreError> {
        let file = std::fs::File::open(path)?;
        ParamSet::read_from(std::io::BufReader::new(file))
    }
}
