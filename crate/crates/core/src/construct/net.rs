//! Layered ReLU networks with sparse affine maps.
//!
//! A network is a list of affine maps with a rectifier between consecutive
//! maps and none after the last. Matrices store only their structural
//! entries, and the parameter count is the number of stored matrix entries
//! plus offset entries. Composition and side-by-side combinators keep the
//! structure sparse so large constructions stay linear in size.

use crate::error::{LabError, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// `(row, col, value)` triples sorted by row then column.
    pub entries: Vec<(usize, usize, f64)>,
    pub offset: Vec<f64>,
}

impl Layer {
    pub fn new(
        inputs: usize,
        outputs: usize,
        entries: Vec<(usize, usize, f64)>,
        offset: Vec<f64>,
    ) -> Result<Self> {
        if offset.len() != outputs {
            return Err(LabError::Dimension(format!(
                "offset has {} entries for {outputs} outputs",
                offset.len()
            )));
        }
        let mut map = BTreeMap::new();
        for (r, c, v) in entries {
            if r >= outputs || c >= inputs {
                return Err(LabError::Dimension(format!(
                    "entry ({r}, {c}) outside a {outputs} x {inputs} matrix"
                )));
            }
            *map.entry((r, c)).or_insert(0.0) += v;
        }
        Ok(Layer {
            inputs,
            outputs,
            entries: map.into_iter().map(|((r, c), v)| (r, c, v)).collect(),
            offset,
        })
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.offset.clone();
        for &(r, c, v) in &self.entries {
            out[r] += v * x[c];
        }
        out
    }

    /// `self ∘ inner` for two affine maps.
    fn after(&self, inner: &Layer) -> Layer {
        let mut by_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); inner.outputs];
        for &(r, c, v) in &inner.entries {
            by_row[r].push((c, v));
        }
        let mut map = BTreeMap::new();
        let mut offset = self.offset.clone();
        for &(r, k, v) in &self.entries {
            for &(c, u) in &by_row[k] {
                *map.entry((r, c)).or_insert(0.0) += v * u;
            }
            offset[r] += v * inner.offset[k];
        }
        Layer {
            inputs: inner.inputs,
            outputs: self.outputs,
            entries: map.into_iter().map(|((r, c), v)| (r, c, v)).collect(),
            offset,
        }
    }

    fn param_count(&self) -> usize {
        self.entries.len() + self.offset.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReluNet {
    pub input_dim: usize,
    pub layers: Vec<Layer>,
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

impl ReluNet {
    pub fn new(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        let net = ReluNet { input_dim, layers };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(LabError::Dimension(
                "a network needs at least one layer".into(),
            ));
        }
        let mut width = self.input_dim;
        for (k, l) in self.layers.iter().enumerate() {
            if l.inputs != width {
                return Err(LabError::Dimension(format!(
                    "layer {k} expects {} inputs but receives {width}",
                    l.inputs
                )));
            }
            if l.offset.len() != l.outputs
                || l.entries
                    .iter()
                    .any(|&(r, c, _)| r >= l.outputs || c >= l.inputs)
            {
                return Err(LabError::Dimension(format!("layer {k} is malformed")));
            }
            width = l.outputs;
        }
        Ok(())
    }

    /// Single affine map.
    pub fn affine(
        inputs: usize,
        outputs: usize,
        entries: Vec<(usize, usize, f64)>,
        offset: Vec<f64>,
    ) -> Result<Self> {
        Ok(ReluNet {
            input_dim: inputs,
            layers: vec![Layer::new(inputs, outputs, entries, offset)?],
        })
    }

    pub fn identity(dim: usize) -> Self {
        ReluNet {
            input_dim: dim,
            layers: vec![Layer {
                inputs: dim,
                outputs: dim,
                entries: (0..dim).map(|k| (k, k, 1.0)).collect(),
                offset: vec![0.0; dim],
            }],
        }
    }

    /// Picks coordinates `indices` of a `dim`-dimensional input.
    pub fn select(dim: usize, indices: &[usize]) -> Result<Self> {
        let entries = indices
            .iter()
            .enumerate()
            .map(|(r, &c)| (r, c, 1.0))
            .collect();
        Self::affine(dim, indices.len(), entries, vec![0.0; indices.len()])
    }

    /// One rectifier stage that reproduces its input: `z = relu(z) - relu(-z)`.
    pub fn passthrough(dim: usize) -> Self {
        let up = Layer {
            inputs: dim,
            outputs: 2 * dim,
            entries: (0..dim)
                .flat_map(|k| [(2 * k, k, 1.0), (2 * k + 1, k, -1.0)])
                .collect(),
            offset: vec![0.0; 2 * dim],
        };
        let down = Layer {
            inputs: 2 * dim,
            outputs: dim,
            entries: (0..dim)
                .flat_map(|k| [(k, 2 * k, 1.0), (k, 2 * k + 1, -1.0)])
                .collect(),
            offset: vec![0.0; dim],
        };
        ReluNet {
            input_dim: dim,
            layers: vec![up, down],
        }
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    /// Number of affine maps.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn forward_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(LabError::Dimension(format!(
                "input has {} entries, network expects {}",
                x.len(),
                self.input_dim
            )));
        }
        Ok(self.forward_unchecked(x))
    }

    fn forward_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            h = l.apply(&h);
            if k < last {
                h.iter_mut().for_each(|v| *v = relu(*v));
            }
        }
        h
    }

    /// Scalar output of a single-output network.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        if self.output_dim() != 1 {
            return Err(LabError::Dimension(format!(
                "network has {} outputs, expected 1",
                self.output_dim()
            )));
        }
        Ok(self.forward_vec(x)?[0])
    }

    /// Gradient of the single output with respect to the input, using the
    /// convention `relu'(0) = 0`.
    pub fn input_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward(x)?;
        let last = self.layers.len() - 1;
        let mut active: Vec<Vec<bool>> = Vec::with_capacity(last);
        let mut h = x.to_vec();
        for l in &self.layers[..last] {
            h = l.apply(&h);
            active.push(h.iter().map(|&v| v > 0.0).collect());
            h.iter_mut().for_each(|v| *v = relu(*v));
        }
        let mut g = vec![1.0];
        for (k, l) in self.layers.iter().enumerate().rev() {
            let mut prev = vec![0.0; l.inputs];
            for &(r, c, v) in &l.entries {
                prev[c] += v * g[r];
            }
            if k > 0 {
                for (p, &on) in prev.iter_mut().zip(&active[k - 1]) {
                    if !on {
                        *p = 0.0;
                    }
                }
            }
            g = prev;
        }
        Ok(g)
    }

    /// `next ∘ self`, merging the adjacent affine maps.
    pub fn then(mut self, next: &ReluNet) -> Result<Self> {
        if self.output_dim() != next.input_dim {
            return Err(LabError::Dimension(format!(
                "cannot feed {} outputs into a network with {} inputs",
                self.output_dim(),
                next.input_dim
            )));
        }
        let inner = self.layers.pop().expect("validated networks are non-empty");
        self.layers.push(next.layers[0].after(&inner));
        self.layers.extend(next.layers[1..].iter().cloned());
        Ok(self)
    }

    /// Appends `stages` identity rectifier stages to the output.
    pub fn deepen(self, stages: usize) -> Self {
        let dim = self.output_dim();
        let pass = Self::passthrough(dim);
        (0..stages).fold(self, |net, _| {
            net.then(&pass).expect("passthrough matches width")
        })
    }

    fn block_diagonal(parts: &[&Layer], shared_input: bool) -> Layer {
        let inputs = if shared_input {
            parts[0].inputs
        } else {
            parts.iter().map(|l| l.inputs).sum()
        };
        let mut entries = Vec::new();
        let mut offset = Vec::new();
        let (mut row0, mut col0) = (0, 0);
        for l in parts {
            entries.extend(l.entries.iter().map(|&(r, c, v)| (row0 + r, col0 + c, v)));
            offset.extend_from_slice(&l.offset);
            row0 += l.outputs;
            if !shared_input {
                col0 += l.inputs;
            }
        }
        Layer {
            inputs,
            outputs: row0,
            entries,
            offset,
        }
    }

    fn combine(nets: &[ReluNet], shared_input: bool) -> Result<Self> {
        if nets.is_empty() {
            return Err(LabError::Argument("nothing to combine".into()));
        }
        if shared_input && nets.iter().any(|n| n.input_dim != nets[0].input_dim) {
            return Err(LabError::Dimension(
                "parallel networks must share the input".into(),
            ));
        }
        let depth = nets.iter().map(ReluNet::depth).max().unwrap_or(1);
        let padded: Vec<ReluNet> = nets
            .iter()
            .map(|n| {
                let missing = depth - n.depth();
                n.clone().deepen(missing)
            })
            .collect();
        let layers = (0..depth)
            .map(|k| {
                let parts: Vec<&Layer> = padded.iter().map(|n| &n.layers[k]).collect();
                Self::block_diagonal(&parts, shared_input && k == 0)
            })
            .collect();
        let input_dim = if shared_input {
            nets[0].input_dim
        } else {
            nets.iter().map(|n| n.input_dim).sum()
        };
        Ok(ReluNet { input_dim, layers })
    }

    /// Networks evaluated on the same input with outputs concatenated.
    /// Shallower networks are padded with identity stages.
    pub fn parallel(nets: &[ReluNet]) -> Result<Self> {
        Self::combine(nets, true)
    }

    /// Networks evaluated on consecutive slices of the input, outputs
    /// concatenated.
    pub fn stack(nets: &[ReluNet]) -> Result<Self> {
        Self::combine(nets, false)
    }
}
