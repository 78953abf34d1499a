use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::rng::rng_for;

/// Dense layer `y = x·w + b` with `w: [in, out]` and `b: [1, out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub w: Tensor,
    pub b: Tensor,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.w.cols()
    }
}

/// A ReLU MLP body followed by a linear head of `num_groups · c_max` outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub body: Vec<Layer>,
    pub head: Layer,
    pub num_groups: usize,
    pub c_max: usize,
}

/// Shape of a model, as given in a config.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    /// Input width followed by each hidden width.
    pub layer_dims: Vec<usize>,
    pub num_groups: usize,
    pub c_max: usize,
}

impl ModelShape {
    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.is_empty() || self.layer_dims.contains(&0) {
            return Err(Error::domain(format!("layer dims must be positive, got {:?}", self.layer_dims)));
        }
        if self.num_groups == 0 || self.c_max < 2 {
            return Err(Error::domain("need num_groups >= 1 and c_max >= 2"));
        }
        Ok(())
    }

    pub fn head_width(&self) -> usize {
        self.num_groups * self.c_max
    }
}

pub fn init_model(layer_dims: &[usize], num_groups: usize, c_max: usize, seed: u64) -> Result<ModelParams> {
    let shape = ModelShape {
        layer_dims: layer_dims.to_vec(),
        num_groups,
        c_max,
    };
    shape.validate()?;
    let mut rng = rng_for(seed, 0);
    let mut uniform = |fan_in: usize, fan_out: usize, gain: f64| -> Layer {
        let bound = gain * (3.0 / fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..=bound)).collect();
        Layer {
            w: Tensor::from_parts(vec![fan_in, fan_out], data),
            b: Tensor::zeros(&[1, fan_out]),
        }
    };
    let body = layer_dims
        .windows(2)
        .map(|d| uniform(d[0], d[1], std::f64::consts::SQRT_2))
        .collect();
    let head = uniform(*layer_dims.last().unwrap(), shape.head_width(), 1.0);
    Ok(ModelParams {
        body,
        head,
        num_groups,
        c_max,
    })
}

impl ModelParams {
    pub fn shape(&self) -> ModelShape {
        let mut layer_dims = vec![self.input_dim()];
        layer_dims.extend(self.body.iter().map(Layer::out_dim));
        ModelShape {
            layer_dims,
            num_groups: self.num_groups,
            c_max: self.c_max,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.body.first().unwrap_or(&self.head).in_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.head.in_dim()
    }

    pub fn head_width(&self) -> usize {
        self.head.out_dim()
    }

    /// Body layers plus the head.
    pub fn num_layers(&self) -> usize {
        self.body.len() + 1
    }

    pub fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.body.iter().chain(std::iter::once(&self.head))
    }

    /// Weights and biases in layer order, head last.
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers().flat_map(|l| [&l.w, &l.b]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.body
            .iter_mut()
            .chain(std::iter::once(&mut self.head))
            .flat_map(|l| [&mut l.w, &mut l.b])
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Replaces all tensors from a flat list in [`tensors`](Self::tensors) order.
    pub fn set_tensors(&mut self, values: Vec<Tensor>) -> Result<()> {
        let slots = self.tensors_mut();
        if values.len() != slots.len() {
            return Err(Error::invalid(format!("expected {} tensors, got {}", slots.len(), values.len())));
        }
        for (slot, v) in slots.into_iter().zip(values) {
            if slot.shape() != v.shape() {
                return Err(Error::Shape {
                    op: "set_tensors",
                    lhs: slot.shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
            *slot = v;
        }
        Ok(())
    }

    /// `self += scale · delta`, tensor by tensor.
    pub fn axpy(&mut self, scale: f64, delta: &[Tensor]) -> Result<()> {
        let slots = self.tensors_mut();
        if delta.len() != slots.len() {
            return Err(Error::invalid("delta length does not match the model"));
        }
        for (slot, d) in slots.into_iter().zip(delta) {
            if slot.shape() != d.shape() {
                return Err(Error::Shape {
                    op: "axpy",
                    lhs: slot.shape().to_vec(),
                    rhs: d.shape().to_vec(),
                });
            }
            for (p, g) in slot.data_mut().iter_mut().zip(d.data()) {
                *p += scale * g;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Places every tensor on `g`.
    pub fn to_graph(&self, g: &mut Graph, trainable: bool) -> ModelNodes {
        let ids: Vec<NodeId> = self
            .tensors()
            .into_iter()
            .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect();
        ModelNodes::from_flat(&ids)
    }

    /// Activations of every layer on `x`: each ReLU body output, then the full
    /// head logits.
    pub fn layer_outputs(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut g = Graph::new();
        let nodes = self.to_graph(&mut g, false);
        let mut h = g.constant(x.clone());
        let mut out = Vec::with_capacity(self.num_layers());
        for &(w, b) in &nodes.body {
            h = dense(&mut g, h, w, b, true)?;
            out.push(g.value(h).clone());
        }
        let logits = dense(&mut g, h, nodes.head.0, nodes.head.1, false)?;
        out.push(g.value(logits).clone());
        Ok(out)
    }

    pub fn layer_output(&self, x: &Tensor, layer: usize) -> Result<Tensor> {
        if layer >= self.num_layers() {
            return Err(Error::invalid(format!("layer {layer} out of range ({})", self.num_layers())));
        }
        Ok(self.layer_outputs(x)?.swap_remove(layer))
    }

    /// Body output (the head input).
    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        if self.body.is_empty() {
            return Ok(x.clone());
        }
        self.layer_output(x, self.body.len() - 1)
    }
}

/// Graph handles for a model's parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelNodes {
    pub body: Vec<(NodeId, NodeId)>,
    pub head: (NodeId, NodeId),
}

impl ModelNodes {
    /// Rebuilds the layout from ids in [`ModelParams::tensors`] order.
    pub fn from_flat(ids: &[NodeId]) -> Self {
        assert!(ids.len() >= 2 && ids.len() % 2 == 0, "need (w, b) pairs");
        let pairs: Vec<(NodeId, NodeId)> = ids.chunks(2).map(|c| (c[0], c[1])).collect();
        let (head, body) = pairs.split_last().unwrap();
        Self {
            body: body.to_vec(),
            head: *head,
        }
    }

    pub fn flat(&self) -> Vec<NodeId> {
        self.body
            .iter()
            .chain(std::iter::once(&self.head))
            .flat_map(|&(w, b)| [w, b])
            .collect()
    }
}

pub(crate) fn dense(g: &mut Graph, x: NodeId, w: NodeId, b: NodeId, relu: bool) -> Result<NodeId> {
    let z = g.matmul(x, w)?;
    let z = g.add_row(z, b)?;
    Ok(if relu { g.relu(z) } else { z })
}

pub(crate) fn body_forward(g: &mut Graph, body: &[(NodeId, NodeId)], x: NodeId) -> Result<NodeId> {
    body.iter().try_fold(x, |h, &(w, b)| dense(g, h, w, b, true))
}
