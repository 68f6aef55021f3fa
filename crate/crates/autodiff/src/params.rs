use crate::error::{AutodiffError, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named, ordered collection of trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(ParamId)
            .ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Inserts every parameter into `graph` as a differentiable leaf.
    pub fn bind(&self, graph: &mut Graph) -> Result<BoundParams> {
        let vars = self
            .tensors
            .iter()
            .map(|t| graph.param(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundParams { vars })
    }
}

/// Graph handles for a [`ParamSet`] bound to one graph.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    /// Wraps handles already in the graph, in parameter order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Gradients in parameter order; parameters the loss did not touch get
    /// zeros.
    pub fn grads(&self, graph: &Graph) -> Vec<Tensor> {
        self.vars
            .iter()
            .map(|&v| graph.grad(v).unwrap_or_else(|| Tensor::zeros(graph.shape(v))))
            .collect()
    }
}
