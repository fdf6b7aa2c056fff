use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infer::ModelHandle;
use crate::nn::LayerKind;
use crate::tensor::Tensor;

const CHUNK: usize = 256;

/// Penultimate-layer activations, one row per input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    pub rows: Vec<f32>,
    pub dim: usize,
    pub labels: Vec<usize>,
    pub fingerprint: String,
}

impl EmbeddingSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.rows.iter().map(|&v| v as f64).collect()
    }
}

/// Runs `inputs` through the model and keeps what feeds the final dense layer.
pub fn extract_embeddings(handle: &ModelHandle, inputs: &Tensor, labels: &[usize]) -> Result<EmbeddingSet> {
    let layers = handle.layers();
    let last_dense = layers
        .iter()
        .rposition(|l| matches!(l.kind, LayerKind::Dense { .. }))
        .ok_or_else(|| Error::Unsupported("model has no dense output layer".into()))?;
    if last_dense == 0 {
        return Err(Error::Unsupported("model has no hidden layer to embed from".into()));
    }
    let n = inputs.shape().first().copied().unwrap_or(0);
    if labels.len() != n {
        return Err(Error::Input(format!("{} labels for {n} inputs", labels.len())));
    }
    let per = handle.input_dim();
    if inputs.len() != n * per {
        return Err(Error::Input(format!("inputs must be {n}×{per} values")));
    }
    let mut rows = Vec::new();
    let mut dim = 0;
    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        let mut shape = vec![end - start];
        shape.extend_from_slice(handle.input_shape());
        let chunk = Tensor::from_parts(shape, inputs.data()[start * per..end * per].to_vec());
        let trace = handle.trace(&chunk)?;
        let hidden = &trace.outputs()[last_dense - 1];
        dim = hidden.len() / (end - start);
        rows.extend_from_slice(hidden.data());
    }
    Ok(EmbeddingSet { rows, dim, labels: labels.to_vec(), fingerprint: handle.fingerprint().to_string() })
}
