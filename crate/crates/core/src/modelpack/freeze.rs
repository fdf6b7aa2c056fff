//! Checkpoint → inference graph: drop optimizer state, remove dropout, fold
//! batch norm into the producing dense/conv layer.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::nn::{LayerKind, LayerSpec, Mode, NetworkGraph, Tap};
use crate::train::{hex16, Checkpoint};

/// Inference-mode graph with its parameters embedded.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenGraph {
    pub graph: NetworkGraph,
    /// Hash of the checkpoint (or graph) it was frozen from.
    pub provenance: String,
}

impl FrozenGraph {
    pub fn manifest(&self) -> String {
        self.graph.manifest()
    }
}

/// Content hash over manifest text and every tensor, in name order.
pub fn graph_hash(graph: &NetworkGraph) -> String {
    let mut h = Sha256::new();
    h.update(graph.manifest().as_bytes());
    for (name, t) in graph.params().iter().chain(graph.buffers()) {
        h.update(name.as_bytes());
        h.update(t.to_le_bytes());
    }
    hex16(&h.finalize())
}

pub fn freeze(checkpoint: &Checkpoint) -> FrozenGraph {
    let mut graph = checkpoint.graph.clone();
    graph.set_mode(Mode::Inference);
    let mut h = Sha256::new();
    h.update(graph_hash(&checkpoint.graph).as_bytes());
    h.update(checkpoint.config_hash.as_bytes());
    h.update(checkpoint.epoch.to_le_bytes());
    FrozenGraph { graph, provenance: hex16(&h.finalize()) }
}

/// Freezes a checkpoint file; integrity failures name the failing tensor.
pub fn freeze_file(path: &Path) -> Result<FrozenGraph> {
    Ok(freeze(&Checkpoint::load(path)?))
}

/// Removes dropout and folds batch norm where the normalized value is the
/// direct, otherwise-unreferenced output of a dense or conv layer.
pub fn prune_for_inference(frozen: &FrozenGraph) -> Result<FrozenGraph> {
    let g = &frozen.graph;
    let (input_shape, layers, mut params, mut buffers) = g.clone().into_parts();
    let tapped: Vec<usize> = layers
        .iter()
        .filter_map(|l| match l.tap() {
            Some(Tap::Layer(j)) => Some(j),
            _ => None,
        })
        .collect();

    // remap[i]: where layer i's output lives after pruning.
    let mut remap: Vec<Tap> = Vec::with_capacity(layers.len());
    let mut kept: Vec<LayerSpec> = Vec::with_capacity(layers.len());
    for (i, layer) in layers.iter().enumerate() {
        let prev = if i == 0 { Tap::Input } else { remap[i - 1] };
        let drop_it = match &layer.kind {
            LayerKind::Dropout { .. } => true,
            LayerKind::BatchNorm { epsilon, .. } if i > 0 && !tapped.contains(&(i - 1)) => {
                let producer = &layers[i - 1];
                let foldable = matches!(producer.kind, LayerKind::Dense { .. } | LayerKind::Conv2d { .. })
                    && matches!(prev, Tap::Layer(_));
                if foldable {
                    fold_batch_norm(producer, layer, *epsilon, &mut params, &mut buffers);
                }
                foldable
            }
            _ => false,
        };
        if drop_it {
            remap.push(prev);
        } else {
            let mut l = layer.clone();
            if let Some(t) = l.tap() {
                l.set_tap(match t {
                    Tap::Input => Tap::Input,
                    Tap::Layer(j) => remap[j],
                });
            }
            kept.push(l);
            remap.push(Tap::Layer(kept.len() - 1));
        }
    }
    let graph = NetworkGraph::new(input_shape, kept, params, buffers, Mode::Inference)?;
    Ok(FrozenGraph { graph, provenance: frozen.provenance.clone() })
}

fn fold_batch_norm(
    producer: &LayerSpec,
    bn: &LayerSpec,
    eps: f32,
    params: &mut BTreeMap<String, crate::tensor::Tensor>,
    buffers: &mut BTreeMap<String, crate::tensor::Tensor>,
) {
    let gamma = params.remove(&bn.weight_name()).expect("bn weight");
    let beta = params.remove(&bn.bias_name()).expect("bn bias");
    let mean = buffers.remove(&bn.running_mean_name()).expect("bn mean");
    let var = buffers.remove(&bn.running_var_name()).expect("bn var");
    let scale: Vec<f64> =
        gamma.data().iter().zip(var.data()).map(|(&g, &v)| g as f64 / (v as f64 + eps as f64).sqrt()).collect();
    let out = scale.len();
    let w = params.get_mut(&producer.weight_name()).expect("producer weight");
    // Output channels are the last axis of both dense and conv weights.
    for (i, v) in w.data_mut().iter_mut().enumerate() {
        *v = (*v as f64 * scale[i % out]) as f32;
    }
    let b = params.get_mut(&producer.bias_name()).expect("producer bias");
    for (f, v) in b.data_mut().iter_mut().enumerate() {
        *v = ((*v as f64 - mean.data()[f] as f64) * scale[f] + beta.data()[f] as f64) as f32;
    }
}
