//! Freeze, prune, quantize and pack trained graphs into a single
//! memory-mappable bundle, plus FLOP accounting.

mod bundle;
mod flops;
mod freeze;
mod quant;

use std::path::Path;

pub use bundle::{
    decode_bundle, encode_bundle, parse_layout, read_bundle, verify_bundle, verify_bytes, write_bundle,
    BundleLayout, DType, LoadedBundle, Payload, StoredTensor, TensorEntry, Violation, FLAG_QUANTIZED,
    FLAG_TRAINING, MAGIC, PAGE, TENSOR_ALIGN, VERSION,
};
pub use flops::{budget_check, estimate_flops, estimate_layer_flops, FlopsReport, LayerFlops};
pub use freeze::{freeze, freeze_file, graph_hash, prune_for_inference, FrozenGraph};
pub use quant::{affine_params, dequantize_tensor, dequantize_value, quantize_tensor, quantize_value, QuantizedTensor};
pub(crate) use quant::{dequantize_bytes, quantize_slice};

use crate::error::{Error, Result};
use crate::nn::{parse_manifest, Mode, NetworkGraph};

/// Tensors of a frozen graph in bundle order, optionally quantized.
pub fn bundle_tensors(frozen: &FrozenGraph, quantize: bool) -> Result<Vec<StoredTensor>> {
    let g = &frozen.graph;
    g.params()
        .iter()
        .chain(g.buffers())
        .map(|(name, t)| {
            if quantize {
                Ok(StoredTensor::q8(name.clone(), quantize_slice(t.shape().to_vec(), t.data())?))
            } else {
                Ok(StoredTensor::f32(name.clone(), t.shape().to_vec(), t.data().to_vec()))
            }
        })
        .collect()
}

/// Bytes of the bundle for `frozen`.
pub fn encode_frozen(frozen: &FrozenGraph, quantize: bool) -> Result<Vec<u8>> {
    let flags = if quantize { FLAG_QUANTIZED } else { 0 };
    encode_bundle(&frozen.manifest(), flags, &bundle_tensors(frozen, quantize)?)
}

/// Writes `frozen` to `out_path` and returns the verified layout.
pub fn pack_bundle(frozen: &FrozenGraph, quantize: bool, out_path: &Path) -> Result<BundleLayout> {
    let bytes = encode_frozen(frozen, quantize)?;
    let layout = verify_bytes(&bytes).map_err(Error::Integrity)?;
    std::fs::write(out_path, &bytes).map_err(|e| Error::io(out_path, e))?;
    Ok(layout)
}

/// Rebuilds an inference graph from a bundle (checkpoint or frozen),
/// dequantizing 8-bit tensors.
pub fn graph_from_bundle(bundle: LoadedBundle) -> Result<FrozenGraph> {
    let (input_shape, layers, _) = parse_manifest(&bundle.manifest)?;
    let param_names: std::collections::HashSet<String> =
        layers.iter().flat_map(|l| l.param_shapes()).map(|(n, _)| n).collect();
    let buffer_names: std::collections::HashSet<String> =
        layers.iter().flat_map(|l| l.buffer_shapes()).map(|(n, _)| n).collect();
    let mut params = std::collections::BTreeMap::new();
    let mut buffers = std::collections::BTreeMap::new();
    for t in bundle.tensors {
        let name = t.name.clone();
        if param_names.contains(&name) {
            params.insert(name, t.into_f32()?);
        } else if buffer_names.contains(&name) {
            buffers.insert(name, t.into_f32()?);
        }
    }
    let graph = NetworkGraph::new(input_shape, layers, params, buffers, Mode::Inference)?;
    let provenance = graph_hash(&graph);
    Ok(FrozenGraph { graph, provenance })
}

/// Loads any bundle file as an inference graph. Checkpoints are frozen on the way.
pub fn load_frozen(path: &Path) -> Result<FrozenGraph> {
    let bundle = read_bundle(path)?;
    if bundle.flags & FLAG_TRAINING != 0 {
        return freeze_file(path);
    }
    graph_from_bundle(bundle)
}

/// Hash of a manifest, used as the model fingerprint.
pub fn manifest_fingerprint(manifest: &str) -> String {
    use sha2::{Digest, Sha256};
    crate::train::hex16(&Sha256::digest(manifest.as_bytes()))
}
