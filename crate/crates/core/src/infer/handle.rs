use std::borrow::Cow;
use std::collections::HashMap;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use memmap2::{Mmap, MmapOptions};

use super::residency::private_resident_bytes;
use crate::error::{Error, Result};
use crate::modelpack::{dequantize_bytes, manifest_fingerprint, verify_bytes, BundleLayout, DType};
use crate::nn::{execute, layer_shapes, parse_manifest, ActivationTrace, LayerKind, LayerSpec, Mode, WeightSource};
use crate::tensor::Tensor;

/// How dequantized 8-bit tensors are kept between forward passes. f32
/// tensors are always read in place from the mapping.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CachePolicy {
    /// Decode on every use; nothing is retained.
    #[default]
    None,
    /// Decode once per tensor on first use and keep the result.
    PerLayer,
}

impl std::str::FromStr for CachePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(CachePolicy::None),
            "per-layer" | "per_layer" => Ok(CachePolicy::PerLayer),
            other => Err(Error::Input(format!("unknown cache policy {other:?} (none, per-layer)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoadStats {
    pub elapsed: Duration,
    /// Change in private (anonymous) resident memory across the load, if measurable.
    pub resident_delta: Option<i64>,
}

/// A verified, memory-mapped bundle ready for inference. Immutable and
/// shareable across threads.
pub struct ModelHandle {
    path: PathBuf,
    map: Mmap,
    layout: BundleLayout,
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    output_dim: usize,
    entries: HashMap<String, usize>,
    cache: Vec<OnceLock<Vec<f32>>>,
    policy: CachePolicy,
    fingerprint: String,
    load: LoadStats,
}

impl std::fmt::Debug for ModelHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelHandle")
            .field("path", &self.path)
            .field("fingerprint", &self.fingerprint)
            .field("policy", &self.policy)
            .finish()
    }
}

/// Maps, verifies, and checks a bundle against its own manifest.
pub fn load_bundle(path: &Path, policy: CachePolicy) -> Result<ModelHandle> {
    let before = private_resident_bytes();
    let start = Instant::now();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    // SAFETY: the mapping is read-only; bundles are treated as immutable
    // while loaded and every byte is re-verified by CRC here.
    let map = unsafe { MmapOptions::new().populate().map(&file) }.map_err(|e| Error::io(path, e))?;
    let layout = verify_bytes(&map).map_err(Error::Integrity)?;
    let (input_shape, layers, _) = parse_manifest(&layout.manifest)?;
    let entries: HashMap<String, usize> = layout.tensors.iter().enumerate().map(|(i, t)| (t.name.clone(), i)).collect();
    let output_dim = check_tensors(&input_shape, &layers, &layout, &entries)?;
    let cache = (0..layout.tensors.len()).map(|_| OnceLock::new()).collect();
    let fingerprint = manifest_fingerprint(&layout.manifest);
    let elapsed = start.elapsed();
    let resident_delta = match (before, private_resident_bytes()) {
        (Some(a), Some(b)) => Some(b as i64 - a as i64),
        _ => None,
    };
    Ok(ModelHandle {
        path: path.to_path_buf(),
        map,
        layout,
        input_shape,
        layers,
        output_dim,
        entries,
        cache,
        policy,
        fingerprint,
        load: LoadStats { elapsed, resident_delta },
    })
}

fn check_tensors(
    input_shape: &[usize],
    layers: &[LayerSpec],
    layout: &BundleLayout,
    entries: &HashMap<String, usize>,
) -> Result<usize> {
    let shapes = layer_shapes(input_shape, layers)?;
    if !matches!(layers.last().map(|l| &l.kind), Some(LayerKind::Softmax)) {
        return Err(Error::Graph("bundle graph does not end in softmax".into()));
    }
    for l in layers {
        for (name, shape) in l.param_shapes().into_iter().chain(l.buffer_shapes()) {
            let i = entries.get(&name).ok_or_else(|| Error::Graph(format!("bundle lacks tensor {name}")))?;
            if layout.tensors[*i].shape != shape {
                return Err(Error::dim(
                    &l.name,
                    format!("{name} stored as {:?}, manifest needs {shape:?}", layout.tensors[*i].shape),
                ));
            }
        }
    }
    Ok(shapes.last().map_or(0, |s| s.iter().product()))
}

impl ModelHandle {
    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn layout(&self) -> &BundleLayout {
        &self.layout
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_dim(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Hash of the bundle's manifest text.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn policy(&self) -> CachePolicy {
        self.policy
    }

    pub fn is_quantized(&self) -> bool {
        self.layout.is_quantized()
    }

    pub fn load_stats(&self) -> LoadStats {
        self.load
    }

    /// Full activation trace for a batch shaped `[N, input..]`.
    pub fn trace(&self, inputs: &Tensor) -> Result<ActivationTrace> {
        execute(&self.input_shape, &self.layers, self, inputs, Mode::Inference, 0)
    }

    /// Class probabilities for a batch, one row per sample.
    pub fn forward(&self, inputs: &Tensor) -> Result<Tensor> {
        Ok(self.trace(inputs)?.into_output())
    }

    /// Probabilities for one flat sample.
    pub fn forward_one(&self, input: &[f32]) -> Result<Vec<f32>> {
        if input.len() != self.input_dim() {
            return Err(Error::Input(format!("model expects {} inputs, got {}", self.input_dim(), input.len())));
        }
        let mut shape = vec![1];
        shape.extend_from_slice(&self.input_shape);
        Ok(self.forward(&Tensor::new(shape, input.to_vec())?)?.into_data())
    }
}

impl WeightSource for ModelHandle {
    fn tensor(&self, name: &str) -> Result<Cow<'_, [f32]>> {
        let &i = self.entries.get(name).ok_or_else(|| Error::Graph(format!("bundle lacks tensor {name}")))?;
        let entry = &self.layout.tensors[i];
        let bytes = self.layout.payload(&self.map, entry);
        match entry.dtype {
            DType::F32 => {
                if cfg!(target_endian = "little") {
                    if let Ok(floats) = bytemuck::try_cast_slice::<u8, f32>(bytes) {
                        return Ok(Cow::Borrowed(floats));
                    }
                }
                Ok(Cow::Owned(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()))
            }
            DType::Q8 => match self.policy {
                CachePolicy::None => Ok(Cow::Owned(dequantize_bytes(bytes, entry.scale, entry.zero_point))),
                CachePolicy::PerLayer => Ok(Cow::Borrowed(
                    self.cache[i].get_or_init(|| dequantize_bytes(bytes, entry.scale, entry.zero_point)),
                )),
            },
        }
    }
}
