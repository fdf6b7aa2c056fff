use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::Serialize;

use super::handle::{load_bundle, CachePolicy, ModelHandle};
use super::residency::private_resident_bytes;
use crate::error::{Error, Result};
use crate::modelpack::read_bundle;
use crate::nn::{execute, parse_manifest, LayerSpec, Mode};
use crate::tensor::Tensor;

static BENCH_LOCK: Mutex<()> = Mutex::new(());

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LatencyStats {
    pub n_runs: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    /// Private resident growth while the handle was loaded.
    pub load_resident_delta_bytes: Option<i64>,
    /// Load time plus the first (unwarmed) inference.
    pub cold_start_ms: f64,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Nearest-rank percentile of sorted samples.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Times `n_runs` warm forward passes after one cold pass. Bench calls are
/// serialized process-wide so they do not disturb each other.
pub fn bench(handle: &ModelHandle, input: &Tensor, n_runs: usize) -> Result<LatencyStats> {
    if n_runs < 10 {
        return Err(Error::Input(format!("bench needs at least 10 runs, got {n_runs}")));
    }
    let _guard = BENCH_LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let t0 = Instant::now();
    handle.forward(input)?;
    let first = t0.elapsed();
    let mut samples = Vec::with_capacity(n_runs);
    for _ in 0..n_runs {
        let t = Instant::now();
        std::hint::black_box(handle.forward(input)?);
        samples.push(ms(t.elapsed()));
    }
    let mean = samples.iter().sum::<f64>() / n_runs as f64;
    samples.sort_by(f64::total_cmp);
    let load = handle.load_stats();
    Ok(LatencyStats {
        n_runs,
        mean_ms: mean,
        p50_ms: percentile(&samples, 0.5),
        p95_ms: percentile(&samples, 0.95),
        load_resident_delta_bytes: load.resident_delta,
        cold_start_ms: ms(load.elapsed + first),
    })
}

/// Whole-file loader used as the comparison baseline: reads, verifies and
/// decodes every tensor into owned f32 buffers.
pub struct EagerModel {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    tensors: BTreeMap<String, Tensor>,
}

pub fn load_eager(path: &Path) -> Result<EagerModel> {
    let bundle = read_bundle(path)?;
    let (input_shape, layers, _) = parse_manifest(&bundle.manifest)?;
    let tensors = bundle
        .tensors
        .into_iter()
        .map(|t| Ok((t.name.clone(), t.into_f32()?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok(EagerModel { input_shape, layers, tensors })
}

impl EagerModel {
    pub fn forward(&self, inputs: &Tensor) -> Result<Tensor> {
        Ok(execute(&self.input_shape, &self.layers, &self.tensors, inputs, Mode::Inference, 0)?.into_output())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ColdStart {
    pub mapped_ms: f64,
    pub eager_ms: f64,
    pub mapped_resident_delta_bytes: Option<i64>,
    pub eager_resident_delta_bytes: Option<i64>,
    /// `1 - mapped/eager`: the fraction of eager cold-start time saved by mapping.
    pub speedup: f64,
}

fn delta(before: Option<u64>) -> Option<i64> {
    Some(private_resident_bytes()? as i64 - before? as i64)
}

/// Load-plus-first-inference time for the mapped and eager loaders; each
/// side takes the best of `repeats` attempts.
pub fn compare_cold_start(path: &Path, input: &Tensor, repeats: usize) -> Result<ColdStart> {
    let _guard = BENCH_LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let mut mapped = f64::INFINITY;
    let mut eager = f64::INFINITY;
    let (mut mapped_delta, mut eager_delta) = (None, None);
    for _ in 0..repeats.max(1) {
        let before = private_resident_bytes();
        let t = Instant::now();
        let h = load_bundle(path, CachePolicy::None)?;
        mapped_delta = delta(before);
        std::hint::black_box(h.forward(input)?);
        mapped = mapped.min(ms(t.elapsed()));
        drop(h);

        let before = private_resident_bytes();
        let t = Instant::now();
        let e = load_eager(path)?;
        eager_delta = delta(before);
        std::hint::black_box(e.forward(input)?);
        eager = eager.min(ms(t.elapsed()));
        drop(e);
    }
    Ok(ColdStart {
        mapped_ms: mapped,
        eager_ms: eager,
        mapped_resident_delta_bytes: mapped_delta,
        eager_resident_delta_bytes: eager_delta,
        speedup: 1.0 - mapped / eager,
    })
}

#[cfg(test)]
mod tests {
    use super::percentile;

    #[test]
    fn nearest_rank() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.5), 5.0);
        assert_eq!(percentile(&v, 0.95), 10.0);
        assert_eq!(percentile(&[3.0], 0.5), 3.0);
    }
}
