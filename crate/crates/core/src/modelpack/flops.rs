use crate::nn::{layer_shapes, LayerKind, LayerSpec, NetworkGraph};

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct LayerFlops {
    pub name: String,
    pub kind: &'static str,
    pub flops: u64,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct FlopsReport {
    pub layers: Vec<LayerFlops>,
    pub total: u64,
}

pub fn estimate_flops(graph: &NetworkGraph) -> FlopsReport {
    estimate_layer_flops(graph.input_shape(), graph.layers())
}

/// Per-sample inference FLOPs. Dense `(2·in+1)·out`; conv `2·k²·cin·cout·Ho·Wo`;
/// relu, softmax and residual add one per element; batch norm two per
/// element; max pool `k²−1` comparisons per output; dropout and concat free.
pub fn estimate_layer_flops(input_shape: &[usize], layers: &[LayerSpec]) -> FlopsReport {
    if layers.is_empty() {
        return FlopsReport { layers: Vec::new(), total: 0 };
    }
    let shapes = layer_shapes(input_shape, layers).unwrap_or_default();
    let per: Vec<LayerFlops> = layers
        .iter()
        .zip(&shapes)
        .map(|(l, out)| {
            let elems: u64 = out.iter().product::<usize>() as u64;
            let flops = match l.kind {
                LayerKind::Dense { inputs, outputs } => (2 * inputs as u64 + 1) * outputs as u64,
                LayerKind::Conv2d { in_channels, out_channels, kernel, .. } => {
                    2 * (kernel * kernel * in_channels * out_channels) as u64 * (out[0] * out[1]) as u64
                }
                LayerKind::MaxPool { kernel, .. } => (kernel * kernel - 1) as u64 * elems,
                LayerKind::BatchNorm { .. } => 2 * elems,
                LayerKind::Relu | LayerKind::Softmax | LayerKind::ResidualAdd { .. } => elems,
                LayerKind::Dropout { .. } | LayerKind::Concat { .. } => 0,
            };
            LayerFlops { name: l.name.clone(), kind: l.tag(), flops }
        })
        .collect();
    let total = per.iter().map(|l| l.flops).sum();
    FlopsReport { layers: per, total }
}

/// How many times over the device's per-second budget one inference is.
pub fn budget_check(report: &FlopsReport, device_flops: f64) -> f64 {
    report.total as f64 / device_flops
}
