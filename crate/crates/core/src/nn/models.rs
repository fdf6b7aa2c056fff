//! Network constructors: the multilayer symptom classifier and the toy
//! residual image classifier.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{layer_shapes, Mode, NetworkGraph};
use super::layer::{LayerKind, LayerSpec, Tap, DEFAULT_BN_DECAY, DEFAULT_BN_EPSILON, DEFAULT_DROP_PROB};
use crate::error::Result;
use crate::tensor::Tensor;

/// Widths of a uniform-width multilayer perceptron.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DnnShape {
    pub input_dim: usize,
    pub hidden_width: usize,
    pub n_hidden: usize,
    pub output_dim: usize,
}

impl DnnShape {
    /// 237 symptoms, 16 hidden layers of 820, 1537 diagnoses: 11,555,337 parameters.
    pub const FULL: DnnShape = DnnShape { input_dim: 237, hidden_width: 820, n_hidden: 16, output_dim: 1537 };
    pub const DESK: DnnShape = DnnShape { input_dim: 50, hidden_width: 64, n_hidden: 4, output_dim: 100 };
}

/// Toy residual CNN layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CnnShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Feature maps inside the residual blocks.
    pub filters: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl CnnShape {
    pub const DESK: CnnShape = CnnShape { height: 32, width: 32, channels: 3, filters: 12, hidden: 48, classes: 26 };
}

/// Seeded He-uniform initializer.
pub(crate) struct Init(ChaCha8Rng);

impl Init {
    pub(crate) fn new(seed: u64) -> Self {
        Init(ChaCha8Rng::seed_from_u64(seed))
    }

    fn he(&mut self, shape: Vec<usize>, fan_in: usize) -> Tensor {
        let limit = (6.0 / fan_in as f64).sqrt() as f32;
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.0.random_range(-limit..limit)).collect();
        Tensor::from_parts(shape, data)
    }

    /// Fills every parameter and buffer a layer list declares.
    pub(crate) fn materialize(
        &mut self,
        layers: &[LayerSpec],
    ) -> (BTreeMap<String, Tensor>, BTreeMap<String, Tensor>) {
        let mut params = BTreeMap::new();
        let mut buffers = BTreeMap::new();
        for l in layers {
            match l.kind {
                LayerKind::Dense { inputs, outputs } => {
                    params.insert(l.weight_name(), self.he(vec![inputs, outputs], inputs));
                    params.insert(l.bias_name(), Tensor::zeros(vec![outputs]));
                }
                LayerKind::Conv2d { in_channels, out_channels, kernel, .. } => {
                    let fan_in = kernel * kernel * in_channels;
                    params.insert(l.weight_name(), self.he(vec![kernel, kernel, in_channels, out_channels], fan_in));
                    params.insert(l.bias_name(), Tensor::zeros(vec![out_channels]));
                }
                LayerKind::BatchNorm { features, .. } => {
                    params.insert(l.weight_name(), Tensor::filled(vec![features], 1.0));
                    params.insert(l.bias_name(), Tensor::zeros(vec![features]));
                    buffers.insert(l.running_mean_name(), Tensor::zeros(vec![features]));
                    buffers.insert(l.running_var_name(), Tensor::filled(vec![features], 1.0));
                }
                _ => {}
            }
        }
        (params, buffers)
    }
}

impl NetworkGraph {
    /// Training-mode graph over `layers` with freshly initialized parameters.
    pub fn initialized(input_shape: Vec<usize>, layers: Vec<LayerSpec>, seed: u64) -> Result<NetworkGraph> {
        let (params, buffers) = Init::new(seed).materialize(&layers);
        NetworkGraph::new(input_shape, layers, params, buffers, Mode::Training)
    }
}

/// Dense → ReLU stacks with inverted dropout after odd-numbered hidden layers.
pub fn dnn(shape: DnnShape, drop_prob: f32, seed: u64) -> Result<NetworkGraph> {
    let mut layers = Vec::new();
    let mut width = shape.input_dim;
    for h in 1..=shape.n_hidden {
        layers.push(LayerSpec::new(format!("fc{h}"), LayerKind::Dense { inputs: width, outputs: shape.hidden_width }));
        layers.push(LayerSpec::new(format!("relu{h}"), LayerKind::Relu));
        if h % 2 == 1 && drop_prob > 0.0 {
            layers.push(LayerSpec::new(format!("drop{h}"), LayerKind::Dropout { p: drop_prob }));
        }
        width = shape.hidden_width;
    }
    layers.push(LayerSpec::new("logits", LayerKind::Dense { inputs: width, outputs: shape.output_dim }));
    layers.push(LayerSpec::new("softmax", LayerKind::Softmax));
    let (params, buffers) = Init::new(seed).materialize(&layers);
    NetworkGraph::new(vec![shape.input_dim], layers, params, buffers, Mode::Training)
}

/// Desk symptom network. Trained without dropout: at 200 samples per class
/// dropout costs several points of top-1.
pub fn desk_dnn(seed: u64) -> Result<NetworkGraph> {
    dnn(DnnShape::DESK, 0.0, seed)
}

/// Layers of one residual block `relu(x + conv(relu(bn(conv(x)))))` reading its
/// skip input from `tap`.
pub fn residual_block_layers(prefix: &str, channels: usize, kernel: usize, tap: Tap) -> Vec<LayerSpec> {
    let conv = |name: String| {
        LayerSpec::new(
            name,
            LayerKind::Conv2d { in_channels: channels, out_channels: channels, kernel, stride: 1, padding: kernel / 2 },
        )
    };
    vec![
        conv(format!("{prefix}.conv1")),
        LayerSpec::new(
            format!("{prefix}.bn"),
            LayerKind::BatchNorm { features: channels, decay: DEFAULT_BN_DECAY, epsilon: DEFAULT_BN_EPSILON },
        ),
        LayerSpec::new(format!("{prefix}.relu1"), LayerKind::Relu),
        conv(format!("{prefix}.conv2")),
        LayerSpec::new(format!("{prefix}.add"), LayerKind::ResidualAdd { from: tap }),
        LayerSpec::new(format!("{prefix}.relu2"), LayerKind::Relu),
    ]
}

/// Stem conv (stride 2) → bn → relu → pool → residual block → pool →
/// residual block → pool → dense → relu → dropout → dense → softmax.
pub fn residual_cnn(shape: CnnShape, seed: u64) -> Result<NetworkGraph> {
    let f = shape.filters;
    let bn = |name: &str| {
        LayerSpec::new(name, LayerKind::BatchNorm { features: f, decay: DEFAULT_BN_DECAY, epsilon: DEFAULT_BN_EPSILON })
    };
    let mut layers = vec![
        LayerSpec::new(
            "stem",
            LayerKind::Conv2d { in_channels: shape.channels, out_channels: f, kernel: 3, stride: 2, padding: 1 },
        ),
        bn("stem.bn"),
        LayerSpec::new("stem.relu", LayerKind::Relu),
        LayerSpec::new("pool1", LayerKind::MaxPool { kernel: 2, stride: 2 }),
    ];
    let tap = layers.len() - 1;
    layers.extend(residual_block_layers("block1", f, 3, Tap::Layer(tap)));
    let tap = layers.len() - 1;
    layers.extend(residual_block_layers("block2", f, 3, Tap::Layer(tap)));
    layers.push(LayerSpec::new("pool2", LayerKind::MaxPool { kernel: 2, stride: 2 }));
    let input_shape = vec![shape.height, shape.width, shape.channels];
    let flat: usize = layer_shapes(&input_shape, &layers)?.last().unwrap().iter().product();
    layers.extend([
        LayerSpec::new("fc", LayerKind::Dense { inputs: flat, outputs: shape.hidden }),
        LayerSpec::new("fc.relu", LayerKind::Relu),
        LayerSpec::new("fc.drop", LayerKind::Dropout { p: DEFAULT_DROP_PROB }),
        LayerSpec::new("logits", LayerKind::Dense { inputs: shape.hidden, outputs: shape.classes }),
        LayerSpec::new("softmax", LayerKind::Softmax),
    ]);
    let (params, buffers) = Init::new(seed).materialize(&layers);
    NetworkGraph::new(input_shape, layers, params, buffers, Mode::Training)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_preset_parameter_count() {
        let s = DnnShape::FULL;
        let expected = (s.input_dim * s.hidden_width + s.hidden_width)
            + (s.n_hidden - 1) * (s.hidden_width * s.hidden_width + s.hidden_width)
            + (s.hidden_width * s.output_dim + s.output_dim);
        assert_eq!(expected, 11_555_337);
        let rel = (expected as f64 - 11_546_629.0).abs() / 11_546_629.0;
        assert!(rel < 0.0008);
    }

    #[test]
    fn desk_dnn_layout() {
        let g = desk_dnn(1).unwrap();
        assert_eq!(g.count_parameters(), 50 * 64 + 64 + 3 * (64 * 64 + 64) + 64 * 100 + 100);
        let drops = g.layers().iter().filter(|l| matches!(l.kind, LayerKind::Dropout { .. })).count();
        assert_eq!(drops, 0);
        assert_eq!(g.output_dim(), 100);
        let with_dropout = dnn(DnnShape::DESK, DEFAULT_DROP_PROB, 1).unwrap();
        assert_eq!(with_dropout.layers().iter().filter(|l| matches!(l.kind, LayerKind::Dropout { .. })).count(), 2);
    }

    #[test]
    fn cnn_builds() {
        let g = residual_cnn(CnnShape::DESK, 3).unwrap();
        assert_eq!(g.input_dim(), 32 * 32 * 3);
        assert_eq!(g.output_dim(), 26);
    }
}
