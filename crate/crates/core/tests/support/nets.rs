//! Random small networks covering every trainable layer kind.
#![allow(dead_code)]

use mededge::nn::{LayerKind, LayerSpec, NetworkGraph, Tap};
use mededge::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct RandomCase {
    pub graph: NetworkGraph,
    pub inputs: Tensor,
    pub targets: Vec<usize>,
}

fn bn(name: String, f: usize) -> LayerSpec {
    LayerSpec::new(name, LayerKind::BatchNorm { features: f, decay: 0.9, epsilon: 1e-3 })
}

/// Vector net: dense/bn/relu/dropout blocks with concat and residual skips.
fn vector_layers(rng: &mut ChaCha8Rng, d: usize, classes: usize) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    let mut width = d;
    let blocks = rng.random_range(1..=3);
    for b in 0..blocks {
        let out = rng.random_range(3..=12);
        let start = layers.len();
        layers.push(LayerSpec::new(format!("fc{b}"), LayerKind::Dense { inputs: width, outputs: out }));
        if rng.random_bool(0.5) {
            layers.push(bn(format!("bn{b}"), out));
        }
        layers.push(LayerSpec::new(format!("relu{b}"), LayerKind::Relu));
        if rng.random_bool(0.3) {
            layers.push(LayerSpec::new(format!("drop{b}"), LayerKind::Dropout { p: 0.25 }));
        }
        width = out;
        if rng.random_bool(0.4) {
            let cur = layers.len() - 1;
            layers.push(LayerSpec::new(format!("mix{b}"), LayerKind::Dense { inputs: width, outputs: width }));
            layers.push(LayerSpec::new(format!("add{b}"), LayerKind::ResidualAdd { from: Tap::Layer(cur) }));
        }
        if rng.random_bool(0.4) {
            let (from, extra) = if start == 0 || rng.random_bool(0.5) {
                (Tap::Input, d)
            } else {
                (Tap::Layer(start - 1), width_of(&layers, start - 1, d))
            };
            layers.push(LayerSpec::new(format!("cat{b}"), LayerKind::Concat { from }));
            width += extra;
        }
    }
    layers.push(LayerSpec::new("logits", LayerKind::Dense { inputs: width, outputs: classes }));
    layers.push(LayerSpec::new("softmax", LayerKind::Softmax));
    layers
}

fn width_of(layers: &[LayerSpec], upto: usize, d: usize) -> usize {
    let shapes = mededge_shapes(layers, d);
    shapes[upto].iter().product()
}

fn mededge_shapes(layers: &[LayerSpec], d: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    for l in layers {
        let cur = out.last().cloned().unwrap_or_else(|| vec![d]);
        let tapped = l.tap().map(|t| match t {
            Tap::Input => vec![d],
            Tap::Layer(j) => out[j].clone(),
        });
        out.push(l.output_shape(&cur, tapped.as_deref()).unwrap());
    }
    out
}

/// Image net: conv/bn/relu, a residual block, optional pool and concat.
fn image_layers(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize, classes: usize) -> Vec<LayerSpec> {
    let f = rng.random_range(2..=4);
    let conv = |name: &str, ci: usize, co: usize, k: usize, s: usize, p: usize| {
        LayerSpec::new(name, LayerKind::Conv2d { in_channels: ci, out_channels: co, kernel: k, stride: s, padding: p })
    };
    let stride = if rng.random_bool(0.3) { 2 } else { 1 };
    let mut layers = vec![conv("stem", c, f, 3, stride, 1), bn("stem.bn".into(), f), LayerSpec::new("stem.relu", LayerKind::Relu)];
    let tap = layers.len() - 1;
    layers.extend([
        conv("b.conv1", f, f, 3, 1, 1),
        bn("b.bn".into(), f),
        LayerSpec::new("b.relu1", LayerKind::Relu),
        conv("b.conv2", f, f, 3, 1, 1),
        LayerSpec::new("b.add", LayerKind::ResidualAdd { from: Tap::Layer(tap) }),
        LayerSpec::new("b.relu2", LayerKind::Relu),
    ]);
    let mut channels = f;
    if rng.random_bool(0.5) {
        layers.push(LayerSpec::new("cat", LayerKind::Concat { from: Tap::Layer(tap) }));
        channels += f;
    }
    let (mut hh, mut ww) = ((h + 2 - 3) / stride + 1, (w + 2 - 3) / stride + 1);
    if hh >= 2 && ww >= 2 && rng.random_bool(0.6) {
        layers.push(LayerSpec::new("pool", LayerKind::MaxPool { kernel: 2, stride: 2 }));
        hh = (hh - 2) / 2 + 1;
        ww = (ww - 2) / 2 + 1;
    }
    let flat = hh * ww * channels;
    layers.push(LayerSpec::new("logits", LayerKind::Dense { inputs: flat, outputs: classes }));
    layers.push(LayerSpec::new("softmax", LayerKind::Softmax));
    layers
}

/// A random training-mode net with ≤ 10k parameters, random nonzero biases
/// and batch-norm affine terms, and a small batch with targets.
pub fn random_case(seed: u64) -> RandomCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = rng.random_range(2..=6);
    let (input_shape, layers) = if rng.random_bool(0.5) {
        let d = rng.random_range(2..=12);
        (vec![d], vector_layers(&mut rng, d, classes))
    } else {
        let (h, w, c) = (rng.random_range(3..=6), rng.random_range(3..=6), rng.random_range(1..=3));
        (vec![h, w, c], image_layers(&mut rng, h, w, c, classes))
    };
    let mut graph = NetworkGraph::initialized(input_shape.clone(), layers, rng.random()).unwrap();
    let names: Vec<String> = graph.params().keys().cloned().collect();
    for name in names {
        let t = graph.param_mut(&name).unwrap();
        if !name.ends_with(".weight") || name.contains("bn") {
            for v in t.data_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
    }
    assert!(graph.count_parameters() <= 10_000);
    let n = rng.random_range(2..=4);
    let per: usize = input_shape.iter().product();
    let data = (0..n * per).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let mut shape = vec![n];
    shape.extend(&input_shape);
    let targets = (0..n).map(|_| rng.random_range(0..classes)).collect();
    RandomCase { graph, inputs: Tensor::new(shape, data).unwrap(), targets }
}
