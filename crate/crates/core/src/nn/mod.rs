//! Layers, graphs, and the forward/backward engine.

mod graph;
mod kernels;
mod layer;
mod models;

use std::collections::BTreeMap;

pub use graph::{parse_manifest, ActivationTrace, Mode, NetworkGraph, WeightSource};
pub(crate) use graph::{execute, layer_shapes};
pub use layer::{LayerKind, LayerSpec, Tap, DEFAULT_BN_DECAY, DEFAULT_BN_EPSILON, DEFAULT_DROP_PROB};
pub use models::{desk_dnn, dnn, residual_block_layers, residual_cnn, CnnShape, DnnShape};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `out[j] = bias[j] + Σ_i input[i]·weight[i][j]` for a single vector.
pub fn dense_forward(layer: &str, input: &[f32], weight: &Tensor, bias: &[f32]) -> Result<Vec<f32>> {
    let &[n_in, n_out] = weight.shape() else {
        return Err(Error::dim(layer, format!("weight must be a matrix, got {:?}", weight.shape())));
    };
    if input.len() != n_in || bias.len() != n_out {
        return Err(Error::dim(
            layer,
            format!("input {} / bias {} do not fit weight {n_in}×{n_out}", input.len(), bias.len()),
        ));
    }
    Ok(kernels::dense_forward(input, 1, weight.data(), bias, n_in, n_out))
}

/// Parameters of one residual block; batch norm uses its running statistics.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub conv1_weight: Tensor,
    pub conv1_bias: Tensor,
    pub bn_gamma: Tensor,
    pub bn_beta: Tensor,
    pub bn_mean: Tensor,
    pub bn_var: Tensor,
    pub bn_epsilon: f32,
    pub conv2_weight: Tensor,
    pub conv2_bias: Tensor,
}

/// `relu(x + conv2(relu(bn(conv1(x)))))` for one H×W×C sample, with same-padding convolutions.
pub fn residual_block_forward(x: &Tensor, block: &ResidualBlock) -> Result<Tensor> {
    let [h, w, c] = match *x.shape() {
        [h, w, c] => [h, w, c],
        ref s => return Err(Error::dim("residual", format!("expects H×W×C input, got {s:?}"))),
    };
    let conv_kind = |wt: &Tensor, name: &str| -> Result<LayerKind> {
        match *wt.shape() {
            [k, k2, cin, cout] if k == k2 && k % 2 == 1 => Ok(LayerKind::Conv2d {
                in_channels: cin,
                out_channels: cout,
                kernel: k,
                stride: 1,
                padding: k / 2,
            }),
            ref s => Err(Error::dim(name, format!("conv weight must be k×k×cin×cout with odd k, got {s:?}"))),
        }
    };
    let k1 = conv_kind(&block.conv1_weight, "residual.conv1")?;
    let k2 = conv_kind(&block.conv2_weight, "residual.conv2")?;
    let LayerKind::Conv2d { out_channels: mid, .. } = k1 else { unreachable!() };
    let layers = vec![
        LayerSpec::new("conv1", k1),
        LayerSpec::new("bn", LayerKind::BatchNorm { features: mid, decay: DEFAULT_BN_DECAY, epsilon: block.bn_epsilon }),
        LayerSpec::new("relu1", LayerKind::Relu),
        LayerSpec::new("conv2", k2),
        LayerSpec::new("add", LayerKind::ResidualAdd { from: Tap::Input }),
        LayerSpec::new("relu2", LayerKind::Relu),
    ];
    let mut store = BTreeMap::new();
    for (name, t) in [
        ("conv1.weight", &block.conv1_weight),
        ("conv1.bias", &block.conv1_bias),
        ("bn.weight", &block.bn_gamma),
        ("bn.bias", &block.bn_beta),
        ("bn.running_mean", &block.bn_mean),
        ("bn.running_var", &block.bn_var),
        ("conv2.weight", &block.conv2_weight),
        ("conv2.bias", &block.conv2_bias),
    ] {
        store.insert(name.to_string(), t.clone());
    }
    let batch = Tensor::from_parts(vec![1, h, w, c], x.data().to_vec());
    let trace = execute(&[h, w, c], &layers, &store, &batch, Mode::Inference, 0)?;
    let out = trace.outputs().last().unwrap();
    Ok(Tensor::from_parts(vec![h, w, c], out.data().to_vec()))
}
