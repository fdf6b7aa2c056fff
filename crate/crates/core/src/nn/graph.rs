use std::borrow::Cow;
use std::collections::{BTreeMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels::{self, ConvGeom};
use super::layer::{LayerKind, LayerSpec, Tap};
use crate::error::{Error, Result};
use crate::tensor::{softmax_into, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Training,
    Inference,
}

/// Read access to named parameter tensors, wherever they live.
pub trait WeightSource {
    fn tensor(&self, name: &str) -> Result<Cow<'_, [f32]>>;
}

impl WeightSource for BTreeMap<String, Tensor> {
    fn tensor(&self, name: &str) -> Result<Cow<'_, [f32]>> {
        self.get(name)
            .map(|t| Cow::Borrowed(t.data()))
            .ok_or_else(|| Error::Graph(format!("missing parameter `{name}`")))
    }
}

static REVISIONS: AtomicU64 = AtomicU64::new(1);

fn next_revision() -> u64 {
    REVISIONS.fetch_add(1, Ordering::Relaxed)
}

/// An ordered layer list plus the tensors it needs.
///
/// `params` holds trainable tensors (`<layer>.weight`, `<layer>.bias`);
/// `buffers` holds batch-norm running statistics.
#[derive(Clone, Debug)]
pub struct NetworkGraph {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    params: BTreeMap<String, Tensor>,
    buffers: BTreeMap<String, Tensor>,
    mode: Mode,
    revision: u64,
}

impl PartialEq for NetworkGraph {
    fn eq(&self, other: &Self) -> bool {
        self.input_shape == other.input_shape
            && self.layers == other.layers
            && self.params == other.params
            && self.buffers == other.buffers
            && self.mode == other.mode
    }
}

/// Per-layer outputs of one forward pass plus what backward needs.
#[derive(Clone, Debug)]
pub struct ActivationTrace {
    input: Tensor,
    outputs: Vec<Tensor>,
    caches: Vec<Cache>,
    revision: u64,
    mode: Mode,
}

#[derive(Clone, Debug)]
enum Cache {
    None,
    Dropout(Vec<f32>),
    Pool(Vec<u32>),
    BatchNorm { xhat: Vec<f32>, inv_std: Vec<f32>, mean: Vec<f32>, var: Vec<f32> },
}

impl ActivationTrace {
    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn input(&self) -> &Tensor {
        &self.input
    }

    pub fn outputs(&self) -> &[Tensor] {
        &self.outputs
    }

    /// Final layer output (class probabilities), batch-first.
    pub fn output(&self) -> &Tensor {
        self.outputs.last().expect("validated graphs have layers")
    }

    pub fn into_output(mut self) -> Tensor {
        self.outputs.pop().expect("validated graphs have layers")
    }

    /// Batch mean and unbiased variance observed by training-mode batch norm at `layer`.
    pub fn batch_stats(&self, layer: usize) -> Option<(&[f32], &[f32])> {
        match &self.caches[layer] {
            Cache::BatchNorm { mean, var, .. } => Some((mean, var)),
            _ => None,
        }
    }

}

impl NetworkGraph {
    pub fn new(
        input_shape: Vec<usize>,
        layers: Vec<LayerSpec>,
        params: BTreeMap<String, Tensor>,
        buffers: BTreeMap<String, Tensor>,
        mode: Mode,
    ) -> Result<Self> {
        let g = NetworkGraph { input_shape, layers, params, buffers, mode, revision: next_revision() };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<()> {
        layer_shapes(&self.input_shape, &self.layers)?;
        if !matches!(self.layers.last().map(|l| &l.kind), Some(LayerKind::Softmax)) {
            return Err(Error::Graph("graph must end in a softmax layer".into()));
        }
        if self.layers[..self.layers.len() - 1].iter().any(|l| l.kind == LayerKind::Softmax) {
            return Err(Error::Graph("softmax is only allowed as the final layer".into()));
        }
        let mut names = HashSet::new();
        let mut expected_params = 0;
        let mut expected_buffers = 0;
        for l in &self.layers {
            if !names.insert(l.name.as_str()) {
                return Err(Error::Graph(format!("duplicate layer name `{}`", l.name)));
            }
            for (store, specs, count) in [
                (&self.params, l.param_shapes(), &mut expected_params),
                (&self.buffers, l.buffer_shapes(), &mut expected_buffers),
            ] {
                for (name, shape) in specs {
                    let t = store.get(&name).ok_or_else(|| Error::Graph(format!("missing tensor `{name}`")))?;
                    if t.shape() != shape.as_slice() {
                        return Err(Error::dim(&l.name, format!("`{name}` has shape {:?}, expected {shape:?}", t.shape())));
                    }
                    *count += 1;
                }
            }
        }
        if expected_params != self.params.len() || expected_buffers != self.buffers.len() {
            return Err(Error::Graph("graph carries tensors no layer uses".into()));
        }
        Ok(())
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_dim(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn output_dim(&self) -> usize {
        layer_shapes(&self.input_shape, &self.layers).expect("validated")[self.layers.len() - 1][0]
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn buffers(&self) -> &BTreeMap<String, Tensor> {
        &self.buffers
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
        self.revision = next_revision();
    }

    /// Mutable access to every trainable tensor. Invalidates existing traces.
    pub fn params_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.revision = next_revision();
        self.params.iter_mut()
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.revision = next_revision();
        self.params.get_mut(name)
    }

    pub fn buffer_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.revision = next_revision();
        self.buffers.get_mut(name)
    }

    pub(crate) fn into_parts(self) -> (Vec<usize>, Vec<LayerSpec>, BTreeMap<String, Tensor>, BTreeMap<String, Tensor>) {
        (self.input_shape, self.layers, self.params, self.buffers)
    }

    /// Total element count of the trainable tensors.
    pub fn count_parameters(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Per-layer output shapes, batch axis excluded.
    pub fn shapes(&self) -> Vec<Vec<usize>> {
        layer_shapes(&self.input_shape, &self.layers).expect("validated")
    }

    /// Text form of the layer list: an `input` line then one line per layer.
    pub fn manifest(&self) -> String {
        manifest_text(&self.input_shape, &self.layers)
    }

    /// Runs one sample and returns its class probabilities.
    pub fn forward(&self, input: &Tensor, rng_seed: u64) -> Result<(Vec<f32>, ActivationTrace)> {
        if input.len() != self.input_dim() {
            return Err(Error::Graph(format!(
                "input has {} elements, graph expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        let mut shape = vec![1];
        shape.extend_from_slice(&self.input_shape);
        let batch = Tensor::from_parts(shape, input.data().to_vec());
        let trace = self.forward_batch(&batch, rng_seed)?;
        Ok((trace.output().data().to_vec(), trace))
    }

    /// Runs a batch shaped `[N, input_shape..]` (or `[N, input_dim]`).
    pub fn forward_batch(&self, inputs: &Tensor, rng_seed: u64) -> Result<ActivationTrace> {
        let store = ParamsAndBuffers(self);
        let mut trace = execute(&self.input_shape, &self.layers, &store, inputs, self.mode, rng_seed)?;
        trace.revision = self.revision;
        Ok(trace)
    }

    /// Gradients of the summed cross-entropy over the batch, keyed by parameter name.
    ///
    /// `targets` is one row per sample (`[C]` for a single sample or `[N, C]`).
    pub fn backward(&self, trace: &ActivationTrace, targets: &Tensor) -> Result<BTreeMap<String, Tensor>> {
        if trace.revision != self.revision || trace.len() != self.layers.len() || trace.mode != self.mode {
            return Err(Error::Consistency("trace was not produced by this graph in its current state".into()));
        }
        let probs = trace.output();
        if targets.len() != probs.len() {
            return Err(Error::Input(format!(
                "targets have {} entries, predictions {}",
                targets.len(),
                probs.len()
            )));
        }
        let store = ParamsAndBuffers(self);
        let mut grads: BTreeMap<String, Tensor> =
            self.params.iter().map(|(k, v)| (k.clone(), Tensor::zeros(v.shape().to_vec()))).collect();
        let n = probs.rows();
        let nl = self.layers.len();
        let shapes = self.shapes();
        // d_out[i]: gradient w.r.t. output of layer i; d_input: w.r.t. graph input.
        let mut d_out: Vec<Option<Vec<f32>>> = vec![None; nl];
        let mut d_input: Option<Vec<f32>> = None;
        let logits_grad: Vec<f32> = probs.data().iter().zip(targets.data()).map(|(p, t)| p - t).collect();
        if nl == 1 {
            return Ok(grads);
        }
        d_out[nl - 2] = Some(logits_grad);

        for i in (0..nl - 1).rev() {
            let Some(dy) = d_out[i].take() else { continue };
            let layer = &self.layers[i];
            let x = if i == 0 { &trace.input } else { &trace.outputs[i - 1] };
            let in_shape: &[usize] = if i == 0 { &self.input_shape } else { &shapes[i - 1] };
            let dx = match &layer.kind {
                LayerKind::Dense { inputs, outputs } => {
                    let w = store.tensor(&layer.weight_name())?;
                    let mut dw = vec![0.0; w.len()];
                    let mut db = vec![0.0; *outputs];
                    let dx = kernels::dense_backward(x.data(), &dy, n, &w, *inputs, *outputs, &mut dw, &mut db);
                    add_into(&mut grads, &layer.weight_name(), &dw);
                    add_into(&mut grads, &layer.bias_name(), &db);
                    dx
                }
                LayerKind::Conv2d { .. } => {
                    let g = conv_geom(layer, in_shape, &shapes[i]);
                    let w = store.tensor(&layer.weight_name())?;
                    let mut dw = vec![0.0; w.len()];
                    let mut db = vec![0.0; g.cout];
                    let dx = kernels::conv_backward(x.data(), &dy, n, &g, &w, &mut dw, &mut db);
                    add_into(&mut grads, &layer.weight_name(), &dw);
                    add_into(&mut grads, &layer.bias_name(), &db);
                    dx
                }
                LayerKind::MaxPool { .. } => match &trace.caches[i] {
                    Cache::Pool(arg) => kernels::maxpool_backward(&dy, arg, x.len()),
                    _ => unreachable!("pool cache"),
                },
                LayerKind::BatchNorm { features, epsilon, .. } => {
                    let gamma = store.tensor(&layer.weight_name())?;
                    let mut dg = vec![0.0; *features];
                    let mut dbeta = vec![0.0; *features];
                    let dx = match &trace.caches[i] {
                        Cache::BatchNorm { xhat, inv_std, .. } => {
                            kernels::bn_train_backward(&dy, xhat, inv_std, &gamma, &mut dg, &mut dbeta)
                        }
                        _ => {
                            let mean = store.tensor(&layer.running_mean_name())?;
                            let var = store.tensor(&layer.running_var_name())?;
                            kernels::bn_infer_backward(x.data(), &dy, &gamma, &mean, &var, *epsilon, &mut dg, &mut dbeta)
                        }
                    };
                    add_into(&mut grads, &layer.weight_name(), &dg);
                    add_into(&mut grads, &layer.bias_name(), &dbeta);
                    dx
                }
                LayerKind::Dropout { .. } => match &trace.caches[i] {
                    Cache::Dropout(mask) => dy.iter().zip(mask).map(|(g, m)| g * m).collect(),
                    _ => dy,
                },
                LayerKind::Relu => {
                    dy.iter().zip(trace.outputs[i].data()).map(|(&g, &y)| if y > 0.0 { g } else { 0.0 }).collect()
                }
                LayerKind::ResidualAdd { from } => {
                    accumulate(&mut d_out, &mut d_input, *from, &dy);
                    dy
                }
                LayerKind::Concat { from } => {
                    let wa = *in_shape.last().unwrap();
                    let wb = tap_width(&self.input_shape, &shapes, *from);
                    let (da, db) = kernels::split_last(&dy, wa, wb);
                    accumulate(&mut d_out, &mut d_input, *from, &db);
                    da
                }
                LayerKind::Softmax => unreachable!("softmax only at the end"),
            };
            let prev = if i == 0 { Tap::Input } else { Tap::Layer(i - 1) };
            accumulate(&mut d_out, &mut d_input, prev, &dx);
        }
        Ok(grads)
    }
}

fn tap_width(input_shape: &[usize], shapes: &[Vec<usize>], tap: Tap) -> usize {
    match tap {
        Tap::Input => *input_shape.last().unwrap(),
        Tap::Layer(j) => *shapes[j].last().unwrap(),
    }
}

fn add_into(grads: &mut BTreeMap<String, Tensor>, name: &str, g: &[f32]) {
    let t = grads.get_mut(name).expect("gradient slot");
    for (a, b) in t.data_mut().iter_mut().zip(g) {
        *a += b;
    }
}

fn accumulate(d_out: &mut [Option<Vec<f32>>], d_input: &mut Option<Vec<f32>>, tap: Tap, g: &[f32]) {
    let slot = match tap {
        Tap::Input => d_input,
        Tap::Layer(j) => &mut d_out[j],
    };
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g.to_vec()),
    }
}

struct ParamsAndBuffers<'a>(&'a NetworkGraph);

impl WeightSource for ParamsAndBuffers<'_> {
    fn tensor(&self, name: &str) -> Result<Cow<'_, [f32]>> {
        self.0
            .params
            .get(name)
            .or_else(|| self.0.buffers.get(name))
            .map(|t| Cow::Borrowed(t.data()))
            .ok_or_else(|| Error::Graph(format!("missing tensor `{name}`")))
    }
}

pub(crate) fn manifest_text(input_shape: &[usize], layers: &[LayerSpec]) -> String {
    let dims: Vec<String> = input_shape.iter().map(ToString::to_string).collect();
    let mut out = format!("input,dims={}\n", dims.join("x"));
    for l in layers {
        out.push_str(&l.to_string());
        out.push('\n');
    }
    out
}

/// Parses manifest text back into an input shape and layer list.
///
/// Lines starting with `#` carry metadata and are returned separately.
pub fn parse_manifest(text: &str) -> Result<(Vec<usize>, Vec<LayerSpec>, Vec<(String, String)>)> {
    let mut lines = text.lines();
    let first = lines.next().ok_or_else(|| Error::Graph("empty manifest".into()))?;
    let dims = first
        .strip_prefix("input,dims=")
        .ok_or_else(|| Error::Graph(format!("manifest must start with `input,dims=`, got `{first}`")))?;
    let input_shape = dims
        .split('x')
        .map(|d| d.parse::<usize>().ok().filter(|&v| v > 0))
        .collect::<Option<Vec<_>>>()
        .filter(|v| !v.is_empty())
        .ok_or_else(|| Error::Graph(format!("bad input dims `{dims}`")))?;
    let mut layers = Vec::new();
    let mut meta = Vec::new();
    for line in lines {
        if let Some(m) = line.strip_prefix('#') {
            let (k, v) = m.split_once('=').unwrap_or((m, ""));
            meta.push((k.to_string(), v.to_string()));
        } else if !line.is_empty() {
            layers.push(line.parse()?);
        }
    }
    Ok((input_shape, layers, meta))
}

/// Output shapes of every layer, validating the chain and tap references.
pub(crate) fn layer_shapes(input_shape: &[usize], layers: &[LayerSpec]) -> Result<Vec<Vec<usize>>> {
    if layers.is_empty() {
        return Err(Error::Graph("graph has no layers".into()));
    }
    if input_shape.is_empty() || input_shape.contains(&0) {
        return Err(Error::Graph(format!("bad input shape {input_shape:?}")));
    }
    let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(layers.len());
    for (i, l) in layers.iter().enumerate() {
        let input = if i == 0 { input_shape } else { &shapes[i - 1] };
        let tapped = match l.tap() {
            Some(Tap::Input) => Some(input_shape),
            Some(Tap::Layer(j)) if j + 1 < i => Some(shapes[j].as_slice()),
            Some(Tap::Layer(j)) => {
                return Err(Error::Graph(format!("layer `{}` taps layer {j}, which is not strictly earlier", l.name)))
            }
            None => None,
        };
        let out = l.output_shape(input, tapped)?;
        shapes.push(out);
    }
    Ok(shapes)
}

pub(crate) fn conv_geom(layer: &LayerSpec, in_shape: &[usize], out_shape: &[usize]) -> ConvGeom {
    let LayerKind::Conv2d { in_channels, out_channels, kernel, stride, padding } = layer.kind else {
        unreachable!("conv layer")
    };
    ConvGeom {
        h: in_shape[0],
        w: in_shape[1],
        cin: in_channels,
        cout: out_channels,
        k: kernel,
        stride,
        pad: padding,
        ho: out_shape[0],
        wo: out_shape[1],
    }
}

fn dropout_rng(seed: u64, layer: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (layer as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn need<'a>(w: Cow<'a, [f32]>, expected: usize, name: &str) -> Result<Cow<'a, [f32]>> {
    if w.len() != expected {
        return Err(Error::dim(name, format!("tensor has {} elements, expected {expected}", w.len())));
    }
    Ok(w)
}

/// Shared forward executor over any weight source.
pub(crate) fn execute(
    input_shape: &[usize],
    layers: &[LayerSpec],
    weights: &dyn WeightSource,
    inputs: &Tensor,
    mode: Mode,
    seed: u64,
) -> Result<ActivationTrace> {
    let shapes = layer_shapes(input_shape, layers)?;
    let sample_len: usize = input_shape.iter().product();
    if inputs.shape().len() < 2 || inputs.row_len() != sample_len {
        return Err(Error::Graph(format!(
            "batch of shape {:?} does not match input shape {input_shape:?}",
            inputs.shape()
        )));
    }
    let n = inputs.rows();
    let mut in_shape = vec![n];
    in_shape.extend_from_slice(input_shape);
    let input = Tensor::from_parts(in_shape, inputs.data().to_vec());
    let mut outputs: Vec<Tensor> = Vec::with_capacity(layers.len());
    let mut caches = Vec::with_capacity(layers.len());

    for (i, layer) in layers.iter().enumerate() {
        let x = if i == 0 { &input } else { &outputs[i - 1] };
        let cur_shape: &[usize] = if i == 0 { input_shape } else { &shapes[i - 1] };
        let mut cache = Cache::None;
        let y: Vec<f32> = match &layer.kind {
            LayerKind::Dense { inputs: n_in, outputs: n_out } => {
                let w = need(weights.tensor(&layer.weight_name())?, n_in * n_out, &layer.name)?;
                let b = need(weights.tensor(&layer.bias_name())?, *n_out, &layer.name)?;
                kernels::dense_forward(x.data(), n, &w, &b, *n_in, *n_out)
            }
            LayerKind::Conv2d { in_channels, out_channels, kernel, .. } => {
                let g = conv_geom(layer, cur_shape, &shapes[i]);
                let w = need(weights.tensor(&layer.weight_name())?, kernel * kernel * in_channels * out_channels, &layer.name)?;
                let b = need(weights.tensor(&layer.bias_name())?, *out_channels, &layer.name)?;
                kernels::conv_forward(x.data(), n, &g, &w, &b)
            }
            LayerKind::MaxPool { kernel, stride } => {
                let (y, arg) =
                    kernels::maxpool_forward(x.data(), n, [cur_shape[0], cur_shape[1], cur_shape[2]], *kernel, *stride);
                cache = Cache::Pool(arg);
                y
            }
            LayerKind::BatchNorm { features, epsilon, .. } => {
                let gamma = need(weights.tensor(&layer.weight_name())?, *features, &layer.name)?;
                let beta = need(weights.tensor(&layer.bias_name())?, *features, &layer.name)?;
                match mode {
                    Mode::Training => {
                        let out = kernels::bn_train_forward(x.data(), *features, &gamma, &beta, *epsilon);
                        cache = Cache::BatchNorm { xhat: out.xhat, inv_std: out.inv_std, mean: out.mean, var: out.var };
                        out.y
                    }
                    Mode::Inference => {
                        let mean = need(weights.tensor(&layer.running_mean_name())?, *features, &layer.name)?;
                        let var = need(weights.tensor(&layer.running_var_name())?, *features, &layer.name)?;
                        kernels::bn_infer_forward(x.data(), &gamma, &beta, &mean, &var, *epsilon)
                    }
                }
            }
            LayerKind::Dropout { p } => match mode {
                Mode::Training if *p > 0.0 => {
                    let keep = 1.0 - p;
                    let scale = 1.0 / keep;
                    let mut rng = dropout_rng(seed, i);
                    let mask: Vec<f32> =
                        (0..x.len()).map(|_| if rng.random::<f32>() < keep { scale } else { 0.0 }).collect();
                    let y = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
                    cache = Cache::Dropout(mask);
                    y
                }
                _ => x.data().to_vec(),
            },
            LayerKind::Relu => x.data().iter().map(|&v| v.max(0.0)).collect(),
            LayerKind::ResidualAdd { from } => {
                let t = match from {
                    Tap::Input => &input,
                    Tap::Layer(j) => &outputs[*j],
                };
                x.data().iter().zip(t.data()).map(|(a, b)| a + b).collect()
            }
            LayerKind::Concat { from } => {
                let t = match from {
                    Tap::Input => &input,
                    Tap::Layer(j) => &outputs[*j],
                };
                let wa = *cur_shape.last().unwrap();
                let wb = tap_width(input_shape, &shapes, *from);
                kernels::concat_last(x.data(), wa, t.data(), wb)
            }
            LayerKind::Softmax => {
                if let Some(bad) = x.data().iter().find(|v| !v.is_finite()) {
                    return Err(Error::Numeric(format!("non-finite logit {bad} entering softmax")));
                }
                let c = shapes[i][0];
                let mut y = vec![0.0f32; x.len()];
                for (row, out) in x.data().chunks_exact(c).zip(y.chunks_exact_mut(c)) {
                    softmax_into(row, out);
                }
                y
            }
        };
        let mut shape = vec![n];
        shape.extend_from_slice(&shapes[i]);
        outputs.push(Tensor::from_parts(shape, y));
        caches.push(cache);
    }
    Ok(ActivationTrace { input, outputs, caches, revision: 0, mode })
}
