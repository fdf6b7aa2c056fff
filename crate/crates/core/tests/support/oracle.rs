//! Straight-line f64 re-implementation of the forward pass, used as an
//! independent oracle for the engine's outputs and gradients.
#![allow(dead_code)]

use std::collections::BTreeMap;

use mededge::nn::{LayerKind, Mode, NetworkGraph, Tap};
use mededge::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Params = BTreeMap<String, Vec<f64>>;

pub fn params_f64(graph: &NetworkGraph) -> Params {
    graph
        .params()
        .iter()
        .chain(graph.buffers())
        .map(|(k, v)| (k.clone(), v.data().iter().map(|&x| f64::from(x)).collect()))
        .collect()
}

/// Result of one oracle forward: per-sample probabilities plus the discrete
/// decisions (ReLU signs, pool winners) that make the function piecewise.
pub struct OracleRun {
    pub probs: Vec<f64>,
    pub pattern: Vec<u32>,
}

/// Dropout masks recovered from an engine trace (0 or 1/(1-p) per element).
pub fn dropout_masks(graph: &NetworkGraph, trace: &mededge::nn::ActivationTrace) -> Vec<Option<Vec<f64>>> {
    graph
        .layers()
        .iter()
        .enumerate()
        .map(|(i, l)| match l.kind {
            LayerKind::Dropout { p } if graph.mode() == Mode::Training && p > 0.0 => {
                let x = if i == 0 { trace.input() } else { &trace.outputs()[i - 1] };
                let y = &trace.outputs()[i];
                let scale = 1.0 / (1.0 - f64::from(p));
                Some(
                    x.data()
                        .iter()
                        .zip(y.data())
                        .map(|(&a, &b)| if a != 0.0 && b != 0.0 { scale } else { 0.0 })
                        .collect(),
                )
            }
            _ => None,
        })
        .collect()
}

pub fn forward(
    graph: &NetworkGraph,
    params: &Params,
    inputs: &[f64],
    n: usize,
    masks: &[Option<Vec<f64>>],
) -> OracleRun {
    let shapes = graph.shapes();
    let in_shape = graph.input_shape().to_vec();
    let mut outs: Vec<Vec<f64>> = Vec::new();
    let mut pattern = Vec::new();
    let p = |name: String| -> &Vec<f64> { &params[&name] };
    for (i, layer) in graph.layers().iter().enumerate() {
        let x: &[f64] = if i == 0 { inputs } else { &outs[i - 1] };
        let xs: &[usize] = if i == 0 { &in_shape } else { &shapes[i - 1] };
        let tap = |t: Tap| -> &[f64] {
            match t {
                Tap::Input => inputs,
                Tap::Layer(j) => &outs[j],
            }
        };
        let y: Vec<f64> = match &layer.kind {
            LayerKind::Dense { inputs: a, outputs: b } => {
                let (w, bias) = (p(layer.weight_name()), p(layer.bias_name()));
                let mut y = vec![0.0; n * b];
                for s in 0..n {
                    for j in 0..*b {
                        let mut acc = bias[j];
                        for k in 0..*a {
                            acc += x[s * a + k] * w[k * b + j];
                        }
                        y[s * b + j] = acc;
                    }
                }
                y
            }
            LayerKind::Conv2d { in_channels: ci, out_channels: co, kernel: k, stride: st, padding: pad } => {
                let (w, bias) = (p(layer.weight_name()), p(layer.bias_name()));
                let (h, wd) = (xs[0] as isize, xs[1] as isize);
                let (ho, wo) = (shapes[i][0], shapes[i][1]);
                let mut y = vec![0.0; n * ho * wo * co];
                for s in 0..n {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            for oc in 0..*co {
                                let mut acc = bias[oc];
                                for ky in 0..*k {
                                    for kx in 0..*k {
                                        let iy = (oy * st + ky) as isize - *pad as isize;
                                        let ix = (ox * st + kx) as isize - *pad as isize;
                                        if iy < 0 || ix < 0 || iy >= h || ix >= wd {
                                            continue;
                                        }
                                        for ic in 0..*ci {
                                            let xv = x[((s * xs[0] + iy as usize) * xs[1] + ix as usize) * ci + ic];
                                            acc += xv * w[((ky * k + kx) * ci + ic) * co + oc];
                                        }
                                    }
                                }
                                y[((s * ho + oy) * wo + ox) * co + oc] = acc;
                            }
                        }
                    }
                }
                y
            }
            LayerKind::MaxPool { kernel: k, stride: st } => {
                let (ho, wo, c) = (shapes[i][0], shapes[i][1], shapes[i][2]);
                let mut y = vec![0.0; n * ho * wo * c];
                for s in 0..n {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            for ch in 0..c {
                                let mut best = f64::NEG_INFINITY;
                                let mut arg = 0;
                                for ky in 0..*k {
                                    for kx in 0..*k {
                                        let v = x[((s * xs[0] + oy * st + ky) * xs[1] + ox * st + kx) * c + ch];
                                        if v > best {
                                            best = v;
                                            arg = (ky * k + kx) as u32;
                                        }
                                    }
                                }
                                pattern.push(arg);
                                y[((s * ho + oy) * wo + ox) * c + ch] = best;
                            }
                        }
                    }
                }
                y
            }
            LayerKind::BatchNorm { features: f, epsilon, .. } => {
                let (g, b) = (p(layer.weight_name()), p(layer.bias_name()));
                let eps = f64::from(*epsilon);
                let m = x.len() / f;
                let (mean, var): (Vec<f64>, Vec<f64>) = match graph.mode() {
                    Mode::Training => (0..*f)
                        .map(|c| {
                            let mu = (0..m).map(|r| x[r * f + c]).sum::<f64>() / m as f64;
                            let v = (0..m).map(|r| (x[r * f + c] - mu).powi(2)).sum::<f64>() / m as f64;
                            (mu, v)
                        })
                        .unzip(),
                    Mode::Inference => {
                        (p(layer.running_mean_name()).clone(), p(layer.running_var_name()).clone())
                    }
                };
                (0..x.len())
                    .map(|e| {
                        let c = e % f;
                        g[c] * (x[e] - mean[c]) / (var[c] + eps).sqrt() + b[c]
                    })
                    .collect()
            }
            LayerKind::Dropout { .. } => match &masks[i] {
                Some(m) => x.iter().zip(m).map(|(a, b)| a * b).collect(),
                None => x.to_vec(),
            },
            LayerKind::Relu => {
                pattern.extend(x.iter().map(|&v| u32::from(v > 0.0)));
                x.iter().map(|&v| v.max(0.0)).collect()
            }
            LayerKind::ResidualAdd { from } => x.iter().zip(tap(*from)).map(|(a, b)| a + b).collect(),
            LayerKind::Concat { from } => {
                let t = tap(*from);
                let wa = *xs.last().unwrap();
                let wb = t.len() / (x.len() / wa);
                let rows = x.len() / wa;
                let mut y = Vec::with_capacity(x.len() + t.len());
                for r in 0..rows {
                    y.extend_from_slice(&x[r * wa..(r + 1) * wa]);
                    y.extend_from_slice(&t[r * wb..(r + 1) * wb]);
                }
                y
            }
            LayerKind::Softmax => {
                let c = x.len() / n;
                let mut y = vec![0.0; x.len()];
                for s in 0..n {
                    let row = &x[s * c..(s + 1) * c];
                    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
                    for j in 0..c {
                        y[s * c + j] = (row[j] - mx).exp() / z;
                    }
                }
                y
            }
        };
        outs.push(y);
    }
    OracleRun { probs: outs.pop().unwrap(), pattern }
}

/// Summed cross-entropy of the oracle forward.
pub fn loss(graph: &NetworkGraph, params: &Params, inputs: &[f64], targets: &[usize], masks: &[Option<Vec<f64>>]) -> (f64, Vec<u32>) {
    let n = targets.len();
    let run = forward(graph, params, inputs, n, masks);
    let c = run.probs.len() / n;
    let l = targets.iter().enumerate().map(|(s, &t)| -run.probs[s * c + t].ln()).sum();
    (l, run.pattern)
}

#[derive(Debug, Default, Clone, Copy)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped_at_kinks: usize,
}

/// Floor on the denominator of the relative error, so gradients that are
/// zero up to rounding are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-3;
pub const STEP: f64 = 1e-5;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Compares engine gradients with central differences of the f64 oracle on
/// up to `max_coords` randomly chosen coordinates (all of them when smaller).
pub fn grad_check(graph: &NetworkGraph, inputs: &Tensor, targets: &[usize], seed: u64, max_coords: usize) -> GradCheck {
    let n = targets.len();
    let classes = graph.output_dim();
    let trace = graph.forward_batch(inputs, seed).unwrap();
    let mut onehot = vec![0.0f32; n * classes];
    for (s, &t) in targets.iter().enumerate() {
        onehot[s * classes + t] = 1.0;
    }
    let grads = graph.backward(&trace, &Tensor::new(vec![n, classes], onehot).unwrap()).unwrap();
    let masks = dropout_masks(graph, &trace);
    let x64: Vec<f64> = inputs.data().iter().map(|&v| f64::from(v)).collect();
    let base = params_f64(graph);
    let (_, base_pattern) = loss(graph, &base, &x64, targets, &masks);

    let mut coords: Vec<(String, usize)> =
        graph.params().iter().flat_map(|(k, v)| (0..v.len()).map(move |i| (k.clone(), i))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0FFEE);
    if coords.len() > max_coords {
        for i in 0..max_coords {
            let j = rng.random_range(i..coords.len());
            coords.swap(i, j);
        }
        coords.truncate(max_coords);
    }
    let mut out = GradCheck::default();
    for (name, idx) in coords {
        let mut plus = base.clone();
        plus.get_mut(&name).unwrap()[idx] += STEP;
        let mut minus = base.clone();
        minus.get_mut(&name).unwrap()[idx] -= STEP;
        let (lp, pp) = loss(graph, &plus, &x64, targets, &masks);
        let (lm, pm) = loss(graph, &minus, &x64, targets, &masks);
        if pp != base_pattern || pm != base_pattern {
            out.skipped_at_kinks += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * STEP);
        let analytic = f64::from(grads[&name].data()[idx]);
        out.max_rel_err = out.max_rel_err.max(rel_err(analytic, numeric));
        out.checked += 1;
    }
    out
}
