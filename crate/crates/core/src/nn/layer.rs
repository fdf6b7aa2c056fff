//! Layer specifications and their one-line manifest encoding.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const DEFAULT_DROP_PROB: f32 = 0.15;
pub const DEFAULT_BN_DECAY: f32 = 0.9997;
pub const DEFAULT_BN_EPSILON: f32 = 0.001;

/// Where a skip connection reads from: the graph input or an earlier layer's output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tap {
    Input,
    Layer(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    Dense { inputs: usize, outputs: usize },
    Conv2d { in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize },
    MaxPool { kernel: usize, stride: usize },
    /// Channel-wise concatenation of the running activation with `from`.
    Concat { from: Tap },
    ResidualAdd { from: Tap },
    BatchNorm { features: usize, decay: f32, epsilon: f32 },
    Dropout { p: f32 },
    Relu,
    Softmax,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        LayerSpec { name: name.into(), kind }
    }

    pub fn tag(&self) -> &'static str {
        match self.kind {
            LayerKind::Dense { .. } => "dense",
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::MaxPool { .. } => "maxpool",
            LayerKind::Concat { .. } => "concat",
            LayerKind::ResidualAdd { .. } => "residual_add",
            LayerKind::BatchNorm { .. } => "batch_norm",
            LayerKind::Dropout { .. } => "dropout",
            LayerKind::Relu => "relu",
            LayerKind::Softmax => "softmax",
        }
    }

    /// Whether the layer owns a `.weight`/`.bias` pair.
    pub fn has_params(&self) -> bool {
        matches!(
            self.kind,
            LayerKind::Dense { .. } | LayerKind::Conv2d { .. } | LayerKind::BatchNorm { .. }
        )
    }

    pub fn tap(&self) -> Option<Tap> {
        match self.kind {
            LayerKind::Concat { from } | LayerKind::ResidualAdd { from } => Some(from),
            _ => None,
        }
    }

    pub(crate) fn set_tap(&mut self, tap: Tap) {
        if let LayerKind::Concat { from } | LayerKind::ResidualAdd { from } = &mut self.kind {
            *from = tap;
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn running_mean_name(&self) -> String {
        format!("{}.running_mean", self.name)
    }

    pub fn running_var_name(&self) -> String {
        format!("{}.running_var", self.name)
    }

    /// Expected shapes of trainable parameters, weight first.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        match self.kind {
            LayerKind::Dense { inputs, outputs } => vec![
                (self.weight_name(), vec![inputs, outputs]),
                (self.bias_name(), vec![outputs]),
            ],
            LayerKind::Conv2d { in_channels, out_channels, kernel, .. } => vec![
                (self.weight_name(), vec![kernel, kernel, in_channels, out_channels]),
                (self.bias_name(), vec![out_channels]),
            ],
            LayerKind::BatchNorm { features, .. } => vec![
                (self.weight_name(), vec![features]),
                (self.bias_name(), vec![features]),
            ],
            _ => Vec::new(),
        }
    }

    /// Expected shapes of non-trainable state (batch-norm running statistics).
    pub fn buffer_shapes(&self) -> Vec<(String, Vec<usize>)> {
        match self.kind {
            LayerKind::BatchNorm { features, .. } => vec![
                (self.running_mean_name(), vec![features]),
                (self.running_var_name(), vec![features]),
            ],
            _ => Vec::new(),
        }
    }

    /// Output shape (without batch axis) given the running input shape and,
    /// for skip layers, the tapped shape.
    pub fn output_shape(&self, input: &[usize], tapped: Option<&[usize]>) -> Result<Vec<usize>> {
        let err = |detail: String| Error::dim(&self.name, detail);
        match &self.kind {
            LayerKind::Dense { inputs, outputs } => {
                let n: usize = input.iter().product();
                if n != *inputs {
                    return Err(err(format!("expects {inputs} inputs, producer gives {n} ({input:?})")));
                }
                Ok(vec![*outputs])
            }
            LayerKind::Conv2d { in_channels, out_channels, kernel, stride, padding } => {
                let [h, w, c] = hwc(input).ok_or_else(|| err(format!("expects H×W×C input, got {input:?}")))?;
                if c != *in_channels {
                    return Err(err(format!("expects {in_channels} channels, got {c}")));
                }
                if *stride == 0 || *kernel == 0 || h + 2 * padding < *kernel || w + 2 * padding < *kernel {
                    return Err(err(format!("kernel {kernel} does not fit {h}×{w} with padding {padding}")));
                }
                Ok(vec![
                    (h + 2 * padding - kernel) / stride + 1,
                    (w + 2 * padding - kernel) / stride + 1,
                    *out_channels,
                ])
            }
            LayerKind::MaxPool { kernel, stride } => {
                let [h, w, c] = hwc(input).ok_or_else(|| err(format!("expects H×W×C input, got {input:?}")))?;
                if *stride == 0 || *kernel == 0 || h < *kernel || w < *kernel {
                    return Err(err(format!("pool {kernel} does not fit {h}×{w}")));
                }
                Ok(vec![(h - kernel) / stride + 1, (w - kernel) / stride + 1, c])
            }
            LayerKind::Concat { .. } => {
                let t = tapped.ok_or_else(|| err("missing tap".into()))?;
                if t.len() != input.len() || t[..t.len() - 1] != input[..input.len() - 1] {
                    return Err(err(format!("cannot concat {input:?} with {t:?}")));
                }
                let mut out = input.to_vec();
                *out.last_mut().unwrap() += t[t.len() - 1];
                Ok(out)
            }
            LayerKind::ResidualAdd { .. } => {
                let t = tapped.ok_or_else(|| err("missing tap".into()))?;
                if t != input {
                    return Err(err(format!("residual branch changes shape {t:?} -> {input:?}")));
                }
                Ok(input.to_vec())
            }
            LayerKind::BatchNorm { features, decay, epsilon } => {
                if input.last() != Some(features) {
                    return Err(err(format!("expects {features} features, got {input:?}")));
                }
                if !(*decay > 0.0 && *decay <= 1.0) || !(*epsilon > 0.0) {
                    return Err(err(format!("bad decay {decay} / epsilon {epsilon}")));
                }
                Ok(input.to_vec())
            }
            LayerKind::Dropout { p } => {
                if !(0.0..1.0).contains(p) {
                    return Err(err(format!("drop probability {p} outside [0,1)")));
                }
                Ok(input.to_vec())
            }
            LayerKind::Relu => Ok(input.to_vec()),
            LayerKind::Softmax => {
                if input.len() != 1 {
                    return Err(err(format!("softmax expects a vector, got {input:?}")));
                }
                Ok(input.to_vec())
            }
        }
    }
}

fn hwc(shape: &[usize]) -> Option<[usize; 3]> {
    match shape {
        &[h, w, c] => Some([h, w, c]),
        _ => None,
    }
}

impl fmt::Display for Tap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tap::Input => f.write_str("input"),
            Tap::Layer(i) => write!(f, "{i}"),
        }
    }
}

impl FromStr for Tap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "input" {
            Ok(Tap::Input)
        } else {
            s.parse().map(Tap::Layer).map_err(|_| Error::Graph(format!("bad tap `{s}`")))
        }
    }
}

impl fmt::Display for LayerSpec {
    /// `kind,name=...,key=value,...` with keys in a fixed order.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},name={}", self.tag(), self.name)?;
        match &self.kind {
            LayerKind::Dense { inputs, outputs } => write!(f, ",in={inputs},out={outputs}"),
            LayerKind::Conv2d { in_channels, out_channels, kernel, stride, padding } => write!(
                f,
                ",in={in_channels},out={out_channels},kernel={kernel},stride={stride},pad={padding}"
            ),
            LayerKind::MaxPool { kernel, stride } => write!(f, ",kernel={kernel},stride={stride}"),
            LayerKind::Concat { from } | LayerKind::ResidualAdd { from } => write!(f, ",from={from}"),
            LayerKind::BatchNorm { features, decay, epsilon } => {
                write!(f, ",features={features},decay={decay},eps={epsilon}")
            }
            LayerKind::Dropout { p } => write!(f, ",p={p}"),
            LayerKind::Relu | LayerKind::Softmax => Ok(()),
        }
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let mut fields = line.split(',');
        let tag = fields.next().unwrap_or_default();
        let mut name = None;
        let mut kv: Vec<(&str, &str)> = Vec::new();
        for field in fields {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| Error::Graph(format!("malformed field `{field}` in `{line}`")))?;
            if k == "name" {
                name = Some(v);
            } else {
                kv.push((k, v));
            }
        }
        let name = name.filter(|n| !n.is_empty()).ok_or_else(|| Error::Graph(format!("layer without name: `{line}`")))?;
        let get = |key: &str| -> Result<&str> {
            kv.iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| *v)
                .ok_or_else(|| Error::Graph(format!("`{line}` lacks `{key}`")))
        };
        let int = |key: &str| -> Result<usize> {
            let v = get(key)?;
            v.parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::Graph(format!("`{key}={v}` is not a positive integer")))
        };
        let real = |key: &str| -> Result<f32> {
            let v = get(key)?;
            v.parse::<f32>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::Graph(format!("`{key}={v}` is not a finite number")))
        };
        let kind = match tag {
            "dense" => LayerKind::Dense { inputs: int("in")?, outputs: int("out")? },
            "conv2d" => LayerKind::Conv2d {
                in_channels: int("in")?,
                out_channels: int("out")?,
                kernel: int("kernel")?,
                stride: int("stride")?,
                padding: {
                    let v = get("pad")?;
                    v.parse().map_err(|_| Error::Graph(format!("bad pad `{v}`")))?
                },
            },
            "maxpool" => LayerKind::MaxPool { kernel: int("kernel")?, stride: int("stride")? },
            "concat" => LayerKind::Concat { from: get("from")?.parse()? },
            "residual_add" => LayerKind::ResidualAdd { from: get("from")?.parse()? },
            "batch_norm" => LayerKind::BatchNorm {
                features: int("features")?,
                decay: real("decay")?,
                epsilon: real("eps")?,
            },
            "dropout" => LayerKind::Dropout { p: real("p")? },
            "relu" => LayerKind::Relu,
            "softmax" => LayerKind::Softmax,
            other => return Err(Error::Graph(format!("unknown layer kind `{other}`"))),
        };
        Ok(LayerSpec { name: name.to_string(), kind })
    }
}
