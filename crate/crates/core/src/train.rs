//! Cross-entropy training with ADAM, step-decayed learning rate, decoupled
//! weight decay, and resumable checkpoints.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::modelpack::{self, StoredTensor};
use crate::nn::{LayerKind, Mode, NetworkGraph};
use crate::tensor::Tensor;

pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_decay: f64,
    pub epochs_per_decay: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Symptom network as published: 1000 epochs at 0.001, full batch, no decay.
    pub fn dnn_preset() -> Self {
        TrainConfig {
            epochs: 1000,
            batch_size: usize::MAX,
            lr0: 0.001,
            lr_decay: 1.0,
            epochs_per_decay: 1,
            weight_decay: 0.0,
            seed: 42,
        }
    }

    /// Image network as published.
    pub fn cnn_preset() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 256,
            lr0: 0.0007,
            lr_decay: 0.7,
            epochs_per_decay: 2,
            weight_decay: 0.00004,
            seed: 42,
        }
    }

    /// Mini-batch schedule for the desk symptom world, under a minute in release builds.
    pub fn desk_dnn() -> Self {
        TrainConfig { epochs: 80, batch_size: 128, lr0: 0.0003, weight_decay: 0.1, ..Self::dnn_preset() }
    }

    /// Short run of the image recipe for the synthetic skin set.
    pub fn desk_cnn() -> Self {
        TrainConfig { epochs: 16, batch_size: 32, lr0: 0.003, ..Self::cnn_preset() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.epochs_per_decay == 0 {
            return Err(Error::Input("epochs, batch_size and epochs_per_decay must be positive".into()));
        }
        if !(self.lr0 > 0.0) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Input(format!("bad learning-rate settings in {self:?}")));
        }
        Ok(())
    }

    /// Stable hash over every field.
    pub fn fingerprint(&self) -> String {
        let canon = format!(
            "{}|{}|{:x}|{:x}|{}|{:x}|{}",
            self.epochs,
            self.batch_size,
            self.lr0.to_bits(),
            self.lr_decay.to_bits(),
            self.epochs_per_decay,
            self.weight_decay.to_bits(),
            self.seed
        );
        hex16(&Sha256::digest(canon.as_bytes()))
    }
}

pub(crate) fn hex16(digest: &[u8]) -> String {
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// `lr0 · decay^⌊epoch / epochs_per_decay⌋`, applied as repeated multiplication.
pub fn lr_at_epoch(config: &TrainConfig, epoch: usize) -> f64 {
    let mut lr = config.lr0;
    for _ in 0..epoch / config.epochs_per_decay {
        lr *= config.lr_decay;
    }
    lr
}

/// `−ln p[target]` with the probability floored at 1e-12.
pub fn cross_entropy_loss(probs: &[f32], target: &[f32]) -> Result<f64> {
    if probs.len() != target.len() {
        return Err(Error::Input(format!("{} probabilities vs {} targets", probs.len(), target.len())));
    }
    let hot: Vec<usize> = target.iter().enumerate().filter(|(_, &t)| t != 0.0).map(|(i, _)| i).collect();
    if hot.len() != 1 || target[hot[0]] != 1.0 {
        return Err(Error::Input("target is not one-hot".into()));
    }
    let sum: f64 = probs.iter().map(|&p| p as f64).sum();
    if (sum - 1.0).abs() > 1e-5 {
        return Err(Error::Input(format!("probabilities sum to {sum}")));
    }
    Ok(-(probs[hot[0]] as f64).max(PROB_FLOOR).ln())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: BTreeMap<String, Vec<f32>>,
    pub v: BTreeMap<String, Vec<f32>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamState {
    fn default() -> Self {
        AdamState { m: BTreeMap::new(), v: BTreeMap::new(), step: 0, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// One bias-corrected ADAM update. Parameters named in `decayed` also shrink
/// by `lr · weight_decay · θ`.
pub fn adam_step<'a>(
    params: impl IntoIterator<Item = (&'a String, &'a mut Tensor)>,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
    decayed: &HashSet<String>,
) -> Result<()> {
    for (name, g) in grads {
        if let Some(i) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::TrainingDiverged {
                epoch: 0,
                step: state.step + 1,
                detail: format!("gradient `{name}`[{i}] is {}", g.data()[i]),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 / (1.0 - state.beta1.powi(t));
    let c2 = 1.0 / (1.0 - state.beta2.powi(t));
    let (b1, b2) = (state.beta1 as f32, state.beta2 as f32);
    for (name, p) in params {
        let g = grads.get(name).ok_or_else(|| Error::Input(format!("no gradient for `{name}`")))?;
        if g.shape() != p.shape() {
            return Err(Error::dim(name.as_str(), format!("gradient {:?} vs parameter {:?}", g.shape(), p.shape())));
        }
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; p.len()]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; p.len()]);
        let wd = if decayed.contains(name) { weight_decay } else { 0.0 };
        for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let mhat = *mi as f64 * c1;
            let vhat = *vi as f64 * c2;
            let update = mhat / (vhat.sqrt() + state.epsilon) + wd * *pi as f64;
            *pi -= (lr * update) as f32;
        }
    }
    Ok(())
}

/// Dense inputs with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub sample_shape: Vec<usize>,
    pub inputs: Vec<f32>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(sample_shape: Vec<usize>, inputs: Vec<f32>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        let per: usize = sample_shape.iter().product();
        if per == 0 || inputs.len() != per * labels.len() {
            return Err(Error::Input(format!(
                "{} input values for {} samples of shape {sample_shape:?}",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Input(format!("label {bad} outside {classes} classes")));
        }
        Ok(Dataset { sample_shape, inputs, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let per = self.sample_len();
        &self.inputs[i * per..(i + 1) * per]
    }

    pub fn sample_len(&self) -> usize {
        self.sample_shape.iter().product()
    }

    /// Batch tensor and one-hot targets for the given sample indices.
    pub fn batch(&self, idx: &[usize]) -> (Tensor, Tensor) {
        let per = self.sample_len();
        let mut x = Vec::with_capacity(idx.len() * per);
        let mut y = vec![0.0f32; idx.len() * self.classes];
        for (r, &i) in idx.iter().enumerate() {
            x.extend_from_slice(self.sample(i));
            y[r * self.classes + self.labels[i]] = 1.0;
        }
        let mut shape = vec![idx.len()];
        shape.extend_from_slice(&self.sample_shape);
        (Tensor::from_parts(shape, x), Tensor::from_parts(vec![idx.len(), self.classes], y))
    }
}

/// Training state sufficient to continue bit-identically.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub graph: NetworkGraph,
    pub optimizer: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    pub config_hash: String,
    /// Mean training loss per completed epoch.
    pub loss_history: Vec<f64>,
}

fn decayed_params(graph: &NetworkGraph) -> HashSet<String> {
    graph
        .layers()
        .iter()
        .filter(|l| matches!(l.kind, LayerKind::Dense { .. } | LayerKind::Conv2d { .. }))
        .map(|l| l.weight_name())
        .collect()
}

fn batch_seed(seed: u64, epoch: usize, batch: usize) -> u64 {
    seed.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ ((epoch as u64) << 32) ^ batch as u64
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add((epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

/// Trains `graph` from scratch for `config.epochs` epochs.
pub fn train_classifier(graph: NetworkGraph, data: &Dataset, config: &TrainConfig) -> Result<Checkpoint> {
    let ckpt = Checkpoint {
        graph,
        optimizer: AdamState::default(),
        epoch: 0,
        config_hash: config.fingerprint(),
        loss_history: Vec::new(),
    };
    resume(ckpt, data, config)
}

/// Continues training until `config.epochs` epochs are complete.
pub fn resume(mut ckpt: Checkpoint, data: &Dataset, config: &TrainConfig) -> Result<Checkpoint> {
    resume_with(&mut ckpt, data, config, |_, _| {})?;
    Ok(ckpt)
}

/// Like [`resume`], calling `on_epoch(epoch, mean_loss)` after every epoch.
pub fn resume_with(
    ckpt: &mut Checkpoint,
    data: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<()> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    let graph = &mut ckpt.graph;
    if data.sample_len() != graph.input_dim() || data.classes != graph.output_dim() {
        return Err(Error::Input(format!(
            "dataset is {} → {} but graph is {} → {}",
            data.sample_len(),
            data.classes,
            graph.input_dim(),
            graph.output_dim()
        )));
    }
    graph.set_mode(Mode::Training);
    let decayed = decayed_params(graph);
    let batch_size = config.batch_size.min(data.len());
    for epoch in ckpt.epoch..config.epochs {
        let lr = lr_at_epoch(config, epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut epoch_rng(config.seed, epoch));
        let mut loss_sum = 0.0f64;
        for (b, idx) in order.chunks(batch_size).enumerate() {
            let (x, y) = data.batch(idx);
            let trace = graph.forward_batch(&x, batch_seed(config.seed, epoch, b))?;
            for (p, t) in trace.output().data().chunks_exact(data.classes).zip(y.data().chunks_exact(data.classes)) {
                let hot = t.iter().position(|&v| v == 1.0).expect("one-hot");
                loss_sum -= (p[hot] as f64).max(PROB_FLOOR).ln();
            }
            let mut grads = graph.backward(&trace, &y)?;
            let inv = 1.0 / idx.len() as f32;
            for g in grads.values_mut() {
                g.data_mut().iter_mut().for_each(|v| *v *= inv);
            }
            let stats = running_stat_updates(graph, &trace);
            adam_step(graph.params_mut(), &grads, &mut ckpt.optimizer, lr, config.weight_decay, &decayed).map_err(
                |e| match e {
                    Error::TrainingDiverged { step, detail, .. } => Error::TrainingDiverged { epoch, step, detail },
                    other => other,
                },
            )?;
            apply_running_stats(graph, stats, ckpt.optimizer.step);
        }
        let mean = loss_sum / data.len() as f64;
        if !mean.is_finite() {
            return Err(Error::TrainingDiverged {
                epoch,
                step: ckpt.optimizer.step,
                detail: format!("epoch loss {mean}"),
            });
        }
        ckpt.loss_history.push(mean);
        ckpt.epoch = epoch + 1;
        on_epoch(epoch, mean);
    }
    ckpt.config_hash = config.fingerprint();
    Ok(())
}

struct StatUpdate {
    mean_name: String,
    var_name: String,
    decay: f64,
    mean: Vec<f32>,
    var: Vec<f32>,
}

fn running_stat_updates(graph: &NetworkGraph, trace: &crate::nn::ActivationTrace) -> Vec<StatUpdate> {
    graph
        .layers()
        .iter()
        .enumerate()
        .filter_map(|(i, l)| {
            let LayerKind::BatchNorm { decay, .. } = l.kind else { return None };
            let (mean, var) = trace.batch_stats(i)?;
            Some(StatUpdate {
                mean_name: l.running_mean_name(),
                var_name: l.running_var_name(),
                decay: decay as f64,
                mean: mean.to_vec(),
                var: var.to_vec(),
            })
        })
        .collect()
}

/// Zero-debiased exponential moving average: the stored buffer is
/// `ema_t / (1 − decay^t)`, so early steps are not dominated by the initial value.
fn apply_running_stats(graph: &mut NetworkGraph, updates: Vec<StatUpdate>, step: u64) {
    for u in updates {
        let prev_w = 1.0 - u.decay.powi(step as i32 - 1);
        let cur_w = 1.0 - u.decay.powi(step as i32);
        for (name, batch) in [(&u.mean_name, &u.mean), (&u.var_name, &u.var)] {
            let buf = graph.buffer_mut(name).expect("validated buffer");
            for (r, &b) in buf.data_mut().iter_mut().zip(batch) {
                let ema = u.decay * (*r as f64 * prev_w) + (1.0 - u.decay) * b as f64;
                *r = (ema / cur_w) as f32;
            }
        }
    }
}

const OPT_M: &str = "opt/m/";
const OPT_V: &str = "opt/v/";

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut manifest = self.graph.manifest();
        let hist: Vec<String> = self.loss_history.iter().map(|v| format!("{:016x}", v.to_bits())).collect();
        let o = &self.optimizer;
        manifest.push_str(&format!(
            "#epoch={}\n#step={}\n#config_hash={}\n#adam={:016x},{:016x},{:016x}\n#loss_history={}\n",
            self.epoch,
            o.step,
            self.config_hash,
            o.beta1.to_bits(),
            o.beta2.to_bits(),
            o.epsilon.to_bits(),
            hist.join(",")
        ));
        let mut tensors: Vec<StoredTensor> = Vec::new();
        for (name, t) in self.graph.params().iter().chain(self.graph.buffers()) {
            tensors.push(StoredTensor::f32(name.clone(), t.shape().to_vec(), t.data().to_vec()));
        }
        for (prefix, map) in [(OPT_M, &o.m), (OPT_V, &o.v)] {
            for (name, data) in map {
                let shape = self.graph.params()[name].shape().to_vec();
                tensors.push(StoredTensor::f32(format!("{prefix}{name}"), shape, data.clone()));
            }
        }
        modelpack::write_bundle(path, &manifest, modelpack::FLAG_TRAINING, &tensors)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bundle = modelpack::read_bundle(path)?;
        if bundle.flags & modelpack::FLAG_TRAINING == 0 {
            return Err(Error::Input(format!("{} is not a training checkpoint", path.display())));
        }
        let (input_shape, layers, meta) = crate::nn::parse_manifest(&bundle.manifest)?;
        let get = |k: &str| -> Result<&str> {
            meta.iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Input(format!("checkpoint lacks `{k}`")))
        };
        let bits = |s: &str| -> Result<f64> {
            u64::from_str_radix(s, 16).map(f64::from_bits).map_err(|_| Error::Input(format!("bad float bits `{s}`")))
        };
        let num = |k: &str| -> Result<u64> {
            get(k)?.parse().map_err(|_| Error::Input(format!("bad `{k}`")))
        };
        let adam: Vec<f64> = get("adam")?.split(',').map(bits).collect::<Result<_>>()?;
        if adam.len() != 3 {
            return Err(Error::Input("bad adam metadata".into()));
        }
        let hist = get("loss_history")?;
        let loss_history =
            if hist.is_empty() { Vec::new() } else { hist.split(',').map(bits).collect::<Result<Vec<_>>>()? };
        let mut optimizer = AdamState {
            step: num("step")?,
            beta1: adam[0],
            beta2: adam[1],
            epsilon: adam[2],
            ..AdamState::default()
        };
        let mut params = BTreeMap::new();
        let mut buffers = BTreeMap::new();
        let param_names: HashSet<String> =
            layers.iter().flat_map(|l| l.param_shapes()).map(|(n, _)| n).collect();
        for t in bundle.tensors {
            let name = t.name.clone();
            let tensor = t.into_f32()?;
            if let Some(p) = name.strip_prefix(OPT_M) {
                optimizer.m.insert(p.to_string(), tensor.into_data());
            } else if let Some(p) = name.strip_prefix(OPT_V) {
                optimizer.v.insert(p.to_string(), tensor.into_data());
            } else if param_names.contains(&name) {
                params.insert(name, tensor);
            } else {
                buffers.insert(name, tensor);
            }
        }
        let graph = NetworkGraph::new(input_shape, layers, params, buffers, Mode::Training)?;
        Ok(Checkpoint {
            graph,
            optimizer,
            epoch: num("epoch")? as usize,
            config_hash: get("config_hash")?.to_string(),
            loss_history,
        })
    }
}

/// Fraction of samples whose arg-max prediction is the label.
pub fn training_accuracy(graph: &NetworkGraph, data: &Dataset) -> Result<f64> {
    let mut g = graph.clone();
    g.set_mode(Mode::Inference);
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut hits = 0usize;
    for chunk in idx.chunks(512) {
        let (x, _) = data.batch(chunk);
        let out = g.forward_batch(&x, 0)?.into_output();
        for (row, &i) in out.data().chunks_exact(data.classes).zip(chunk) {
            if crate::tensor::top_k_indices(row, 1)[0] == data.labels[i] {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / data.len() as f64)
}
