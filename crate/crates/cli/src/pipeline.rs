//! Desk-scale pipeline steps shared by the subcommands, the smoke run and the acceptance suite.

use std::path::Path;

use mededge::evalviz::{evaluate, EvalReport};
use mededge::infer::{diagnose, load_bundle, CachePolicy, DiagnoseOptions, ModelHandle};
use mededge::meddata::{
    bayes_posterior, generate_world, sample_dataset, to_dataset, write_records, DiseaseCatalog, Features,
    LabeledSample, SymptomVocabulary, SyntheticWorld,
};
use mededge::modelpack::{freeze, load_frozen, pack_bundle, prune_for_inference};
use mededge::nn::desk_dnn;
use mededge::tensor::Tensor;
use mededge::train::{train_classifier, Checkpoint, Dataset, TrainConfig};
use mededge::{Error, Result};
use serde::{Deserialize, Serialize};

pub const DESK_SYMPTOMS: usize = 50;
pub const DESK_DISEASES: usize = 100;
pub const DESK_TRAIN: usize = 20_000;
pub const DESK_TEST: usize = 2_000;
pub const PARITY_TEST: usize = 10_000;
const EVAL_CHUNK: usize = 512;

/// World from `seed`; training samples from `seed + 1`, test samples from `seed + 2`.
pub struct DeskData {
    pub world: SyntheticWorld,
    pub train: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
}

pub fn desk_data(seed: u64, n_train: usize, n_test: usize) -> Result<DeskData> {
    let world = generate_world(DESK_SYMPTOMS, DESK_DISEASES, seed)?;
    let train = sample_dataset(&world, n_train, seed.wrapping_add(1));
    let test = sample_dataset(&world, n_test, seed.wrapping_add(2));
    Ok(DeskData { world, train, test })
}

/// Names for a world of the given size: the desk lists when they fit.
pub fn names_for(n_symptoms: usize, n_diseases: usize) -> (SymptomVocabulary, DiseaseCatalog) {
    let vocab = if n_symptoms == DESK_SYMPTOMS { SymptomVocabulary::desk() } else { SymptomVocabulary::with_size(n_symptoms) };
    let catalog = if n_diseases == DESK_DISEASES { DiseaseCatalog::desk() } else { DiseaseCatalog::with_size(n_diseases) };
    (vocab, catalog)
}

pub fn train_desk_dnn(train: &Dataset, seed: u64) -> Result<Checkpoint> {
    train_classifier(desk_dnn(seed)?, train, &TrainConfig { seed, ..TrainConfig::desk_dnn() })
}

/// Softmax rows for every sample, computed in chunks.
pub fn predict(handle: &ModelHandle, data: &Dataset) -> Result<Vec<f32>> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len() * handle.output_dim());
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, _) = data.batch(chunk);
        out.extend_from_slice(handle.forward(&x)?.data());
    }
    Ok(out)
}

pub fn evaluate_handle(handle: &ModelHandle, data: &Dataset) -> Result<EvalReport> {
    if handle.output_dim() != data.classes {
        return Err(Error::Consistency(format!(
            "model has {} classes, data has {}",
            handle.output_dim(),
            data.classes
        )));
    }
    evaluate(&predict(handle, data)?, data.classes, &data.labels)
}

/// Accuracy of the exact posterior of the generating world.
pub fn oracle_report(world: &SyntheticWorld, samples: &[LabeledSample]) -> Result<EvalReport> {
    let c = world.n_diseases();
    let mut preds = Vec::with_capacity(samples.len() * c);
    let mut labels = Vec::with_capacity(samples.len());
    for s in samples {
        let Features::Symptoms(x) = &s.features else {
            return Err(Error::Input("oracle needs symptom samples".into()));
        };
        let x: Vec<f32> = x.iter().map(|&b| f32::from(b)).collect();
        preds.extend(bayes_posterior(world, &x)?);
        labels.push(s.label as usize);
    }
    evaluate(&preds, c, &labels)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub top1: f64,
    pub top5: f64,
    pub mean_cross_entropy: f64,
}

impl From<&EvalReport> for Accuracy {
    fn from(r: &EvalReport) -> Self {
        Accuracy { top1: r.top1, top5: r.top5, mean_cross_entropy: r.mean_cross_entropy }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmokeDiagnosis {
    pub symptoms: Vec<String>,
    pub true_disease: String,
    pub ranked: Vec<String>,
    pub probabilities: Vec<String>,
}

/// Metrics of one end-to-end run. Contains no timings so reruns compare equal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmokeReport {
    pub seed: u64,
    pub symptoms: usize,
    pub diseases: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub epochs: usize,
    pub final_loss: f64,
    pub oracle: Accuracy,
    pub f32: Accuracy,
    pub q8: Accuracy,
    pub top5_f32: f64,
    pub top5_q8: f64,
    pub top5_abs_diff: f64,
    pub f32_bundle_bytes: u64,
    pub q8_bundle_bytes: u64,
    pub q8_blob_ratio: f64,
    pub fingerprint_f32: String,
    pub fingerprint_q8: String,
    pub diagnosis: SmokeDiagnosis,
}

/// gen-world → train → freeze → prune → quantize → pack → eval → diagnose, leaving
/// every artifact in `workdir`.
pub fn pipeline_smoke(seed: u64, workdir: &Path) -> Result<SmokeReport> {
    std::fs::create_dir_all(workdir).map_err(|e| Error::io(workdir, e))?;
    let data = desk_data(seed, DESK_TRAIN, DESK_TEST)?;
    let world_path = workdir.join("world.json");
    let world_json = serde_json::to_string(&data.world).map_err(|e| Error::Input(e.to_string()))?;
    std::fs::write(&world_path, world_json).map_err(|e| Error::io(&world_path, e))?;
    write_records(&data.train, &workdir.join("train.rec"))?;
    write_records(&data.test, &workdir.join("test.rec"))?;

    let train = to_dataset(&data.train, DESK_DISEASES)?;
    let test = to_dataset(&data.test, DESK_DISEASES)?;
    let ckpt = train_desk_dnn(&train, seed)?;
    ckpt.save(&workdir.join("dnn.ckpt"))?;

    let frozen_path = workdir.join("frozen.emed");
    pack_bundle(&freeze(&ckpt), false, &frozen_path)?;
    let pruned = prune_for_inference(&load_frozen(&frozen_path)?)?;
    let f32_path = workdir.join("pruned.emed");
    let f32_layout = pack_bundle(&pruned, false, &f32_path)?;
    let q8_path = workdir.join("q8.emed");
    let q8_layout = pack_bundle(&load_frozen(&f32_path)?, true, &q8_path)?;

    let f32_handle = load_bundle(&f32_path, CachePolicy::None)?;
    let q8_handle = load_bundle(&q8_path, CachePolicy::None)?;
    let f32_eval = evaluate_handle(&f32_handle, &test)?;
    let q8_eval = evaluate_handle(&q8_handle, &test)?;
    let oracle = oracle_report(&data.world, &data.test)?;

    let (vocab, catalog) = names_for(DESK_SYMPTOMS, DESK_DISEASES);
    let probe = &data.test[0];
    let Features::Symptoms(bits) = &probe.features else { unreachable!() };
    let mut symptoms: Vec<String> =
        bits.iter().enumerate().filter(|(_, b)| **b > 0).map(|(i, _)| vocab.names()[i].clone()).collect();
    if symptoms.is_empty() {
        symptoms.push(vocab.names()[0].clone());
    }
    let report = diagnose(&q8_handle, &symptoms, &vocab, &catalog, DiagnoseOptions::default())?;

    Ok(SmokeReport {
        seed,
        symptoms: DESK_SYMPTOMS,
        diseases: DESK_DISEASES,
        train_samples: train.len(),
        test_samples: test.len(),
        epochs: ckpt.epoch,
        final_loss: ckpt.loss_history.last().copied().unwrap_or(f64::NAN),
        oracle: (&oracle).into(),
        f32: (&f32_eval).into(),
        q8: (&q8_eval).into(),
        top5_f32: f32_eval.top5,
        top5_q8: q8_eval.top5,
        top5_abs_diff: (f32_eval.top5 - q8_eval.top5).abs(),
        f32_bundle_bytes: f32_layout.file_len,
        q8_bundle_bytes: q8_layout.file_len,
        q8_blob_ratio: q8_layout.blob_len as f64 / f32_layout.blob_len as f64,
        fingerprint_f32: f32_handle.fingerprint().to_string(),
        fingerprint_q8: q8_handle.fingerprint().to_string(),
        diagnosis: SmokeDiagnosis {
            symptoms: report.symptoms,
            true_disease: catalog.name(probe.label as usize).to_string(),
            ranked: report.entries.iter().map(|e| e.disease.clone()).collect(),
            probabilities: report.entries.iter().map(|e| format!("{:.6}", e.probability)).collect(),
        },
    })
}

/// A batch tensor holding one sample.
pub fn single(sample: &[f32], shape: &[usize]) -> Result<Tensor> {
    let mut s = vec![1];
    s.extend_from_slice(shape);
    Tensor::new(s, sample.to_vec())
}
