use serde::{Deserialize, Serialize};

use super::handle::ModelHandle;
use crate::error::{Error, Result};
use crate::meddata::{DiseaseCatalog, Image, SymptomVocabulary, CHANNELS};
use crate::tensor::top_k_indices;

pub const DEFAULT_TOP_K: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisEntry {
    pub disease_id: usize,
    pub disease: String,
    /// Raw softmax output for this disease (not renormalized over the top k).
    pub probability: f32,
    pub treatment: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisReport {
    pub entries: Vec<DiagnosisEntry>,
    /// Normalized input symptom names, in vocabulary order.
    pub symptoms: Vec<String>,
    pub fingerprint: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DiagnoseOptions {
    pub k: usize,
    pub allow_empty: bool,
}

impl Default for DiagnoseOptions {
    fn default() -> Self {
        DiagnoseOptions { k: DEFAULT_TOP_K, allow_empty: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class_id: usize,
    pub probability: f32,
}

/// Ranks diseases for a symptom set. Ties go to the lower disease id.
pub fn diagnose<S: AsRef<str>>(
    handle: &ModelHandle,
    symptoms: &[S],
    vocab: &SymptomVocabulary,
    catalog: &DiseaseCatalog,
    options: DiagnoseOptions,
) -> Result<DiagnosisReport> {
    if handle.input_dim() != vocab.len() || handle.output_dim() != catalog.len() {
        return Err(Error::Consistency(format!(
            "model maps {} inputs to {} classes but vocabulary has {} symptoms and catalog {} diseases",
            handle.input_dim(),
            handle.output_dim(),
            vocab.len(),
            catalog.len()
        )));
    }
    if symptoms.is_empty() && !options.allow_empty {
        return Err(Error::EmptySymptoms);
    }
    let x = vocab.encode(symptoms.iter().map(AsRef::as_ref))?;
    let probs = handle.forward_one(&x)?;
    let entries = top_k_indices(&probs, options.k.max(1))
        .into_iter()
        .map(|d| DiagnosisEntry {
            disease_id: d,
            disease: catalog.name(d).to_string(),
            probability: probs[d],
            treatment: catalog.treatment(d).to_string(),
        })
        .collect();
    let echo = x.iter().enumerate().filter(|(_, v)| **v > 0.0).map(|(i, _)| vocab.names()[i].clone()).collect();
    Ok(DiagnosisReport { entries, symptoms: echo, fingerprint: handle.fingerprint().to_string() })
}

/// Every class ranked by probability for one image.
pub fn classify_image(handle: &ModelHandle, image: &Image) -> Result<Vec<ClassScore>> {
    let dims = [image.height(), image.width(), CHANNELS];
    if handle.input_shape() != dims {
        return Err(Error::Input(format!(
            "image is {}x{}x{}, model expects {}",
            dims[0],
            dims[1],
            dims[2],
            handle.input_shape().iter().map(ToString::to_string).collect::<Vec<_>>().join("x")
        )));
    }
    let probs = handle.forward_one(&image.to_input())?;
    Ok(top_k_indices(&probs, probs.len()).into_iter().map(|c| ClassScore { class_id: c, probability: probs[c] }).collect())
}
