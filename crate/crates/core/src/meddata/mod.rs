//! Vocabularies, synthetic data, images and record files.

mod image;
mod records;
mod vocab;
mod world;

pub use image::{
    apply_op, augment_image, brightness, encode_p6, gaussian_blur, gaussian_kernel, parse_p6, rotate, skin_dataset,
    skin_image, white_noise, AugmentOp, Image, CHANNELS, SKIN_CLASS_COUNT, SKIN_SIZE,
};
pub use records::{
    decode_sample, encode_sample, open_records, read_records, read_records_from, write_records, CorruptRecord,
    OnCorrupt, RecordReader, RecordReport, RecordWriter, MAX_RECORD_LEN,
};
pub use vocab::{DiseaseCatalog, SymptomVocabulary, SKIN_CLASSES};
pub use world::{
    bayes_posterior, generate_world, generate_world_with_noise, sample_dataset, Features, LabeledSample,
    SyntheticWorld, DEFAULT_NOISE,
};

use crate::error::{Error, Result};
use crate::train::Dataset;

/// Converts samples of one modality into a training set.
pub fn to_dataset(samples: &[LabeledSample], classes: usize) -> Result<Dataset> {
    let first = samples.first().ok_or_else(|| Error::Input("no samples".into()))?;
    let sample_shape = match &first.features {
        Features::Symptoms(x) => vec![x.len()],
        Features::Image(img) => vec![img.height(), img.width(), CHANNELS],
    };
    let width: usize = sample_shape.iter().product();
    let mut inputs = Vec::with_capacity(width * samples.len());
    let mut labels = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let before = inputs.len();
        match (&s.features, sample_shape.len()) {
            (Features::Symptoms(x), 1) => inputs.extend(x.iter().map(|&b| f32::from(b))),
            (Features::Image(img), 3) => inputs.extend(img.to_input()),
            _ => return Err(Error::Input(format!("sample {i} has a different modality"))),
        }
        if inputs.len() - before != width {
            return Err(Error::Input(format!("sample {i} has a different size")));
        }
        if s.label as usize >= classes {
            return Err(Error::Input(format!("sample {i} label {} >= {classes}", s.label)));
        }
        labels.push(s.label as usize);
    }
    Dataset::new(sample_shape, inputs, labels, classes)
}
