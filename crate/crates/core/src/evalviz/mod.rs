//! Held-out metrics, embedding extraction and t-SNE.

mod embeddings;
mod metrics;
mod tsne;

pub use embeddings::{extract_embeddings, EmbeddingSet};
pub use metrics::*;
pub use tsne::{
    joint_probabilities, kl_divergence, kl_gradient, silhouette_score, to_csv, tsne_embed, Affinities, TsneConfig,
    TsneOutput, MAX_POINTS,
};
