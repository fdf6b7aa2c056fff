//! Memory-mapped inference: loading, diagnosis, image classification, benchmarks.

mod bench;
mod diagnose;
mod handle;
mod residency;

pub use bench::{bench, compare_cold_start, load_eager, ColdStart, EagerModel, LatencyStats};
pub use diagnose::{classify_image, diagnose, ClassScore, DiagnoseOptions, DiagnosisEntry, DiagnosisReport, DEFAULT_TOP_K};
pub use handle::{load_bundle, CachePolicy, LoadStats, ModelHandle};
pub use residency::private_resident_bytes;

#[cfg(test)]
mod tests {
    fn assert_send_sync<T: Send + Sync>() {}

    #[test]
    fn handle_is_shareable() {
        assert_send_sync::<super::ModelHandle>();
    }
}
