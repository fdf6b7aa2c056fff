//! Kept in its own binary so no concurrent test perturbs the resident-set reading.

use mededge::infer::{compare_cold_start, load_bundle, private_resident_bytes, CachePolicy};
use mededge::modelpack::{pack_bundle, FrozenGraph};
use mededge::nn::{dnn, DnnShape};
use mededge::tensor::Tensor;

#[test]
fn mapped_load_stays_out_of_private_memory() {
    if private_resident_bytes().is_none() {
        eprintln!("no resident-set probe on this platform; skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("big.emed");
    {
        let graph = dnn(DnnShape { input_dim: 237, hidden_width: 1024, n_hidden: 5, output_dim: 1537 }, 0.0, 1).unwrap();
        pack_bundle(&FrozenGraph { graph, provenance: String::new() }, false, &path).unwrap();
    }
    let h = load_bundle(&path, CachePolicy::None).unwrap();
    let blob = h.layout().blob_len as i64;
    assert!(blob >= 20 << 20, "blob {blob}");
    let delta = h.load_stats().resident_delta.unwrap();
    assert!(delta < blob / 10, "resident grew {delta} for a {blob}-byte blob");
    drop(h);

    let x = Tensor::new(vec![1, 237], vec![1.0; 237]).unwrap();
    let cold = compare_cold_start(&path, &x, 3).unwrap();
    assert!(cold.mapped_ms < cold.eager_ms, "{cold:?}");
}
