use mededge::error::Error;
use mededge::modelpack::{
    dequantize_tensor, encode_frozen, freeze, freeze_file, load_frozen, pack_bundle, prune_for_inference,
    quantize_tensor, verify_bundle, verify_bytes, FrozenGraph,
};
use mededge::nn::{dnn, residual_cnn, CnnShape, DnnShape, LayerKind, LayerSpec, Mode, NetworkGraph, DEFAULT_DROP_PROB};
use mededge::tensor::{top_k_indices, Tensor};
use mededge::train::{train_classifier, Checkpoint, Dataset, TrainConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_inputs(n: usize, dims: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per: usize = dims.iter().product();
    let mut shape = vec![n];
    shape.extend_from_slice(dims);
    Tensor::new(shape, (0..n * per).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn infer(graph: &NetworkGraph, x: &Tensor) -> Vec<f32> {
    let mut g = graph.clone();
    g.set_mode(Mode::Inference);
    g.forward_batch(x, 0).unwrap().into_output().into_data()
}

/// Randomizes batch-norm statistics and affine parameters so folding is non-trivial.
fn perturb_bn(graph: &mut NetworkGraph, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bns: Vec<LayerSpec> =
        graph.layers().iter().filter(|l| matches!(l.kind, LayerKind::BatchNorm { .. })).cloned().collect();
    for l in bns {
        for v in graph.buffer_mut(&l.running_mean_name()).unwrap().data_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
        for v in graph.buffer_mut(&l.running_var_name()).unwrap().data_mut() {
            *v = rng.random_range(0.2..2.0);
        }
        for v in graph.param_mut(&l.weight_name()).unwrap().data_mut() {
            *v = rng.random_range(0.5..1.5);
        }
        for v in graph.param_mut(&l.bias_name()).unwrap().data_mut() {
            *v = rng.random_range(-0.3..0.3);
        }
    }
}

fn tiny_checkpoint() -> Checkpoint {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let inputs: Vec<f32> = (0..64 * 6).map(|_| rng.random_range(0.0..1.0)).collect();
    let labels: Vec<usize> = (0..64).map(|i| i % 3).collect();
    let data = Dataset::new(vec![6], inputs, labels, 3).unwrap();
    let graph = dnn(DnnShape { input_dim: 6, hidden_width: 8, n_hidden: 2, output_dim: 3 }, DEFAULT_DROP_PROB, 2).unwrap();
    let config = TrainConfig { epochs: 2, batch_size: 16, ..TrainConfig::desk_dnn() };
    train_classifier(graph, &data, &config).unwrap()
}

#[test]
fn freeze_drops_optimizer_state_and_matches_inference() {
    let ckpt = tiny_checkpoint();
    assert!(!ckpt.optimizer.m.is_empty());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.emed");
    ckpt.save(&path).unwrap();
    let stored = verify_bundle(&path).unwrap();
    assert!(stored.tensors.iter().any(|t| t.name.starts_with("opt/")));

    let frozen = freeze_file(&path).unwrap();
    assert_eq!(frozen.graph.mode(), Mode::Inference);
    assert!(frozen.graph.params().keys().chain(frozen.graph.buffers().keys()).all(|k| !k.starts_with("opt/")));
    let x = random_inputs(3, &[6], 4);
    assert_eq!(infer(&frozen.graph, &x), infer(&ckpt.graph, &x));
    assert_eq!(freeze(&ckpt).manifest(), freeze(&ckpt).manifest());
    let packed = dir.path().join("f.emed");
    pack_bundle(&frozen, false, &packed).unwrap();
    assert!(verify_bundle(&packed).unwrap().tensors.iter().all(|t| !t.name.starts_with("opt/")));
}

#[test]
fn corrupt_checkpoint_names_tensor() {
    let ckpt = tiny_checkpoint();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.emed");
    ckpt.save(&path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    let layout = verify_bytes(&bytes).unwrap();
    let target = layout.entry("fc2.weight").unwrap().clone();
    let at = (layout.blob_offset + target.offset) as usize + 5;
    bytes[at] ^= 0x10;
    std::fs::write(&path, &bytes).unwrap();
    match freeze_file(&path) {
        Err(Error::Integrity(v)) => {
            assert_eq!(v.len(), 1);
            assert_eq!(v[0].tensor.as_deref(), Some("fc2.weight"));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn prune_removes_both_dropouts() {
    let graph = dnn(DnnShape { input_dim: 10, hidden_width: 12, n_hidden: 4, output_dim: 5 }, 0.5, 3).unwrap();
    let frozen = FrozenGraph { graph: graph.clone(), provenance: String::new() };
    let pruned = prune_for_inference(&frozen).unwrap();
    assert_eq!(pruned.graph.layers().len(), graph.layers().len() - 2);
    assert!(pruned.graph.layers().iter().all(|l| !matches!(l.kind, LayerKind::Dropout { .. })));
    let x = random_inputs(8, &[10], 5);
    assert_eq!(infer(&pruned.graph, &x), infer(&graph, &x));
}

#[test]
fn plain_graph_is_unchanged_by_prune() {
    let graph = dnn(DnnShape { input_dim: 4, hidden_width: 6, n_hidden: 2, output_dim: 3 }, 0.0, 3).unwrap();
    let mut inf = graph.clone();
    inf.set_mode(Mode::Inference);
    let frozen = FrozenGraph { graph: inf.clone(), provenance: "p".into() };
    let pruned = prune_for_inference(&frozen).unwrap();
    assert_eq!(pruned.graph, inf);
}

#[test]
fn batch_norm_folding_in_dense_stack() {
    let layers = vec![
        LayerSpec::new("fc1", LayerKind::Dense { inputs: 7, outputs: 9 }),
        LayerSpec::new("bn1", LayerKind::BatchNorm { features: 9, decay: 0.99, epsilon: 1e-3 }),
        LayerSpec::new("relu1", LayerKind::Relu),
        LayerSpec::new("out", LayerKind::Dense { inputs: 9, outputs: 4 }),
        LayerSpec::new("softmax", LayerKind::Softmax),
    ];
    let mut graph = NetworkGraph::initialized(vec![7], layers, 8).unwrap();
    perturb_bn(&mut graph, 9);
    let pruned = prune_for_inference(&FrozenGraph { graph: graph.clone(), provenance: String::new() }).unwrap();
    assert_eq!(pruned.graph.layers().len(), 4);
    let x = random_inputs(10, &[7], 10);
    for (a, b) in infer(&pruned.graph, &x).iter().zip(infer(&graph, &x)) {
        assert!((a - b).abs() < 1e-5, "{a} vs {b}");
    }
}

#[test]
fn batch_norm_folding_in_residual_cnn() {
    let shape = CnnShape { height: 12, width: 12, channels: 3, filters: 4, hidden: 8, classes: 5 };
    let mut graph = residual_cnn(shape, 11).unwrap();
    perturb_bn(&mut graph, 12);
    let pruned = prune_for_inference(&FrozenGraph { graph: graph.clone(), provenance: String::new() }).unwrap();
    let bn_left = pruned.graph.layers().iter().filter(|l| matches!(l.kind, LayerKind::BatchNorm { .. })).count();
    assert_eq!(bn_left, 0);
    let x = random_inputs(10, &[12, 12, 3], 13);
    let (a, b) = (infer(&pruned.graph, &x), infer(&graph, &x));
    for (p, q) in a.iter().zip(&b) {
        assert!((p - q).abs() < 1e-5, "{p} vs {q}");
    }
}

#[test]
fn pruning_keeps_top5_on_probe_set() {
    let mut graph = residual_cnn(CnnShape { height: 8, width: 8, channels: 3, filters: 4, hidden: 8, classes: 10 }, 5).unwrap();
    perturb_bn(&mut graph, 6);
    let pruned = prune_for_inference(&FrozenGraph { graph: graph.clone(), provenance: String::new() }).unwrap();
    let x = random_inputs(100, &[8, 8, 3], 7);
    let (a, b) = (infer(&pruned.graph, &x), infer(&graph, &x));
    let mut same = 0;
    for (ra, rb) in a.chunks(10).zip(b.chunks(10)) {
        let (ta, tb) = (top_k_indices(ra, 5), top_k_indices(rb, 5));
        if ta == tb {
            same += 1;
        }
    }
    // Probabilities within 1e-5 can only swap genuinely tied classes.
    assert!(same >= 99, "{same}");
}

#[test]
fn pack_is_deterministic_and_round_trips() {
    let graph = dnn(DnnShape { input_dim: 5, hidden_width: 7, n_hidden: 2, output_dim: 3 }, 0.5, 1).unwrap();
    let frozen = prune_for_inference(&freeze(&Checkpoint {
        graph,
        optimizer: Default::default(),
        epoch: 0,
        config_hash: "h".into(),
        loss_history: Vec::new(),
    }))
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    for quantize in [false, true] {
        let a = dir.path().join("a.emed");
        let b = dir.path().join("b.emed");
        pack_bundle(&frozen, quantize, &a).unwrap();
        verify_bundle(&a).unwrap();
        pack_bundle(&frozen, quantize, &b).unwrap();
        assert!(std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap(), "quantize={quantize}");
    }
    // f32 bundles survive a full load and repack unchanged.
    let a = dir.path().join("a.emed");
    pack_bundle(&frozen, false, &a).unwrap();
    let reloaded = load_frozen(&a).unwrap();
    assert_eq!(reloaded.graph.params(), frozen.graph.params());
    let c = dir.path().join("c.emed");
    pack_bundle(&reloaded, false, &c).unwrap();
    assert!(std::fs::read(&a).unwrap() == std::fs::read(&c).unwrap());
}

#[test]
fn quantized_blob_is_a_quarter() {
    let graph = dnn(DnnShape { input_dim: 237, hidden_width: 512, n_hidden: 4, output_dim: 1537 }, 0.0, 1).unwrap();
    assert!(graph.count_parameters() >= 1_000_000);
    let frozen = FrozenGraph { graph, provenance: String::new() };
    let f32_bytes = encode_frozen(&frozen, false).unwrap();
    let q8_bytes = encode_frozen(&frozen, true).unwrap();
    let (a, b) = (verify_bytes(&f32_bytes).unwrap(), verify_bytes(&q8_bytes).unwrap());
    let ratio = b.blob_len as f64 / a.blob_len as f64;
    assert!((0.25..=0.27).contains(&ratio), "{ratio}");
    assert!(q8_bytes.len() as f64 / f32_bytes.len() as f64 <= 0.30);
}

#[test]
fn every_payload_flip_is_caught() {
    let graph = dnn(DnnShape { input_dim: 6, hidden_width: 5, n_hidden: 1, output_dim: 3 }, 0.0, 1).unwrap();
    let bytes = encode_frozen(&FrozenGraph { graph, provenance: String::new() }, true).unwrap();
    let layout = verify_bytes(&bytes).unwrap();
    for t in &layout.tensors {
        let start = (layout.blob_offset + t.offset) as usize;
        for byte in start..start + t.byte_len as usize {
            let mut b = bytes.clone();
            b[byte] ^= 1 << (byte % 8);
            let v = verify_bytes(&b).unwrap_err();
            assert_eq!(v.len(), 1);
            assert_eq!(v[0].tensor.as_deref(), Some(t.name.as_str()));
        }
    }
}

#[test]
fn random_tensor_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = Tensor::vector((0..10_000).map(|_| rng.random_range(-4.0..7.0)).collect());
    let q = quantize_tensor(&t).unwrap();
    let back = dequantize_tensor(&q);
    let bound = q.scale as f64 / 2.0 + 1e-9;
    for (a, b) in t.data().iter().zip(back.data()) {
        assert!(((*a as f64) - (*b as f64)).abs() <= bound + 1e-6 * (*a as f64).abs());
    }
}

proptest! {
    #[test]
    fn quantization_error_bound(data in prop::collection::vec(-1e3f32..1e3, 1..200), constant in any::<bool>()) {
        let data = if constant { vec![data[0]; data.len()] } else { data };
        let t = Tensor::vector(data);
        let q = quantize_tensor(&t).unwrap();
        prop_assert!(q.scale > 0.0);
        prop_assert!((0..=255).contains(&q.zero_point));
        let back = dequantize_tensor(&q);
        for (a, b) in t.data().iter().zip(back.data()) {
            // Error against the f64 reconstruction, allowing for f32 storage of the result.
            let err = (*a as f64 - *b as f64).abs();
            prop_assert!(err <= q.scale as f64 / 2.0 + 1e-9 + f32::EPSILON as f64 * (*a as f64).abs().max(1.0) * 2.0,
                "{} -> {} (scale {})", a, b, q.scale);
        }
    }
}
