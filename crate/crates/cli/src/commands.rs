use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use mededge::evalviz::{extract_embeddings, silhouette_score, to_csv, tsne_embed, TsneConfig};
use mededge::infer::{bench, compare_cold_start, diagnose, load_bundle, CachePolicy, DiagnoseOptions};
use mededge::meddata::{
    generate_world_with_noise, read_records, sample_dataset, skin_dataset, to_dataset, write_records, DiseaseCatalog,
    OnCorrupt, SymptomVocabulary, SyntheticWorld, DEFAULT_NOISE, SKIN_CLASS_COUNT,
};
use mededge::modelpack::{
    freeze_file, load_frozen, pack_bundle, prune_for_inference, read_bundle, verify_bundle, BundleLayout, FLAG_QUANTIZED,
};
use mededge::nn::{dnn, residual_cnn, CnnShape, DnnShape};
use mededge::tensor::Tensor;
use mededge::train::{resume, train_classifier, Checkpoint, Dataset, TrainConfig};
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{data_err, CliError};
use crate::pipeline::{names_for, oracle_report, pipeline_smoke, Accuracy};

#[derive(Debug, Parser)]
#[command(name = "mededge", version, about = "Offline symptom and skin-image diagnosis pipeline")]
pub struct Cli {
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic symptom world with train and test record files.
    GenWorld(GenWorld),
    /// Generate synthetic skin images as record files.
    GenSkin(GenSkin),
    /// Train the symptom network on a record file.
    TrainDnn(TrainDnn),
    /// Train the residual image network on a record file.
    TrainCnn(TrainCnn),
    /// Turn a training checkpoint into an inference bundle (f32, dropout kept).
    Freeze(InOut),
    /// Remove training-only layers and fold batch norm.
    Prune(InOut),
    /// Re-pack a bundle with 8-bit weights.
    Quantize(InOut),
    /// Freeze, prune and pack a checkpoint in one step.
    Pack(Pack),
    /// Check a bundle's structure and checksums.
    Verify(Verify),
    /// Accuracy of a bundle on a record file.
    Eval(Eval),
    /// Write penultimate-layer activations as CSV.
    Embed(Embed),
    /// Embed CSV rows into 2 or 3 dimensions with t-SNE.
    Tsne(Tsne),
    /// Inference latency and cold-start timing.
    Bench(Bench),
    /// Rank diseases for a set of symptoms.
    Diagnose(Diagnose),
    /// Run the HTTP service.
    Serve(Serve),
    /// Run the whole symptom pipeline end to end and report metrics.
    PipelineSmoke(PipelineSmoke),
}

#[derive(Debug, Args)]
pub struct GenWorld {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub symptoms: usize,
    #[arg(long, default_value_t = 100)]
    pub diseases: usize,
    /// Training samples (drawn with seed + 1).
    #[arg(long, default_value_t = 20_000)]
    pub train: usize,
    /// Test samples (drawn with seed + 2).
    #[arg(long, default_value_t = 2_000)]
    pub test: usize,
    /// Probability that an observed symptom bit is flipped.
    #[arg(long, default_value_t = DEFAULT_NOISE)]
    pub noise: f64,
}

#[derive(Debug, Args)]
pub struct GenSkin {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 40)]
    pub per_class: usize,
    /// Held-out images per class (drawn with seed + 1, never augmented).
    #[arg(long, default_value_t = 10)]
    pub test_per_class: usize,
    /// Add rotated, blurred, noisy and brightened copies to the training set.
    #[arg(long)]
    pub augment: bool,
}

#[derive(Debug, Args)]
pub struct TrainOpts {
    /// Training record file.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Class count; defaults to the largest label + 1.
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Continue from this checkpoint instead of a fresh network.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainDnn {
    #[command(flatten)]
    pub opts: TrainOpts,
    #[arg(long, default_value_t = 64)]
    pub hidden_width: usize,
    #[arg(long, default_value_t = 4)]
    pub hidden_layers: usize,
    /// Dropout after odd hidden layers; 0 disables it.
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f32,
}

#[derive(Debug, Args)]
pub struct TrainCnn {
    #[command(flatten)]
    pub opts: TrainOpts,
}

#[derive(Debug, Args)]
pub struct InOut {
    pub input: PathBuf,
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct Pack {
    pub checkpoint: PathBuf,
    pub output: PathBuf,
    /// Store weights as 8-bit.
    #[arg(long)]
    pub quantize: bool,
}

#[derive(Debug, Args)]
pub struct Verify {
    pub bundle: PathBuf,
}

#[derive(Debug, Args)]
pub struct Eval {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Test record file.
    #[arg(long)]
    pub data: PathBuf,
    /// World file; adds the Bayes-oracle accuracy for comparison.
    #[arg(long)]
    pub world: Option<PathBuf>,
    /// Include the confusion matrix in JSON output.
    #[arg(long)]
    pub confusion: bool,
}

#[derive(Debug, Args)]
pub struct Embed {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// CSV to write: one row per sample, activations then label.
    #[arg(long)]
    pub out: PathBuf,
    /// Use only the first N samples.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct Tsne {
    /// CSV with feature columns followed by an integer label column.
    pub input: PathBuf,
    /// CSV to write: coordinates then label.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 30.0)]
    pub perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 2)]
    pub dims: usize,
}

#[derive(Debug, Args)]
pub struct Bench {
    pub bundle: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub runs: usize,
    /// none or per-layer.
    #[arg(long, default_value = "none")]
    pub cache_policy: String,
    /// Also time a mapped load against a full eager read.
    #[arg(long)]
    pub cold_start: bool,
    /// Attempts per loader for the cold-start comparison (best is kept).
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
}

#[derive(Debug, Args)]
pub struct Diagnose {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Comma-separated symptom names.
    #[arg(long, value_delimiter = ',')]
    pub symptoms: Vec<String>,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Symptom vocabulary file; defaults to the built-in names for the model size.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Disease catalog file; defaults to the built-in names for the model size.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// `id<TAB>treatment` table.
    #[arg(long)]
    pub treatments: Option<PathBuf>,
    /// Accept an empty symptom list.
    #[arg(long)]
    pub allow_empty: bool,
}

#[derive(Debug, Args)]
pub struct Serve {
    /// Config file; MEDEDGE_CONFIG takes precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PipelineSmoke {
    /// Directory for the artifacts; kept after the run.
    #[arg(long)]
    pub workdir: Option<PathBuf>,
}

/// Result of a command: a JSON value and its human rendering.
pub struct Output {
    pub json: Value,
    pub text: String,
}

impl Output {
    fn new(json: Value, text: impl Into<String>) -> Self {
        Output { json, text: text.into() }
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => {
                let mut s = serde_json::to_string_pretty(&self.json).expect("values serialize");
                s.push('\n');
                s
            }
            Format::Text => self.text.clone(),
        }
    }
}

fn to_value(v: &impl Serialize) -> Value {
    serde_json::to_value(v).expect("values serialize")
}

pub fn run(cli: &Cli) -> Result<Output, CliError> {
    let seed = cli.seed;
    match &cli.command {
        Command::GenWorld(c) => gen_world(c, seed),
        Command::GenSkin(c) => gen_skin(c, seed),
        Command::TrainDnn(c) => train_dnn(c, seed),
        Command::TrainCnn(c) => train_cnn(c, seed),
        Command::Freeze(c) => freeze_cmd(c),
        Command::Prune(c) => prune_cmd(c),
        Command::Quantize(c) => quantize_cmd(c),
        Command::Pack(c) => pack_cmd(c),
        Command::Verify(c) => verify_cmd(c),
        Command::Eval(c) => eval_cmd(c),
        Command::Embed(c) => embed_cmd(c),
        Command::Tsne(c) => tsne_cmd(c, seed),
        Command::Bench(c) => bench_cmd(c),
        Command::Diagnose(c) => diagnose_cmd(c),
        Command::Serve(c) => serve_cmd(c),
        Command::PipelineSmoke(c) => smoke_cmd(c, seed),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| data_err(format!("{}: {e}", path.display())))
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| data_err(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| data_err(format!("{}: {e}", path.display())))
}

fn gen_world(c: &GenWorld, seed: u64) -> Result<Output, CliError> {
    create_dir(&c.out)?;
    let world = generate_world_with_noise(c.symptoms, c.diseases, c.noise, seed)?;
    let train = sample_dataset(&world, c.train, seed.wrapping_add(1));
    let test = sample_dataset(&world, c.test, seed.wrapping_add(2));
    write_file(&c.out.join("world.json"), serde_json::to_string(&world).map_err(data_err)?)?;
    write_records(&train, &c.out.join("train.rec"))?;
    write_records(&test, &c.out.join("test.rec"))?;
    let (vocab, catalog) = names_for(c.symptoms, c.diseases);
    write_file(&c.out.join("vocab.txt"), vocab.to_text())?;
    write_file(&c.out.join("catalog.txt"), catalog.to_text())?;
    write_file(&c.out.join("treatments.tsv"), catalog.treatments_text())?;
    let json = json!({
        "out": c.out, "symptoms": c.symptoms, "diseases": c.diseases,
        "train": train.len(), "test": test.len(), "noise": c.noise, "seed": seed,
    });
    let text = format!(
        "world {}x{} (seed {seed}) -> {}\n{} train / {} test records\n",
        c.symptoms,
        c.diseases,
        c.out.display(),
        train.len(),
        test.len()
    );
    Ok(Output::new(json, text))
}

fn gen_skin(c: &GenSkin, seed: u64) -> Result<Output, CliError> {
    create_dir(&c.out)?;
    let train = skin_dataset(c.per_class, c.augment, seed)?;
    let test = skin_dataset(c.test_per_class, false, seed.wrapping_add(1))?;
    write_records(&train, &c.out.join("skin_train.rec"))?;
    write_records(&test, &c.out.join("skin_test.rec"))?;
    let json = json!({"out": c.out, "classes": SKIN_CLASS_COUNT, "train": train.len(), "test": test.len(), "augment": c.augment, "seed": seed});
    let text = format!("{} train / {} test skin images -> {}\n", train.len(), test.len(), c.out.display());
    Ok(Output::new(json, text))
}

fn load_dataset(path: &Path, classes: Option<usize>) -> Result<Dataset, CliError> {
    let report = read_records(path, OnCorrupt::Fail)?;
    let max = report.samples.iter().map(|s| s.label as usize + 1).max().unwrap_or(0);
    let classes = classes.unwrap_or(max);
    Ok(to_dataset(&report.samples, classes)?)
}

fn apply_overrides(base: TrainConfig, o: &TrainOpts, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: o.epochs.unwrap_or(base.epochs),
        batch_size: o.batch_size.unwrap_or(base.batch_size),
        lr0: o.lr.unwrap_or(base.lr0),
        weight_decay: o.weight_decay.unwrap_or(base.weight_decay),
        seed,
        ..base
    }
}

fn finish_training(
    o: &TrainOpts,
    data: &Dataset,
    config: &TrainConfig,
    fresh: impl FnOnce() -> mededge::Result<mededge::nn::NetworkGraph>,
) -> Result<Output, CliError> {
    let ckpt = match &o.resume {
        Some(path) => resume(Checkpoint::load(path)?, data, config)?,
        None => train_classifier(fresh()?, data, config)?,
    };
    ckpt.save(&o.out)?;
    let last = ckpt.loss_history.last().copied();
    let json = json!({
        "out": o.out, "samples": data.len(), "classes": data.classes, "epochs": ckpt.epoch,
        "parameters": ckpt.graph.count_parameters(), "final_loss": last, "loss_history": ckpt.loss_history,
        "config_hash": ckpt.config_hash,
    });
    let text = format!(
        "trained {} epochs on {} samples, final loss {:.6} -> {}\n",
        ckpt.epoch,
        data.len(),
        last.unwrap_or(f64::NAN),
        o.out.display()
    );
    Ok(Output::new(json, text))
}

fn train_dnn(c: &TrainDnn, seed: u64) -> Result<Output, CliError> {
    let data = load_dataset(&c.opts.data, c.opts.classes)?;
    let config = apply_overrides(TrainConfig::desk_dnn(), &c.opts, seed);
    let shape = DnnShape {
        input_dim: data.sample_len(),
        hidden_width: c.hidden_width,
        n_hidden: c.hidden_layers,
        output_dim: data.classes,
    };
    finish_training(&c.opts, &data, &config, || dnn(shape, c.dropout, seed))
}

fn train_cnn(c: &TrainCnn, seed: u64) -> Result<Output, CliError> {
    let data = load_dataset(&c.opts.data, c.opts.classes)?;
    let &[height, width, channels] = data.sample_shape.as_slice() else {
        return Err(data_err("train-cnn needs image records"));
    };
    let config = apply_overrides(TrainConfig::desk_cnn(), &c.opts, seed);
    let shape = CnnShape { height, width, channels, classes: data.classes, ..CnnShape::DESK };
    finish_training(&c.opts, &data, &config, || residual_cnn(shape, seed))
}

fn layout_json(path: &Path, l: &BundleLayout) -> Value {
    json!({
        "path": path, "quantized": l.is_quantized(), "tensors": l.tensors.len(), "elements": l.element_count(),
        "blob_bytes": l.blob_len, "file_bytes": l.file_len, "size_ratio": l.f32_equivalent_ratio(),
        "fingerprint": mededge::modelpack::manifest_fingerprint(&l.manifest),
    })
}

fn freeze_cmd(c: &InOut) -> Result<Output, CliError> {
    let frozen = freeze_file(&c.input)?;
    let layout = pack_bundle(&frozen, false, &c.output)?;
    let text = format!("frozen {} -> {} ({} bytes)\n", c.input.display(), c.output.display(), layout.file_len);
    Ok(Output::new(layout_json(&c.output, &layout), text))
}

fn prune_cmd(c: &InOut) -> Result<Output, CliError> {
    let quantized = read_bundle(&c.input)?.flags & FLAG_QUANTIZED != 0;
    let before = load_frozen(&c.input)?;
    let pruned = prune_for_inference(&before)?;
    let layout = pack_bundle(&pruned, quantized, &c.output)?;
    let removed = before.graph.layers().len() - pruned.graph.layers().len();
    let mut json = layout_json(&c.output, &layout);
    json["layers_removed"] = json!(removed);
    let text = format!("pruned {removed} layers -> {}\n", c.output.display());
    Ok(Output::new(json, text))
}

fn quantize_cmd(c: &InOut) -> Result<Output, CliError> {
    let source = verify_bundle(&c.input)?;
    let layout = pack_bundle(&load_frozen(&c.input)?, true, &c.output)?;
    let blob_ratio = layout.blob_len as f64 / source.blob_len as f64;
    let file_ratio = layout.file_len as f64 / source.file_len as f64;
    let mut json = layout_json(&c.output, &layout);
    json["blob_ratio_vs_input"] = json!(blob_ratio);
    json["file_ratio_vs_input"] = json!(file_ratio);
    let text = format!(
        "quantized -> {} ({} bytes, blob ratio {blob_ratio:.4}, file ratio {file_ratio:.4})\n",
        c.output.display(),
        layout.file_len
    );
    Ok(Output::new(json, text))
}

fn pack_cmd(c: &Pack) -> Result<Output, CliError> {
    let pruned = prune_for_inference(&freeze_file(&c.checkpoint)?)?;
    let layout = pack_bundle(&pruned, c.quantize, &c.output)?;
    let text = format!("packed -> {} ({} bytes, size ratio {:.4})\n", c.output.display(), layout.file_len, layout.f32_equivalent_ratio());
    Ok(Output::new(layout_json(&c.output, &layout), text))
}

fn verify_cmd(c: &Verify) -> Result<Output, CliError> {
    let layout = verify_bundle(&c.bundle)?;
    let json = {
        let mut j = layout_json(&c.bundle, &layout);
        j["status"] = json!("ok");
        j
    };
    let text = format!(
        "ok\n{} tensors, {} elements, {}, size ratio {:.4}\n",
        layout.tensors.len(),
        layout.element_count(),
        if layout.is_quantized() { "q8" } else { "f32" },
        layout.f32_equivalent_ratio()
    );
    Ok(Output::new(json, text))
}

fn eval_cmd(c: &Eval) -> Result<Output, CliError> {
    let handle = load_bundle(&c.bundle, CachePolicy::PerLayer)?;
    let records = read_records(&c.data, OnCorrupt::Fail)?;
    let data = to_dataset(&records.samples, handle.output_dim())?;
    let report = crate::pipeline::evaluate_handle(&handle, &data)?;
    let mut json = json!({"n": report.n, "classes": report.classes, "model": Accuracy::from(&report), "fingerprint": handle.fingerprint()});
    if c.confusion {
        json["confusion"] = to_value(&report.confusion);
    }
    let mut text = format!(
        "n={} top1={:.4} top5={:.4} cross_entropy={:.4}\n",
        report.n, report.top1, report.top5, report.mean_cross_entropy
    );
    if let Some(path) = &c.world {
        let world: SyntheticWorld = serde_json::from_str(&read_file(path)?).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
        let oracle = oracle_report(&world, &records.samples)?;
        json["oracle"] = to_value(&Accuracy::from(&oracle));
        let _ = writeln!(text, "oracle top1={:.4} top5={:.4}", oracle.top1, oracle.top5);
    }
    Ok(Output::new(json, text))
}

fn embed_cmd(c: &Embed) -> Result<Output, CliError> {
    let handle = load_bundle(&c.bundle, CachePolicy::PerLayer)?;
    let records = read_records(&c.data, OnCorrupt::Fail)?;
    let n = c.limit.unwrap_or(usize::MAX).min(records.samples.len());
    let data = to_dataset(&records.samples[..n], handle.output_dim())?;
    let mut shape = vec![n];
    shape.extend_from_slice(&data.sample_shape);
    let inputs = Tensor::new(shape, data.inputs.clone())?;
    let set = extract_embeddings(&handle, &inputs, &data.labels)?;
    write_file(&c.out, to_csv(&set.to_f64(), set.dim, &set.labels))?;
    let json = json!({"out": c.out, "rows": set.len(), "dim": set.dim, "fingerprint": set.fingerprint});
    Ok(Output::new(json, format!("{} x {} embeddings -> {}\n", set.len(), set.dim, c.out.display())))
}

/// Rows of `v1,...,vd,label`.
pub fn parse_labeled_csv(text: &str) -> Result<(Vec<f64>, usize, Vec<usize>), CliError> {
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut dim = None;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let (label, row) = fields.split_last().expect("split yields one field");
        if row.is_empty() || dim.is_some_and(|d| d != row.len()) {
            return Err(data_err(format!("line {}: expected {} values and a label", i + 1, dim.unwrap_or(1))));
        }
        dim = Some(row.len());
        labels.push(label.parse().map_err(|_| data_err(format!("line {}: bad label {label:?}", i + 1)))?);
        for f in row {
            let v: f64 = f.parse().map_err(|_| data_err(format!("line {}: bad value {f:?}", i + 1)))?;
            if !v.is_finite() {
                return Err(data_err(format!("line {}: non-finite value", i + 1)));
            }
            values.push(v);
        }
    }
    Ok((values, dim.unwrap_or(0), labels))
}

fn tsne_cmd(c: &Tsne, seed: u64) -> Result<Output, CliError> {
    let (data, d, labels) = parse_labeled_csv(&read_file(&c.input)?)?;
    let n = labels.len();
    let config = TsneConfig { out_dims: c.dims, perplexity: c.perplexity, iterations: c.iterations, seed, ..TsneConfig::default() };
    let out = tsne_embed(&data, n, d, &config)?;
    write_file(&c.out, to_csv(&out.coords, out.dims, &labels))?;
    let silhouette = silhouette_score(&out.coords, n, out.dims, &labels)?;
    let kl = out.kl_trace.last().copied();
    let json = json!({
        "out": c.out, "n": n, "input_dim": d, "dims": out.dims, "final_kl": kl, "silhouette": silhouette,
        "unconverged": out.unconverged.len(), "target_entropy": out.target_entropy,
    });
    let text = format!(
        "t-SNE {n} points {d}->{} dims, KL {:.6}, silhouette {silhouette:.4} -> {}\n",
        out.dims,
        kl.unwrap_or(f64::NAN),
        c.out.display()
    );
    Ok(Output::new(json, text))
}

fn bench_cmd(c: &Bench) -> Result<Output, CliError> {
    let policy: CachePolicy = c.cache_policy.parse().map_err(|e: mededge::Error| CliError::Usage(e.to_string()))?;
    let handle = load_bundle(&c.bundle, policy)?;
    let mut shape = vec![1];
    shape.extend_from_slice(handle.input_shape());
    let input = Tensor::new(shape, vec![0.5; handle.input_dim()])?;
    let stats = bench(&handle, &input, c.runs)?;
    let mut json = json!({"latency": to_value(&stats), "cache_policy": c.cache_policy});
    let mut text = format!(
        "{} runs: mean {:.3} ms, p50 {:.3} ms, p95 {:.3} ms, cold start {:.3} ms\n",
        stats.n_runs, stats.mean_ms, stats.p50_ms, stats.p95_ms, stats.cold_start_ms
    );
    drop(handle);
    if c.cold_start {
        let cold = compare_cold_start(&c.bundle, &input, c.repeats)?;
        let _ = writeln!(
            text,
            "mapped cold start {:.3} ms, eager {:.3} ms, saving {:.1}%",
            cold.mapped_ms,
            cold.eager_ms,
            cold.speedup * 100.0
        );
        json["cold_start"] = to_value(&cold);
    }
    Ok(Output::new(json, text))
}

fn diagnose_cmd(c: &Diagnose) -> Result<Output, CliError> {
    let handle = load_bundle(&c.bundle, CachePolicy::None)?;
    let (default_vocab, default_catalog) = names_for(handle.input_dim(), handle.output_dim());
    let vocab = match &c.vocab {
        Some(p) => SymptomVocabulary::load(p)?,
        None => default_vocab,
    };
    let mut catalog = match &c.catalog {
        Some(p) => DiseaseCatalog::load(p)?,
        None => default_catalog,
    };
    if let Some(p) = &c.treatments {
        catalog.apply_treatments(&read_file(p)?)?;
    }
    let symptoms: Vec<&str> = c.symptoms.iter().map(|s| s.trim()).filter(|s| !s.is_empty()).collect();
    let report = diagnose(&handle, &symptoms, &vocab, &catalog, DiagnoseOptions { k: c.k, allow_empty: c.allow_empty })?;
    let mut text = String::new();
    for (i, e) in report.entries.iter().enumerate() {
        let _ = write!(text, "{}. {:<32} {:.6}", i + 1, e.disease, e.probability);
        if !e.treatment.is_empty() {
            let _ = write!(text, "  {}", e.treatment);
        }
        text.push('\n');
    }
    let entries: Vec<Value> = report
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            json!({"rank": i + 1, "disease_id": e.disease_id, "disease": e.disease,
                   "probability": format!("{:.6}", e.probability), "treatment": e.treatment})
        })
        .collect();
    let json = json!({"entries": entries, "symptoms": report.symptoms, "fingerprint": report.fingerprint});
    Ok(Output::new(json, text))
}

fn serve_cmd(c: &Serve) -> Result<Output, CliError> {
    let cfg = mededge_service::ServiceConfig::resolve(c.config.as_deref())?;
    let bind = cfg.bind;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(data_err)?;
    eprintln!("listening on http://{bind}");
    rt.block_on(mededge_service::serve(cfg))?;
    Ok(Output::new(json!({"status": "stopped"}), "stopped\n"))
}

fn smoke_cmd(c: &PipelineSmoke, seed: u64) -> Result<Output, CliError> {
    let dir = c.workdir.clone().unwrap_or_else(|| PathBuf::from(format!("mededge-smoke-{seed}")));
    let report = pipeline_smoke(seed, &dir)?;
    let json = to_value(&report);
    let mut text = serde_json::to_string_pretty(&json).expect("values serialize");
    text.push('\n');
    Ok(Output::new(json, text))
}
