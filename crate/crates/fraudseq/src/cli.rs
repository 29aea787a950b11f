//! Pipeline commands behind the `fraudseq` binary: dataset generation,
//! model training, evaluation, and the five-way benchmark. Every command
//! writes a run manifest with digests of its inputs and outputs;
//! timestamps live only in manifests so all other artifacts are
//! byte-reproducible.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dtw::{knn_predict, DtwConfig, StepDistance};
use crate::encoder::{
    build_segment_map, encode_session, load_embeddings, save_embeddings,
    train_item_embeddings, EmbeddingTable, EncodedSession, SegmentMap, SkipGramConfig,
};
use crate::error::{Error, Result};
use crate::events::{load_sessions, pad_or_truncate, write_sessions, DatasetSchema, Session};
use crate::metrics::{evaluate, EvalReport};
use crate::models::{
    schema_fingerprint, train, ModelConfig, ModelData, TrainOutcome, TrainedModel,
};
use crate::synth::{generate, SynthConfig};

pub const MODEL_PARAMS_FILE: &str = "model.bin";
pub const MODEL_META_FILE: &str = "model.meta";
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const TRAIN_LOG_FILE: &str = "train_log.txt";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATASET_FILE: &str = "sessions.jsonl";
pub const SCHEMA_FILE: &str = "schema.json";
pub const BENCH_TABLE_FILE: &str = "table.txt";

/// Every 5th session forms the validation split used for best-epoch
/// selection during training.
const VALID_STRIDE: usize = 5;

#[derive(Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

/// One manifest per command run: what ran, with which seeds, over which
/// exact bytes. The only place timestamps appear.
#[derive(Serialize)]
pub struct RunManifest {
    command: String,
    toolkit_version: String,
    config_paths: Vec<String>,
    seeds: Vec<u64>,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
    started_unix_ms: u128,
    duration_ms: u128,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hex::encode(hasher.finalize()))
}

fn digest_all(paths: &[PathBuf]) -> Result<Vec<FileDigest>> {
    paths
        .iter()
        .map(|p| {
            Ok(FileDigest { path: p.display().to_string(), sha256: sha256_file(p)? })
        })
        .collect()
}

struct ManifestBuilder {
    command: String,
    config_paths: Vec<String>,
    seeds: Vec<u64>,
    inputs: Vec<PathBuf>,
    started: Instant,
    started_unix_ms: u128,
}

impl ManifestBuilder {
    fn new(command: &str) -> ManifestBuilder {
        ManifestBuilder {
            command: command.to_string(),
            config_paths: Vec::new(),
            seeds: Vec::new(),
            inputs: Vec::new(),
            started: Instant::now(),
            started_unix_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or(0),
        }
    }

    fn config(&mut self, path: &Path) -> &mut Self {
        self.config_paths.push(path.display().to_string());
        self
    }

    fn seed(&mut self, seed: u64) -> &mut Self {
        self.seeds.push(seed);
        self
    }

    fn input(&mut self, path: &Path) -> &mut Self {
        self.inputs.push(path.to_path_buf());
        self
    }

    fn write(self, out_dir: &Path, outputs: &[PathBuf]) -> Result<()> {
        let manifest = RunManifest {
            command: self.command,
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            config_paths: self.config_paths,
            seeds: self.seeds,
            inputs: digest_all(&self.inputs)?,
            outputs: digest_all(outputs)?,
            started_unix_ms: self.started_unix_ms,
            duration_ms: self.started.elapsed().as_millis(),
        };
        let path = out_dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(path.display().to_string(), e))
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

/// Generate a labeled synthetic dataset plus its schema.
pub fn cmd_synth(config: &Path, out_dir: &Path, seed: Option<u64>) -> Result<()> {
    let mut manifest = ManifestBuilder::new("synth");
    manifest.config(config).input(config);
    let mut cfg = SynthConfig::load(config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    manifest.seed(cfg.seed);
    ensure_dir(out_dir)?;
    let schema = cfg.schema();
    let sessions = generate(&cfg)?;
    let data_path = out_dir.join(DATASET_FILE);
    let schema_path = out_dir.join(SCHEMA_FILE);
    write_sessions(&data_path, &sessions, &schema)?;
    schema.save(&schema_path)?;
    manifest.write(out_dir, &[data_path, schema_path])
}

/// Raw sessions padded/truncated to the schema length, plus encodings.
struct LoadedDataset {
    raw: Vec<Session>,
    encoded: Vec<EncodedSession>,
    map: SegmentMap,
}

fn load_dataset(data: &Path, schema: &DatasetSchema) -> Result<LoadedDataset> {
    let raw = load_sessions(data, schema)?;
    if raw.is_empty() {
        return Err(Error::InvalidData(format!("no sessions in {}", data.display())));
    }
    let map = build_segment_map(schema);
    let padded: Vec<Session> = raw
        .iter()
        .map(|s| pad_or_truncate(s, schema.sequence_length, schema))
        .collect();
    let encoded = padded.iter().map(|s| encode_session(s, &map, schema)).collect();
    Ok(LoadedDataset { raw, encoded, map })
}

fn split_train_valid(n: usize) -> (Vec<usize>, Vec<usize>) {
    let mut fit = Vec::new();
    let mut valid = Vec::new();
    for i in 0..n {
        if i % VALID_STRIDE == 0 {
            valid.push(i);
        } else {
            fit.push(i);
        }
    }
    (fit, valid)
}

fn subset(sessions: &[EncodedSession], idx: &[usize]) -> Vec<EncodedSession> {
    idx.iter().map(|&i| sessions[i].clone()).collect()
}

fn write_train_log(path: &Path, outcome: &TrainOutcome) -> Result<()> {
    let mut text = String::new();
    for e in &outcome.log {
        text.push_str(&format!(
            "epoch={} train_loss={:.6} valid_auc={:.6} valid_ks={:.6} grad_norm_rnn={:.6} grad_norm_cnn={:.6}\n",
            e.epoch, e.train_loss, e.valid_auc, e.valid_ks, e.grad_norm_rnn, e.grad_norm_cnn
        ));
    }
    text.push_str(&format!("best_epoch={}\n", outcome.best_epoch));
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Train embeddings when the corpus has item tokens; `None` otherwise.
fn maybe_train_embeddings(corpus: &[Session], seed: u64) -> Result<Option<EmbeddingTable>> {
    let cfg = SkipGramConfig { seed, ..SkipGramConfig::default() };
    match train_item_embeddings(corpus, &cfg) {
        Ok(table) => Ok(Some(table)),
        Err(Error::NoItemTokens) => Ok(None),
        Err(other) => Err(other),
    }
}

/// Train one model end to end from files: skip-gram embeddings (when the
/// data has item tokens), an internal train/validation split, and the
/// trained model plus per-epoch log on disk.
pub fn cmd_train(
    config: &Path,
    data: &Path,
    schema_path: &Path,
    out_dir: &Path,
    seed: Option<u64>,
) -> Result<()> {
    let mut manifest = ManifestBuilder::new("train");
    manifest.config(config).input(config).input(data).input(schema_path);
    let mut model_cfg = ModelConfig::load(config)?;
    if let Some(seed) = seed {
        model_cfg.seed = seed;
    }
    manifest.seed(model_cfg.seed);
    let schema = DatasetSchema::load(schema_path)?;
    let dataset = load_dataset(data, &schema)?;
    ensure_dir(out_dir)?;

    let (fit_idx, valid_idx) = split_train_valid(dataset.encoded.len());
    let fit_raw: Vec<Session> = fit_idx.iter().map(|&i| dataset.raw[i].clone()).collect();
    let embeddings = maybe_train_embeddings(&fit_raw, model_cfg.seed)?;
    let emb_dim = embeddings.as_ref().map_or(0, |e| e.dim);
    let fingerprint = schema_fingerprint(&schema, &dataset.map, emb_dim);

    let fit_data = ModelData::prepare(
        &subset(&dataset.encoded, &fit_idx),
        &dataset.map,
        embeddings.as_ref(),
        model_cfg.kind,
    )?;
    let valid_data = ModelData::prepare(
        &subset(&dataset.encoded, &valid_idx),
        &dataset.map,
        embeddings.as_ref(),
        model_cfg.kind,
    )?;
    let outcome = train(&model_cfg, &fit_data, &valid_data, fingerprint)?;

    let params_path = out_dir.join(MODEL_PARAMS_FILE);
    let meta_path = out_dir.join(MODEL_META_FILE);
    let log_path = out_dir.join(TRAIN_LOG_FILE);
    outcome.model.save(&params_path, &meta_path)?;
    write_train_log(&log_path, &outcome)?;
    let mut outputs = vec![params_path, meta_path, log_path];
    if let Some(table) = &embeddings {
        let emb_path = out_dir.join(EMBEDDINGS_FILE);
        save_embeddings(table, &emb_path)?;
        outputs.push(emb_path);
    }
    manifest.write(out_dir, &outputs)
}

/// Score a saved model over a labeled dataset and write the evaluation
/// report plus ROC/KS curve files.
pub fn cmd_eval(model_dir: &Path, data: &Path, schema_path: &Path, out_dir: &Path) -> Result<()> {
    let mut manifest = ManifestBuilder::new("eval");
    let params_path = model_dir.join(MODEL_PARAMS_FILE);
    let meta_path = model_dir.join(MODEL_META_FILE);
    let emb_path = model_dir.join(EMBEDDINGS_FILE);
    manifest.input(&params_path).input(&meta_path).input(data).input(schema_path);
    let model = TrainedModel::load(&params_path, &meta_path)?;
    let embeddings = if emb_path.exists() {
        manifest.input(&emb_path);
        Some(load_embeddings(&emb_path)?)
    } else {
        None
    };
    let schema = DatasetSchema::load(schema_path)?;
    let dataset = load_dataset(data, &schema)?;
    ensure_dir(out_dir)?;

    let emb_dim = embeddings.as_ref().map_or(0, |e| e.dim);
    let fingerprint = schema_fingerprint(&schema, &dataset.map, emb_dim);
    let model_data = ModelData::prepare(
        &dataset.encoded,
        &dataset.map,
        embeddings.as_ref(),
        model.config.kind,
    )?;
    let scores = model.score(&model_data, &fingerprint)?;
    let labels = labels_of(&dataset.encoded)?;
    let report = evaluate(&scores, &labels, None)?;
    report.write_files(out_dir)?;
    write_scores(&out_dir.join("scores.txt"), &dataset.raw, &scores)?;
    let outputs: Vec<PathBuf> = ["report.txt", "report.json", "roc_points.txt", "ks_points.txt", "scores.txt"]
        .iter()
        .map(|f| out_dir.join(f))
        .collect();
    manifest.write(out_dir, &outputs)
}

fn labels_of(sessions: &[EncodedSession]) -> Result<Vec<u8>> {
    sessions
        .iter()
        .enumerate()
        .map(|(i, s)| {
            s.label
                .ok_or_else(|| Error::InvalidData(format!("session at index {i} has no label")))
        })
        .collect()
}

fn write_scores(path: &Path, sessions: &[Session], scores: &[f64]) -> Result<()> {
    let mut text = String::new();
    for (s, score) in sessions.iter().zip(scores) {
        text.push_str(&format!("{} {:.9e}\n", s.session_id, score));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// DTW options for the benchmark, mapped onto [`DtwConfig`] plus an
/// optional cap on the reference set size (DTW is quadratic per pair).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchDtw {
    pub k_neighbors: usize,
    #[serde(default)]
    pub window: Option<usize>,
    #[serde(default)]
    pub train_subsample: Option<usize>,
}

/// Benchmark configuration: a synth config, one model config per trained
/// kind, and the DTW baseline options. Relative paths resolve against the
/// bench config's own directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchConfig {
    pub synth_config: String,
    /// kind name -> model config path; must cover mlp, rnn, cnn_mtf, fused.
    pub model_configs: BTreeMap<String, String>,
    pub n_train: usize,
    pub n_test: usize,
    pub dtw: BenchDtw,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl BenchConfig {
    pub fn load(path: &Path) -> Result<BenchConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|_| Error::FileNotFound(path.display().to_string()))?;
        let cfg: BenchConfig = serde_json::from_str(&text).map_err(|e| Error::CorruptFile {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        for kind in ["mlp", "rnn", "cnn_mtf", "fused"] {
            if !cfg.model_configs.contains_key(kind) {
                return Err(Error::MissingConfigKey { key: format!("model_configs.{kind}") });
            }
        }
        Ok(cfg)
    }
}

fn resolve(base: &Path, path: &str) -> PathBuf {
    let p = Path::new(path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.parent().unwrap_or(Path::new(".")).join(p)
    }
}

/// Fixed row order of the benchmark table.
pub const BENCH_KINDS: [&str; 5] = ["mlp", "rnn", "cnn_mtf", "fused", "dtw_knn"];

/// One benchmark row.
pub struct BenchRow {
    pub kind: String,
    pub report: EvalReport,
}

pub fn bench_table(rows: &[BenchRow]) -> String {
    let mut text = String::from("model auc ks precision coverage\n");
    for row in rows {
        text.push_str(&format!(
            "{} {:.6} {:.6} {:.6} {:.6}\n",
            row.kind, row.report.auc, row.report.ks, row.report.precision, row.report.coverage
        ));
    }
    text
}

/// Score test sessions with the DTW k-nearest-neighbor baseline.
pub fn dtw_scores(
    test: &[EncodedSession],
    train_refs: &[(EncodedSession, u8)],
    cfg: &DtwConfig,
) -> Result<Vec<f64>> {
    test.par_iter()
        .map(|q| knn_predict(q, train_refs, cfg).map(|(_, score)| score))
        .collect()
}

/// The full five-model comparison over a generated benchmark dataset.
/// Exposed as a library call so tests can run it without the binary.
pub fn run_bench(config: &Path, out_dir: &Path, seed: Option<u64>) -> Result<Vec<BenchRow>> {
    let mut manifest = ManifestBuilder::new("bench");
    manifest.config(config).input(config);
    let bench = BenchConfig::load(config)?;
    let synth_path = resolve(config, &bench.synth_config);
    manifest.config(&synth_path).input(&synth_path);
    let mut synth_cfg = SynthConfig::load(&synth_path)?;
    synth_cfg.n_sessions = bench.n_train + bench.n_test;
    if let Some(seed) = seed.or(bench.seed) {
        synth_cfg.seed = seed;
    }
    manifest.seed(synth_cfg.seed);
    ensure_dir(out_dir)?;

    let schema = synth_cfg.schema();
    let sessions = generate(&synth_cfg)?;
    let (train_raw, test_raw) = sessions.split_at(bench.n_train);
    let train_path = out_dir.join("train.jsonl");
    let test_path = out_dir.join("test.jsonl");
    let schema_path = out_dir.join(SCHEMA_FILE);
    write_sessions(&train_path, train_raw, &schema)?;
    write_sessions(&test_path, test_raw, &schema)?;
    schema.save(&schema_path)?;

    let map = build_segment_map(&schema);
    let encode_all = |raw: &[Session]| -> Vec<EncodedSession> {
        raw.iter()
            .map(|s| encode_session(&pad_or_truncate(s, schema.sequence_length, &schema), &map, &schema))
            .collect()
    };
    let train_enc = encode_all(train_raw);
    let test_enc = encode_all(test_raw);
    let test_labels = labels_of(&test_enc)?;

    let (fit_idx, valid_idx) = split_train_valid(train_enc.len());
    let fit_raw: Vec<Session> = fit_idx.iter().map(|&i| train_raw[i].clone()).collect();
    let embeddings = maybe_train_embeddings(&fit_raw, synth_cfg.seed)?;
    let emb_dim = embeddings.as_ref().map_or(0, |e| e.dim);
    let fingerprint = schema_fingerprint(&schema, &map, emb_dim);

    let mut rows = Vec::new();
    let mut outputs = vec![train_path, test_path, schema_path];
    for kind_name in &BENCH_KINDS[..4] {
        let cfg_path = resolve(config, &bench.model_configs[*kind_name]);
        manifest.config(&cfg_path).input(&cfg_path);
        let model_cfg = ModelConfig::load(&cfg_path)?;
        if model_cfg.kind.as_str() != *kind_name {
            return Err(Error::BadConfigKey {
                key: format!("model_configs.{kind_name}"),
                reason: format!("config declares kind={}", model_cfg.kind.as_str()),
            });
        }
        let fit = ModelData::prepare(
            &subset(&train_enc, &fit_idx),
            &map,
            embeddings.as_ref(),
            model_cfg.kind,
        )?;
        let valid = ModelData::prepare(
            &subset(&train_enc, &valid_idx),
            &map,
            embeddings.as_ref(),
            model_cfg.kind,
        )?;
        let outcome = train(&model_cfg, &fit, &valid, fingerprint.clone())?;
        let test_data = ModelData::prepare(&test_enc, &map, embeddings.as_ref(), model_cfg.kind)?;
        let scores = outcome.model.score(&test_data, &fingerprint)?;
        let report = evaluate(&scores, &test_labels, None)?;

        let kind_dir = out_dir.join(kind_name);
        ensure_dir(&kind_dir)?;
        outcome.model.save(&kind_dir.join(MODEL_PARAMS_FILE), &kind_dir.join(MODEL_META_FILE))?;
        write_train_log(&kind_dir.join(TRAIN_LOG_FILE), &outcome)?;
        report.write_files(&kind_dir)?;
        for f in [MODEL_PARAMS_FILE, MODEL_META_FILE, TRAIN_LOG_FILE, "report.txt", "report.json"] {
            outputs.push(kind_dir.join(f));
        }
        rows.push(BenchRow { kind: kind_name.to_string(), report });
    }

    // DTW baseline: labeled reference set, optionally subsampled
    let dtw_cfg = DtwConfig {
        k_neighbors: bench.dtw.k_neighbors,
        step_distance: StepDistance::JaccardOnActiveSets,
        window: bench.dtw.window,
    };
    let refs: Vec<(EncodedSession, u8)> = {
        let cap = bench.dtw.train_subsample.unwrap_or(train_enc.len()).min(train_enc.len());
        train_enc[..cap]
            .iter()
            .map(|s| {
                Ok((
                    s.clone(),
                    s.label.ok_or_else(|| Error::InvalidData("unlabeled session".into()))?,
                ))
            })
            .collect::<Result<Vec<_>>>()?
    };
    let scores = dtw_scores(&test_enc, &refs, &dtw_cfg)?;
    let report = evaluate(&scores, &test_labels, None)?;
    let dtw_dir = out_dir.join("dtw_knn");
    ensure_dir(&dtw_dir)?;
    report.write_files(&dtw_dir)?;
    outputs.push(dtw_dir.join("report.txt"));
    outputs.push(dtw_dir.join("report.json"));
    rows.push(BenchRow { kind: "dtw_knn".to_string(), report });

    let table_path = out_dir.join(BENCH_TABLE_FILE);
    std::fs::write(&table_path, bench_table(&rows))
        .map_err(|e| Error::io(table_path.display().to_string(), e))?;
    outputs.push(table_path);
    manifest.write(out_dir, &outputs)?;
    Ok(rows)
}

pub fn cmd_bench(config: &Path, out_dir: &Path, seed: Option<u64>) -> Result<()> {
    run_bench(config, out_dir, seed).map(|_| ())
}
