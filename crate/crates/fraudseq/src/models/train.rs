//! Shared mini-batch Adagrad training loop, scoring, and trained-model
//! persistence.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::encoder::SegmentMap;
use crate::error::{Error, Result};
use crate::events::DatasetSchema;
use crate::metrics;
use crate::models::config::{ModelConfig, ModelKind};
use crate::models::data::ModelData;
use crate::models::net::{
    backward, build_params, forward, fraud_probabilities, BatchInput, ModelDims,
};
use crate::nn::params::{
    adagrad_step, load_params, save_params, AdagradState, ParameterStore,
};
use crate::nn::softmax::softmax_xent;
use crate::tensor::Tensor;

pub const ADAGRAD_EPS: f64 = 1e-8;

/// Hash binding a trained model to the exact schema, one-hot layout, and
/// embedding width it was trained against.
pub fn schema_fingerprint(schema: &DatasetSchema, map: &SegmentMap, emb_dim: usize) -> String {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_string(schema).expect("schema serializes").as_bytes());
    for seg in &map.segments {
        hasher.update(seg.domain.as_bytes());
        hasher.update(seg.start.to_le_bytes());
        hasher.update(seg.end.to_le_bytes());
    }
    hasher.update((emb_dim as u64).to_le_bytes());
    hex::encode(hasher.finalize())
}

/// Owned batch tensors; which fields are populated depends on the kind.
struct BatchTensors {
    steps: Vec<Tensor>,
    fields: Option<Tensor>,
    features: Option<Tensor>,
}

impl BatchTensors {
    fn assemble(kind: ModelKind, data: &ModelData, idx: &[usize]) -> BatchTensors {
        BatchTensors {
            steps: if kind.uses_rnn() { data.steps_batch(idx) } else { Vec::new() },
            fields: kind.uses_cnn().then(|| data.fields_batch(idx)),
            features: (kind == ModelKind::Mlp).then(|| data.features_batch(idx)),
        }
    }

    fn input(&self, kind: ModelKind) -> BatchInput<'_> {
        match kind {
            ModelKind::Rnn => BatchInput::Steps(&self.steps),
            ModelKind::CnnMtf => BatchInput::Fields(self.fields.as_ref().unwrap()),
            ModelKind::Fused => {
                BatchInput::Both(&self.steps, self.fields.as_ref().unwrap())
            }
            ModelKind::Mlp => BatchInput::Features(self.features.as_ref().unwrap()),
        }
    }
}

/// Fraud probabilities for every session in `data`, in order. Batch size
/// only controls memory; predictions are batch-independent.
pub fn score(
    params: &ParameterStore,
    cfg: &ModelConfig,
    data: &ModelData,
    batch_size: usize,
) -> Result<Vec<f64>> {
    assert!(batch_size >= 1);
    let mut out = Vec::with_capacity(data.n);
    let all: Vec<usize> = (0..data.n).collect();
    for chunk in all.chunks(batch_size) {
        let batch = BatchTensors::assemble(cfg.kind, data, chunk);
        let pass = forward(params, cfg, &batch.input(cfg.kind))?;
        out.extend(fraud_probabilities(&pass.logits));
    }
    Ok(out)
}

/// One epoch's worth of the training log.
#[derive(Clone, Debug)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_auc: f64,
    pub valid_ks: f64,
    /// Gradient norm over `lstm*` parameters, summed across batches.
    pub grad_norm_rnn: f64,
    /// Gradient norm over `conv*` parameters, summed across batches.
    pub grad_norm_cnn: f64,
}

pub struct TrainOutcome {
    pub model: TrainedModel,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

/// Mini-batch Adagrad over the softmax cross-entropy loss. Batch order is
/// a seeded shuffle per epoch; the returned parameters are from the epoch
/// with the highest validation AUC (earliest on ties).
pub fn train(
    cfg: &ModelConfig,
    train_data: &ModelData,
    valid_data: &ModelData,
    fingerprint: String,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_labels = train_data.labels_batch(&(0..train_data.n).collect::<Vec<_>>())?;
    if !train_labels.contains(&0) || !train_labels.contains(&1) {
        return Err(Error::SingleClass);
    }
    let valid_labels = valid_data.labels_batch(&(0..valid_data.n).collect::<Vec<_>>())?;

    let dims = ModelDims {
        t_len: train_data.t_len,
        feat_dim: train_data.feat_dim,
        mtf_side: train_data.mtf_side,
    };
    let mut params = build_params(cfg, dims)?;
    let mut opt = AdagradState::new(&params, cfg.lr, ADAGRAD_EPS);
    // distinct stream from the initializer so adding parameters never
    // perturbs the batch order
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);

    let mut indices: Vec<usize> = (0..train_data.n).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParameterStore)> = None;
    for epoch in 1..=cfg.epochs {
        indices.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut norm_rnn = 0.0;
        let mut norm_cnn = 0.0;
        for chunk in indices.chunks(cfg.batch_size) {
            let batch = BatchTensors::assemble(cfg.kind, train_data, chunk);
            let labels = train_data.labels_batch(chunk)?;
            let pass = forward(&params, cfg, &batch.input(cfg.kind))?;
            let out = softmax_xent(&pass.logits, &labels, cfg.pos_weight);
            if !out.loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            let grads = backward(&params, cfg, &pass, &out.grad_logits)?;
            norm_rnn += grads.norm_with_prefix("lstm");
            norm_cnn += grads.norm_with_prefix("conv");
            adagrad_step(&mut params, &grads, &mut opt)?;
            loss_sum += out.loss * chunk.len() as f64;
        }
        let train_loss = loss_sum / train_data.n as f64;
        let valid_scores = score(&params, cfg, valid_data, cfg.batch_size)?;
        if valid_scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
        let valid_auc = metrics::auc(&valid_scores, &valid_labels)?;
        let valid_ks = metrics::ks(&valid_scores, &valid_labels)?;
        log.push(EpochLog {
            epoch,
            train_loss,
            valid_auc,
            valid_ks,
            grad_norm_rnn: norm_rnn,
            grad_norm_cnn: norm_cnn,
        });
        if best.as_ref().is_none_or(|(auc, _, _)| valid_auc > *auc) {
            best = Some((valid_auc, epoch, params.clone()));
        }
    }
    let (_, best_epoch, best_params) = best.expect("epochs >= 1");
    Ok(TrainOutcome {
        model: TrainedModel {
            config: cfg.clone(),
            params: best_params,
            fingerprint,
        },
        log,
        best_epoch,
    })
}

/// A trained model: parameters plus the config and schema fingerprint
/// needed to score safely later.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub params: ParameterStore,
    pub fingerprint: String,
}

const META_VERSION: u32 = 1;

impl TrainedModel {
    /// Persist as the parameter binary plus a text sidecar holding the
    /// config and fingerprint.
    pub fn save(&self, params_path: &Path, meta_path: &Path) -> Result<()> {
        save_params(&self.params, params_path)?;
        let mut meta = format!("meta_version={META_VERSION}\nfingerprint={}\n", self.fingerprint);
        meta.push_str(&self.config.to_text());
        std::fs::write(meta_path, meta).map_err(|e| Error::io(meta_path.display().to_string(), e))
    }

    pub fn load(params_path: &Path, meta_path: &Path) -> Result<TrainedModel> {
        let params = load_params(params_path)?;
        let text = std::fs::read_to_string(meta_path)
            .map_err(|_| Error::FileNotFound(meta_path.display().to_string()))?;
        let corrupt = |reason: &str| Error::CorruptFile {
            path: meta_path.display().to_string(),
            reason: reason.to_string(),
        };
        let mut fingerprint = None;
        let mut config_lines = String::new();
        for line in text.lines() {
            if let Some(v) = line.strip_prefix("meta_version=") {
                if v.trim() != META_VERSION.to_string() {
                    return Err(corrupt(&format!("unsupported meta version {v}")));
                }
            } else if let Some(v) = line.strip_prefix("fingerprint=") {
                fingerprint = Some(v.trim().to_string());
            } else {
                config_lines.push_str(line);
                config_lines.push('\n');
            }
        }
        let fingerprint = fingerprint.ok_or_else(|| corrupt("missing fingerprint"))?;
        let config = ModelConfig::parse(&config_lines)?;
        Ok(TrainedModel { config, params, fingerprint })
    }

    /// Score sessions, refusing to run against a different schema /
    /// embedding version than the model was trained on.
    pub fn score(&self, data: &ModelData, expected_fingerprint: &str) -> Result<Vec<f64>> {
        if self.fingerprint != expected_fingerprint {
            return Err(Error::FingerprintMismatch);
        }
        score(&self.params, &self.config, data, self.config.batch_size)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{EncodedEvent, EncodedSession, Segment, SegmentMap};
    use crate::models::config::ConvBlockSpec;
    use crate::nn::params::Gradients;
    use rand::{Rng, SeedableRng};

    fn toy_map(l: usize) -> SegmentMap {
        SegmentMap {
            segments: vec![Segment { domain: "a".into(), start: 0, end: l }],
            total_width: l,
        }
    }

    fn session_of(indices: &[usize], label: u8) -> EncodedSession {
        EncodedSession {
            events: indices.iter().map(|&i| EncodedEvent { active: vec![i] }).collect(),
            item_ids: vec![None; indices.len()],
            label: Some(label),
        }
    }

    fn random_sessions(n: usize, t: usize, l: usize, seed: u64) -> Vec<EncodedSession> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let idx: Vec<usize> = (0..t).map(|_| rng.random_range(1..l)).collect();
                session_of(&idx, (i % 2) as u8)
            })
            .collect()
    }

    /// Class 0 dwells on index 1, class 1 on index 2: linearly separable
    /// through the mean one-hot features.
    fn separable_sessions(n: usize, t: usize) -> Vec<EncodedSession> {
        (0..n)
            .map(|i| {
                let label = (i % 2) as u8;
                let idx = vec![1 + label as usize; t];
                session_of(&idx, label)
            })
            .collect()
    }

    fn tiny_config(kind: ModelKind, epochs: usize) -> ModelConfig {
        let mut cfg = ModelConfig::defaults(kind);
        cfg.lstm_layers = vec![4];
        cfg.conv_spec = vec![ConvBlockSpec { filters: 2, kernel: 2, stride: 1, pool: 1 }];
        cfg.dense_spec = vec![4];
        cfg.fuse_spec = vec![4];
        cfg.epochs = epochs;
        cfg.batch_size = 64;
        cfg.lr = 0.1;
        cfg.seed = 5;
        cfg
    }

    #[test]
    fn single_class_training_set_is_an_error() {
        let map = toy_map(4);
        let mut sessions = random_sessions(6, 3, 4, 1);
        for s in &mut sessions {
            s.label = Some(0);
        }
        let data = ModelData::prepare(&sessions, &map, None, ModelKind::Mlp).unwrap();
        let cfg = tiny_config(ModelKind::Mlp, 1);
        match train(&cfg, &data, &data, "fp".into()) {
            Err(Error::SingleClass) => {}
            other => panic!("unexpected {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn one_epoch_full_batch_equals_one_adagrad_step() {
        let map = toy_map(5);
        let sessions = random_sessions(6, 4, 5, 2);
        let data = ModelData::prepare(&sessions, &map, None, ModelKind::Mlp).unwrap();
        let cfg = tiny_config(ModelKind::Mlp, 1);
        let outcome = train(&cfg, &data, &data, "fp".into()).unwrap();

        // manual: same init, one full-batch gradient, one adagrad step;
        // the full batch makes the shuffle irrelevant up to float ordering
        let dims = ModelDims { t_len: data.t_len, feat_dim: data.feat_dim, mtf_side: data.mtf_side };
        let mut params = build_params(&cfg, dims).unwrap();
        let idx: Vec<usize> = (0..data.n).collect();
        let feats = data.features_batch(&idx);
        let labels = data.labels_batch(&idx).unwrap();
        let pass = forward(&params, &cfg, &BatchInput::Features(&feats)).unwrap();
        let out = softmax_xent(&pass.logits, &labels, cfg.pos_weight);
        let grads = backward(&params, &cfg, &pass, &out.grad_logits).unwrap();
        let mut opt = AdagradState::new(&params, cfg.lr, ADAGRAD_EPS);
        adagrad_step(&mut params, &grads, &mut opt).unwrap();

        for (name, manual) in params.iter() {
            let trained = outcome.model.params.get(name);
            for (a, b) in manual.data().iter().zip(trained.data()) {
                assert!((a - b).abs() < 1e-9, "{name}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn separable_toy_set_converges_below_ln2() {
        let map = toy_map(4);
        let sessions = separable_sessions(8, 4);
        let data = ModelData::prepare(&sessions, &map, None, ModelKind::Mlp).unwrap();
        let mut cfg = tiny_config(ModelKind::Mlp, 50);
        cfg.lr = 0.3;
        let outcome = train(&cfg, &data, &data, "fp".into()).unwrap();
        let final_loss = outcome.log.last().unwrap().train_loss;
        assert!(final_loss < 2.0f64.ln(), "loss stuck at {final_loss}");
    }

    #[test]
    fn best_epoch_has_the_highest_validation_auc() {
        let map = toy_map(5);
        let sessions = random_sessions(10, 4, 5, 3);
        let data = ModelData::prepare(&sessions, &map, None, ModelKind::Mlp).unwrap();
        let cfg = tiny_config(ModelKind::Mlp, 8);
        let outcome = train(&cfg, &data, &data, "fp".into()).unwrap();
        let best_logged = outcome
            .log
            .iter()
            .map(|e| e.valid_auc)
            .fold(f64::NEG_INFINITY, f64::max);
        let labels = data.labels_batch(&(0..data.n).collect::<Vec<_>>()).unwrap();
        let scores = outcome.model.score(&data, "fp").unwrap();
        let model_auc = metrics::auc(&scores, &labels).unwrap();
        assert!(model_auc >= best_logged - 1e-12);
        let logged_at_best = outcome.log[outcome.best_epoch - 1].valid_auc;
        assert!((logged_at_best - best_logged).abs() < 1e-15);
    }

    #[test]
    fn fused_training_moves_both_branches() {
        let map = toy_map(5);
        let sessions = random_sessions(8, 4, 5, 4);
        let data = ModelData::prepare(&sessions, &map, None, ModelKind::Fused).unwrap();
        let cfg = tiny_config(ModelKind::Fused, 2);
        let outcome = train(&cfg, &data, &data, "fp".into()).unwrap();
        for entry in &outcome.log {
            assert!(entry.grad_norm_rnn > 0.0);
            assert!(entry.grad_norm_cnn > 0.0);
        }
    }

    #[test]
    fn same_seed_gives_bit_identical_model_files() {
        let map = toy_map(5);
        let sessions = random_sessions(8, 4, 5, 6);
        let data = ModelData::prepare(&sessions, &map, None, ModelKind::Rnn).unwrap();
        let cfg = tiny_config(ModelKind::Rnn, 2);
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = Vec::new();
        for run in 0..2 {
            let outcome = train(&cfg, &data, &data, "fp".into()).unwrap();
            let p = dir.path().join(format!("model{run}.bin"));
            let m = dir.path().join(format!("model{run}.meta"));
            outcome.model.save(&p, &m).unwrap();
            bytes.push((std::fs::read(&p).unwrap(), std::fs::read(&m).unwrap()));
        }
        assert_eq!(bytes[0], bytes[1]);
    }

    #[test]
    fn trained_model_roundtrips_and_checks_fingerprint() {
        let map = toy_map(5);
        let sessions = random_sessions(6, 4, 5, 7);
        let data = ModelData::prepare(&sessions, &map, None, ModelKind::Mlp).unwrap();
        let cfg = tiny_config(ModelKind::Mlp, 1);
        let outcome = train(&cfg, &data, &data, "expected".into()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.bin");
        let m = dir.path().join("model.meta");
        outcome.model.save(&p, &m).unwrap();
        let loaded = TrainedModel::load(&p, &m).unwrap();
        assert_eq!(loaded, outcome.model);
        assert!(loaded.score(&data, "expected").is_ok());
        match loaded.score(&data, "other") {
            Err(Error::FingerprintMismatch) => {}
            other => panic!("unexpected {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn runaway_learning_rate_reports_divergence() {
        let map = toy_map(4);
        // identical features with conflicting labels: once the step size
        // blows the logits up, one of the two rows must have +inf loss
        let sessions = vec![session_of(&[1, 1, 1], 0), session_of(&[1, 1, 1], 1)];
        let data = ModelData::prepare(&sessions, &map, None, ModelKind::Mlp).unwrap();
        let mut cfg = tiny_config(ModelKind::Mlp, 10);
        cfg.lr = 1e308;
        match train(&cfg, &data, &data, "fp".into()) {
            Err(Error::Diverged { epoch }) => assert!(epoch >= 1),
            other => panic!("unexpected {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn fingerprint_binds_schema_and_embedding_width() {
        let schema = crate::events::test_schema();
        let map = crate::encoder::build_segment_map(&schema);
        let a = schema_fingerprint(&schema, &map, 0);
        let b = schema_fingerprint(&schema, &map, 32);
        assert_ne!(a, b);
        assert_eq!(a, schema_fingerprint(&schema, &map, 0));
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn gradients_cover_every_parameter() {
        // backward refuses to return a partial gradient set
        let map = toy_map(5);
        let sessions = random_sessions(4, 4, 5, 8);
        let data = ModelData::prepare(&sessions, &map, None, ModelKind::Rnn).unwrap();
        let cfg = tiny_config(ModelKind::Rnn, 1);
        let dims = ModelDims { t_len: data.t_len, feat_dim: data.feat_dim, mtf_side: data.mtf_side };
        let params = build_params(&cfg, dims).unwrap();
        let idx: Vec<usize> = (0..data.n).collect();
        let steps = data.steps_batch(&idx);
        let labels = data.labels_batch(&idx).unwrap();
        let pass = forward(&params, &cfg, &BatchInput::Steps(&steps)).unwrap();
        let out = softmax_xent(&pass.logits, &labels, 1.0);
        let grads: Gradients = backward(&params, &cfg, &pass, &out.grad_logits).unwrap();
        for name in params.names() {
            assert!(grads.get(name).is_some(), "missing {name}");
        }
    }
}
