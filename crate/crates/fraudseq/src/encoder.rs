//! Sparse one-hot encoding of events and skip-gram item embeddings.
//!
//! Every domain owns a contiguous half-open index range [a,b) inside a
//! global layout of width `l`. An event activates exactly one index per
//! domain (k active indices total). Item tokens are embedded separately
//! with skip-gram negative sampling, one sentence per session.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::events::{DatasetSchema, Event, Session};
use crate::tensor::Tensor;

/// Index range [start, end) reserved for one domain.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub domain: String,
    pub start: usize,
    pub end: usize,
}

/// Contiguous per-domain layout over the global one-hot index space [0, l).
///
/// Each segment holds the domain's extended vocabulary: pad at offset 0,
/// then the declared values, then OOV at the last offset.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentMap {
    pub segments: Vec<Segment>,
    pub total_width: usize,
}

impl SegmentMap {
    pub fn segment(&self, domain: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.domain == domain)
    }

    /// Segment index containing a global index, if any.
    pub fn segment_of(&self, index: usize) -> Option<usize> {
        self.segments.iter().position(|s| index >= s.start && index < s.end)
    }

    /// Global indices of the pad value, one per domain.
    pub fn pad_indices(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.start).collect()
    }
}

/// The k active global indices of one event, in schema domain order.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedEvent {
    pub active: Vec<usize>,
}

/// A fixed-length encoded session, with item tokens retained for the
/// optional embedding lookup in [`densify`].
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSession {
    pub events: Vec<EncodedEvent>,
    pub item_ids: Vec<Option<String>>,
    pub label: Option<u8>,
}

/// Lay out domain segments in schema order. Width of each segment is the
/// domain's vocabulary size plus pad and OOV slots.
pub fn build_segment_map(schema: &DatasetSchema) -> SegmentMap {
    let mut segments = Vec::with_capacity(schema.domains.len());
    let mut cursor = 0;
    for d in &schema.domains {
        let width = d.vocab.len() + 2;
        segments.push(Segment {
            domain: d.name.clone(),
            start: cursor,
            end: cursor + width,
        });
        cursor += width;
    }
    SegmentMap { segments, total_width: cursor }
}

/// Active index for one event: per domain, pad maps to offset 0, declared
/// values to 1 + vocabulary position, anything else to the OOV slot.
pub fn encode_event(e: &Event, map: &SegmentMap, schema: &DatasetSchema) -> EncodedEvent {
    let mut active = Vec::with_capacity(schema.domains.len());
    for (d, seg) in schema.domains.iter().zip(&map.segments) {
        let value = e.value(&d.name).expect("event validated against schema");
        let offset = if value == schema.pad_token {
            0
        } else if let Some(pos) = d.vocab.iter().position(|v| v == value) {
            1 + pos
        } else {
            seg.end - seg.start - 1
        };
        active.push(seg.start + offset);
    }
    EncodedEvent { active }
}

pub fn encode_session(s: &Session, map: &SegmentMap, schema: &DatasetSchema) -> EncodedSession {
    EncodedSession {
        events: s.events.iter().map(|e| encode_event(e, map, schema)).collect(),
        item_ids: s.events.iter().map(|e| e.item_id.clone()).collect(),
        label: s.label,
    }
}

/// Skip-gram hyperparameters. Only the output dimension comes from the
/// reference configuration (32); the rest are ordinary word2vec defaults.
#[derive(Clone, Debug)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: 32,
            window: 5,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            seed: 1,
        }
    }
}

/// Item-token embedding table. Lookup of an unseen token yields zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub vectors: IndexMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn lookup(&self, token: &str) -> Vec<f64> {
        self.vectors
            .get(token)
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.dim])
    }

    pub fn cosine(&self, a: &str, b: &str) -> f64 {
        let va = self.lookup(a);
        let vb = self.lookup(b);
        let dot: f64 = va.iter().zip(&vb).map(|(x, y)| x * y).sum();
        let na: f64 = va.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = vb.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Train skip-gram item embeddings with negative sampling, treating each
/// session's item-view events as one sentence. Deterministic given the seed.
pub fn train_item_embeddings(corpus: &[Session], cfg: &SkipGramConfig) -> Result<EmbeddingTable> {
    assert!(cfg.dim >= 1 && cfg.window >= 1);
    let sentences: Vec<Vec<&str>> = corpus
        .iter()
        .map(|s| {
            s.events
                .iter()
                .filter_map(|e| e.item_id.as_deref())
                .collect::<Vec<_>>()
        })
        .filter(|s| !s.is_empty())
        .collect();
    if sentences.is_empty() {
        return Err(Error::NoItemTokens);
    }

    // vocabulary in first-occurrence order, with unigram counts
    let mut vocab: IndexMap<&str, u64> = IndexMap::new();
    for sent in &sentences {
        for &tok in sent {
            *vocab.entry(tok).or_insert(0) += 1;
        }
    }
    let index_of: HashMap<&str, usize> =
        vocab.keys().enumerate().map(|(i, &t)| (t, i)).collect();
    let n_vocab = vocab.len();

    // unigram^0.75 cumulative table for negative sampling
    let weights: Vec<f64> = vocab.values().map(|&c| (c as f64).powf(0.75)).collect();
    let total: f64 = weights.iter().sum();
    let mut cumulative = Vec::with_capacity(n_vocab);
    let mut acc = 0.0;
    for w in &weights {
        acc += w / total;
        cumulative.push(acc);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut input: Vec<Vec<f64>> = (0..n_vocab)
        .map(|_| {
            (0..cfg.dim)
                .map(|_| (rng.random::<f64>() - 0.5) / cfg.dim as f64)
                .collect()
        })
        .collect();
    let mut output: Vec<Vec<f64>> = vec![vec![0.0; cfg.dim]; n_vocab];

    let draw_negative = |rng: &mut ChaCha8Rng| -> usize {
        let u: f64 = rng.random();
        cumulative.partition_point(|&c| c < u).min(n_vocab - 1)
    };

    for _ in 0..cfg.epochs {
        for sent in &sentences {
            let ids: Vec<usize> = sent.iter().map(|t| index_of[t]).collect();
            for (pos, &center) in ids.iter().enumerate() {
                let lo = pos.saturating_sub(cfg.window);
                let hi = (pos + cfg.window + 1).min(ids.len());
                for ctx_pos in lo..hi {
                    if ctx_pos == pos {
                        continue;
                    }
                    let context = ids[ctx_pos];
                    let mut grad_center = vec![0.0; cfg.dim];
                    // positive pair, then `negatives` sampled negatives
                    for sample in 0..=cfg.negatives {
                        let (target, label) = if sample == 0 {
                            (context, 1.0)
                        } else {
                            (draw_negative(&mut rng), 0.0)
                        };
                        if sample > 0 && target == context {
                            continue;
                        }
                        let dot: f64 = input[center]
                            .iter()
                            .zip(&output[target])
                            .map(|(a, b)| a * b)
                            .sum();
                        let g = cfg.learning_rate * (label - sigmoid(dot));
                        for d in 0..cfg.dim {
                            grad_center[d] += g * output[target][d];
                            output[target][d] += g * input[center][d];
                        }
                    }
                    for d in 0..cfg.dim {
                        input[center][d] += grad_center[d];
                    }
                }
            }
        }
    }

    let mut vectors = IndexMap::new();
    for (i, (&tok, _)) in vocab.iter().enumerate() {
        vectors.insert(tok.to_string(), input[i].clone());
    }
    Ok(EmbeddingTable { dim: cfg.dim, vectors })
}

/// Expand an encoded session to a dense T x D matrix: the one-hot expansion
/// of the active indices, followed by the event's item embedding (zeros when
/// the event has no item or no table is supplied).
pub fn densify(s: &EncodedSession, map: &SegmentMap, emb: Option<&EmbeddingTable>) -> Tensor {
    let l = map.total_width;
    let d_emb = emb.map_or(0, |e| e.dim);
    let width = l + d_emb;
    let t_len = s.events.len();
    let mut out = Tensor::zeros(&[t_len, width]);
    for (t, ev) in s.events.iter().enumerate() {
        let row = out.row_mut(t);
        for &idx in &ev.active {
            row[idx] = 1.0;
        }
        if let Some(table) = emb {
            if let Some(item) = &s.item_ids[t] {
                let vec = table.lookup(item);
                row[l..].copy_from_slice(&vec);
            }
        }
    }
    out
}

const EMBEDDING_MAGIC: &[u8; 4] = b"FSEB";
const EMBEDDING_VERSION: u32 = 1;

/// Serialize to the versioned flat binary format: magic, version, dim,
/// item count, then per item a length-prefixed token and little-endian
/// 64-bit floats.
pub fn save_embeddings(table: &EmbeddingTable, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = BufWriter::new(file);
    let io_err = |e| Error::io(path.display().to_string(), e);
    out.write_all(EMBEDDING_MAGIC).map_err(io_err)?;
    out.write_all(&EMBEDDING_VERSION.to_le_bytes()).map_err(io_err)?;
    out.write_all(&(table.dim as u32).to_le_bytes()).map_err(io_err)?;
    out.write_all(&(table.vectors.len() as u64).to_le_bytes()).map_err(io_err)?;
    for (token, vec) in &table.vectors {
        out.write_all(&(token.len() as u32).to_le_bytes()).map_err(io_err)?;
        out.write_all(token.as_bytes()).map_err(io_err)?;
        for v in vec {
            out.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    out.flush().map_err(io_err)
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut input = BufReader::new(file);
    let corrupt = |reason: &str| Error::CorruptFile {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(|_| corrupt("truncated header"))?;
    if &magic != EMBEDDING_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let mut u32buf = [0u8; 4];
    input.read_exact(&mut u32buf).map_err(|_| corrupt("truncated header"))?;
    let version = u32::from_le_bytes(u32buf);
    if version != EMBEDDING_VERSION {
        return Err(corrupt(&format!("unsupported version {version}")));
    }
    input.read_exact(&mut u32buf).map_err(|_| corrupt("truncated header"))?;
    let dim = u32::from_le_bytes(u32buf) as usize;
    let mut u64buf = [0u8; 8];
    input.read_exact(&mut u64buf).map_err(|_| corrupt("truncated header"))?;
    let count = u64::from_le_bytes(u64buf) as usize;
    let mut vectors = IndexMap::with_capacity(count);
    for _ in 0..count {
        input.read_exact(&mut u32buf).map_err(|_| corrupt("truncated entry"))?;
        let token_len = u32::from_le_bytes(u32buf) as usize;
        let mut token = vec![0u8; token_len];
        input.read_exact(&mut token).map_err(|_| corrupt("truncated token"))?;
        let token = String::from_utf8(token).map_err(|_| corrupt("token is not UTF-8"))?;
        let mut vec = Vec::with_capacity(dim);
        for _ in 0..dim {
            input.read_exact(&mut u64buf).map_err(|_| corrupt("truncated vector"))?;
            vec.push(f64::from_le_bytes(u64buf));
        }
        vectors.insert(token, vec);
    }
    Ok(EmbeddingTable { dim, vectors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{test_schema, DomainSpec, DEFAULT_OOV_TOKEN, DEFAULT_PAD_TOKEN};

    fn schema_with(domains: Vec<DomainSpec>) -> DatasetSchema {
        DatasetSchema {
            domains,
            sequence_length: 4,
            pad_token: DEFAULT_PAD_TOKEN.into(),
            oov_token: DEFAULT_OOV_TOKEN.into(),
        }
    }

    fn event(schema: &DatasetSchema, values: &[&str]) -> Event {
        Event {
            index: 1,
            features: schema
                .domains
                .iter()
                .zip(values)
                .map(|(d, v)| (d.name.clone(), v.to_string()))
                .collect(),
            item_id: None,
            numeric: Vec::new(),
        }
    }

    #[test]
    fn single_domain_layout() {
        let schema = schema_with(vec![DomainSpec {
            name: "d".into(),
            vocab: vec!["a".into(), "b".into(), "c".into()],
            bin_edges: None,
        }]);
        let map = build_segment_map(&schema);
        assert_eq!(map.total_width, 5);
        assert_eq!(map.segments[0].start, 0);
        assert_eq!(map.segments[0].end, 5);
    }

    #[test]
    fn two_domain_layout_is_contiguous() {
        let schema = schema_with(vec![
            DomainSpec { name: "d1".into(), vocab: vec!["a".into(), "b".into(), "c".into()], bin_edges: None },
            DomainSpec { name: "d2".into(), vocab: vec!["x".into(), "y".into()], bin_edges: None },
        ]);
        let map = build_segment_map(&schema);
        assert_eq!(map.total_width, 9);
        assert_eq!((map.segments[0].start, map.segments[0].end), (0, 5));
        assert_eq!((map.segments[1].start, map.segments[1].end), (5, 9));
    }

    #[test]
    fn encode_uses_layout_rule() {
        let schema = schema_with(vec![DomainSpec {
            name: "d".into(),
            vocab: vec!["A".into(), "B".into(), "C".into()],
            bin_edges: None,
        }]);
        let map = build_segment_map(&schema);
        let e = encode_event(&event(&schema, &["B"]), &map, &schema);
        assert_eq!(e.active, vec![2]); // pad=0, A=1, B=2
        let pad = encode_event(&event(&schema, &[DEFAULT_PAD_TOKEN]), &map, &schema);
        assert_eq!(pad.active, vec![0]);
        let oov = encode_event(&event(&schema, &["Z"]), &map, &schema);
        assert_eq!(oov.active, vec![4]);
    }

    #[test]
    fn random_events_stay_inside_their_segments() {
        let schema = test_schema();
        let map = build_segment_map(&schema);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let values: Vec<String> = schema
                .domains
                .iter()
                .map(|d| {
                    let pick = rng.random_range(0..d.vocab.len() + 2);
                    match pick {
                        0 => schema.pad_token.clone(),
                        p if p <= d.vocab.len() => d.vocab[p - 1].clone(),
                        _ => "totally-unknown".to_string(),
                    }
                })
                .collect();
            let refs: Vec<&str> = values.iter().map(String::as_str).collect();
            let enc = encode_event(&event(&schema, &refs), &map, &schema);
            assert_eq!(enc.active.len(), schema.domain_count());
            for (i, &idx) in enc.active.iter().enumerate() {
                assert!(idx >= map.segments[i].start && idx < map.segments[i].end);
            }
        }
    }

    #[test]
    fn encoding_is_injective_per_domain() {
        let schema = test_schema();
        let map = build_segment_map(&schema);
        let a = encode_event(&event(&schema, &["home", "view", "short"]), &map, &schema);
        let b = encode_event(&event(&schema, &["home", "click", "short"]), &map, &schema);
        assert_ne!(a.active, b.active);
    }

    #[test]
    fn densify_roundtrips_active_indices() {
        let schema = test_schema();
        let map = build_segment_map(&schema);
        let s = EncodedSession {
            events: vec![
                EncodedEvent { active: vec![1, 6, 10] },
                EncodedEvent { active: vec![0, 5, 9] },
            ],
            item_ids: vec![None, None],
            label: None,
        };
        let dense = densify(&s, &map, None);
        assert_eq!(dense.shape(), &[2, map.total_width]);
        for (t, ev) in s.events.iter().enumerate() {
            let row = dense.row(t);
            assert_eq!(row.iter().sum::<f64>(), ev.active.len() as f64);
            let recovered: Vec<usize> = row
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(i, _)| i)
                .collect();
            assert_eq!(recovered, ev.active);
        }
    }

    #[test]
    fn densify_places_ones_exactly() {
        let map = SegmentMap {
            segments: vec![
                Segment { domain: "a".into(), start: 0, end: 5 },
                Segment { domain: "b".into(), start: 5, end: 9 },
            ],
            total_width: 9,
        };
        let s = EncodedSession {
            events: vec![EncodedEvent { active: vec![0, 5] }],
            item_ids: vec![None],
            label: None,
        };
        let dense = densify(&s, &map, None);
        let expected = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        assert_eq!(dense.row(0), &expected);
    }

    fn item_session(id: &str, items: &[&str]) -> Session {
        let schema = test_schema();
        Session {
            session_id: id.into(),
            events: items
                .iter()
                .enumerate()
                .map(|(i, it)| Event {
                    index: i + 1,
                    features: schema
                        .domains
                        .iter()
                        .map(|d| (d.name.clone(), d.vocab[0].clone()))
                        .collect(),
                    item_id: Some(it.to_string()),
                    numeric: Vec::new(),
                })
                .collect(),
            label: None,
        }
    }

    #[test]
    fn embedding_dim_and_unseen_lookup() {
        let corpus = vec![item_session("s1", &["a", "b", "a", "b"])];
        let cfg = SkipGramConfig { dim: 32, epochs: 1, ..Default::default() };
        let table = train_item_embeddings(&corpus, &cfg).unwrap();
        assert!(table.vectors.values().all(|v| v.len() == 32));
        assert_eq!(table.lookup("never-seen"), vec![0.0; 32]);
    }

    #[test]
    fn no_item_tokens_is_an_error() {
        let schema = test_schema();
        let corpus = vec![Session {
            session_id: "s".into(),
            events: vec![Event {
                index: 1,
                features: schema
                    .domains
                    .iter()
                    .map(|d| (d.name.clone(), d.vocab[0].clone()))
                    .collect(),
                item_id: None,
                numeric: Vec::new(),
            }],
            label: None,
        }];
        assert!(matches!(
            train_item_embeddings(&corpus, &SkipGramConfig::default()),
            Err(Error::NoItemTokens)
        ));
    }

    #[test]
    fn planted_cooccurrence_beats_disjoint_items() {
        // X and Y always co-occur within the window; Z lives in other sessions.
        let mut corpus = Vec::new();
        for i in 0..30 {
            corpus.push(item_session(&format!("xy{i}"), &["X", "Y", "X", "Y", "X", "Y"]));
            corpus.push(item_session(&format!("z{i}"), &["Z", "W", "Z", "W", "Z", "W"]));
        }
        let cfg = SkipGramConfig { dim: 16, epochs: 10, seed: 3, ..Default::default() };
        let table = train_item_embeddings(&corpus, &cfg).unwrap();
        assert!(table.cosine("X", "Y") > table.cosine("X", "Z"));
    }

    #[test]
    fn embedding_training_is_deterministic() {
        let corpus = vec![
            item_session("a", &["p", "q", "r", "p", "q"]),
            item_session("b", &["r", "q", "p"]),
        ];
        let cfg = SkipGramConfig { dim: 8, epochs: 3, seed: 11, ..Default::default() };
        let t1 = train_item_embeddings(&corpus, &cfg).unwrap();
        let t2 = train_item_embeddings(&corpus, &cfg).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn embedding_file_roundtrip() {
        let corpus = vec![item_session("a", &["p", "q", "r"])];
        let cfg = SkipGramConfig { dim: 4, epochs: 1, ..Default::default() };
        let table = train_item_embeddings(&corpus, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.bin");
        save_embeddings(&table, &path).unwrap();
        assert_eq!(load_embeddings(&path).unwrap(), table);
    }
}
