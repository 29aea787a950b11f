//! Labeled synthetic session generator.
//!
//! The fraud signal is planted in the *transition structure* of a latent
//! page-type Markov chain, one chain per class, while marginal frequencies
//! (page visit rates, action mix, durations) are shared across classes.
//! Order-aware models can therefore separate the classes while order-free
//! aggregation cannot, and every comparison stays reproducible from the
//! seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{DatasetSchema, DomainSpec, Event, Session, DEFAULT_OOV_TOKEN, DEFAULT_PAD_TOKEN};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_sessions: usize,
    /// Bernoulli probability that a session is fraudulent, in (0,1).
    pub fraud_rate: f64,
    /// Target sequence length T declared in the emitted schema.
    pub sequence_length: usize,
    /// Raw generated lengths drawn uniformly from this inclusive range;
    /// ingestion pads/truncates to `sequence_length`. Omitted = always T.
    #[serde(default)]
    pub length_range: Option<(usize, usize)>,
    pub page_types: Vec<String>,
    /// Row-stochastic page-transition matrix for legitimate sessions.
    pub legit_transitions: Vec<Vec<f64>>,
    /// Row-stochastic page-transition matrix for fraudulent sessions.
    pub fraud_transitions: Vec<Vec<f64>>,
    pub action_types: Vec<String>,
    /// Per-page action distribution, shared by both classes.
    pub action_given_page: Vec<Vec<f64>>,
    /// Per-page mean of the exponential duration draw, shared by classes.
    pub duration_means: Vec<f64>,
    pub duration_bin_edges: Vec<f64>,
    pub duration_bin_labels: Vec<String>,
    /// Size of each page's item pool; 0 disables item ids entirely.
    #[serde(default)]
    pub items_per_page: usize,
    /// Probability that a recorded page/action value is replaced by a
    /// uniform random one, in [0,1).
    pub noise_rate: f64,
    pub seed: u64,
}

fn check_stochastic(name: &str, matrix: &[Vec<f64>], dim: usize, cols: usize) -> Result<()> {
    if matrix.len() != dim {
        return Err(Error::InvalidData(format!(
            "{name}: {} rows, expected {dim}",
            matrix.len()
        )));
    }
    for (i, row) in matrix.iter().enumerate() {
        if row.len() != cols {
            return Err(Error::InvalidData(format!(
                "{name} row {i}: {} entries, expected {cols}",
                row.len()
            )));
        }
        if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::InvalidData(format!("{name} row {i} has entries outside [0,1]")));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidData(format!(
                "{name} row {i} sums to {sum}, not 1"
            )));
        }
    }
    Ok(())
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sessions == 0 {
            return Err(Error::InvalidData("n_sessions must be positive".into()));
        }
        if !(self.fraud_rate > 0.0 && self.fraud_rate < 1.0) {
            return Err(Error::InvalidData("fraud_rate must lie in (0,1)".into()));
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return Err(Error::InvalidData("noise_rate must lie in [0,1)".into()));
        }
        if self.sequence_length == 0 {
            return Err(Error::InvalidData("sequence_length must be positive".into()));
        }
        if let Some((lo, hi)) = self.length_range {
            if lo == 0 || lo > hi {
                return Err(Error::InvalidData("length_range must satisfy 1 <= lo <= hi".into()));
            }
        }
        let m = self.page_types.len();
        if m == 0 {
            return Err(Error::InvalidData("page_types is empty".into()));
        }
        check_stochastic("legit_transitions", &self.legit_transitions, m, m)?;
        check_stochastic("fraud_transitions", &self.fraud_transitions, m, m)?;
        check_stochastic(
            "action_given_page",
            &self.action_given_page,
            m,
            self.action_types.len(),
        )?;
        if self.duration_means.len() != m {
            return Err(Error::InvalidData("duration_means length must match page_types".into()));
        }
        if self.duration_bin_labels.len() != self.duration_bin_edges.len() + 1 {
            return Err(Error::InvalidData(
                "duration_bin_labels must have one more entry than duration_bin_edges".into(),
            ));
        }
        Ok(())
    }

    /// Schema matching the datasets this generator writes.
    pub fn schema(&self) -> DatasetSchema {
        DatasetSchema {
            domains: vec![
                DomainSpec {
                    name: "page_type".into(),
                    vocab: self.page_types.clone(),
                    bin_edges: None,
                },
                DomainSpec {
                    name: "action_type".into(),
                    vocab: self.action_types.clone(),
                    bin_edges: None,
                },
                DomainSpec {
                    name: "duration".into(),
                    vocab: self.duration_bin_labels.clone(),
                    bin_edges: Some(self.duration_bin_edges.clone()),
                },
            ],
            sequence_length: self.sequence_length,
            pad_token: DEFAULT_PAD_TOKEN.into(),
            oov_token: DEFAULT_OOV_TOKEN.into(),
        }
    }

    pub fn load(path: &std::path::Path) -> Result<SynthConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|_| Error::FileNotFound(path.display().to_string()))?;
        let cfg: SynthConfig = serde_json::from_str(&text).map_err(|e| Error::CorruptFile {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Benchmark-style configuration: legitimate traffic walks a page cycle
    /// forward, fraud walks it backward, with identical stationary
    /// distributions. `separated=false` gives both classes the same chain
    /// (the null-signal control).
    pub fn planted_cycles(
        n_sessions: usize,
        fraud_rate: f64,
        sequence_length: usize,
        noise_rate: f64,
        separated: bool,
        seed: u64,
    ) -> SynthConfig {
        let pages = ["home", "search", "item", "cart", "checkout", "profile"];
        let m = pages.len();
        let cycle = |offset: i64| -> Vec<Vec<f64>> {
            (0..m)
                .map(|p| {
                    let mut row = vec![0.05 / (m - 2) as f64; m];
                    let target = ((p as i64 + offset).rem_euclid(m as i64)) as usize;
                    row[target] = 0.0;
                    row[p] = 0.0;
                    let spread: f64 = row.iter().sum();
                    row[target] = 0.75;
                    row[p] = 1.0 - 0.75 - spread;
                    row
                })
                .collect()
        };
        let legit = cycle(1);
        let fraud = if separated { cycle(-1) } else { cycle(1) };
        let actions = ["view", "click", "submit", "back"];
        // action mix depends only on the page, identically for both classes
        let action_given_page = (0..m)
            .map(|p| {
                let mut row = vec![0.1; actions.len()];
                row[p % actions.len()] = 0.7;
                row
            })
            .collect();
        SynthConfig {
            n_sessions,
            fraud_rate,
            sequence_length,
            length_range: Some((sequence_length / 2, sequence_length + sequence_length / 4)),
            page_types: pages.iter().map(|s| s.to_string()).collect(),
            legit_transitions: legit,
            fraud_transitions: fraud,
            action_types: actions.iter().map(|s| s.to_string()).collect(),
            action_given_page,
            duration_means: vec![4.0, 9.0, 20.0, 7.0, 12.0, 5.0],
            duration_bin_edges: vec![5.0, 15.0],
            duration_bin_labels: vec!["short".into(), "medium".into(), "long".into()],
            items_per_page: 4,
            noise_rate,
            seed,
        }
    }
}

fn draw_categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Generate a labeled dataset. Deterministic given the config (including
/// its seed).
pub fn generate(cfg: &SynthConfig) -> Result<Vec<Session>> {
    cfg.validate()?;
    let schema = cfg.schema();
    let duration_spec = &schema.domains[2];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let m = cfg.page_types.len();
    let mut sessions = Vec::with_capacity(cfg.n_sessions);
    for s in 0..cfg.n_sessions {
        let label = u8::from(rng.random::<f64>() < cfg.fraud_rate);
        let chain = if label == 1 {
            &cfg.fraud_transitions
        } else {
            &cfg.legit_transitions
        };
        let length = match cfg.length_range {
            Some((lo, hi)) => rng.random_range(lo..=hi),
            None => cfg.sequence_length,
        };
        let mut page = rng.random_range(0..m);
        let mut events = Vec::with_capacity(length);
        for t in 0..length {
            if t > 0 {
                page = draw_categorical(&mut rng, &chain[page]);
            }
            let mut recorded_page = page;
            let action = draw_categorical(&mut rng, &cfg.action_given_page[page]);
            let mut recorded_action = action;
            if cfg.noise_rate > 0.0 && rng.random::<f64>() < cfg.noise_rate {
                recorded_page = rng.random_range(0..m);
            }
            if cfg.noise_rate > 0.0 && rng.random::<f64>() < cfg.noise_rate {
                recorded_action = rng.random_range(0..cfg.action_types.len());
            }
            let duration = -cfg.duration_means[page] * (1.0 - rng.random::<f64>()).ln();
            let item_id = if cfg.items_per_page > 0 {
                let pick = rng.random_range(0..cfg.items_per_page);
                Some(format!("item_{}_{pick}", cfg.page_types[recorded_page]))
            } else {
                None
            };
            events.push(Event {
                index: t + 1,
                features: vec![
                    ("page_type".into(), cfg.page_types[recorded_page].clone()),
                    ("action_type".into(), cfg.action_types[recorded_action].clone()),
                    ("duration".into(), duration_spec.bin_value(duration).to_string()),
                ],
                item_id,
                numeric: vec![("duration".into(), duration)],
            });
        }
        sessions.push(Session {
            session_id: format!("s{s:06}"),
            events,
            label: Some(label),
        });
    }
    Ok(sessions)
}
