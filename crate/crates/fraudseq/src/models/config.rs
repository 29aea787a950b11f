//! Model configuration and its flat key=value file format.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Rnn,
    CnnMtf,
    Fused,
    Mlp,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Rnn => "rnn",
            ModelKind::CnnMtf => "cnn_mtf",
            ModelKind::Fused => "fused",
            ModelKind::Mlp => "mlp",
        }
    }

    pub fn parse(s: &str) -> Result<ModelKind> {
        match s {
            "rnn" => Ok(ModelKind::Rnn),
            "cnn_mtf" => Ok(ModelKind::CnnMtf),
            "fused" => Ok(ModelKind::Fused),
            "mlp" => Ok(ModelKind::Mlp),
            other => Err(Error::BadConfigKey {
                key: "kind".into(),
                reason: format!("unknown model kind `{other}` (rnn, cnn_mtf, fused, mlp)"),
            }),
        }
    }

    pub fn uses_rnn(&self) -> bool {
        matches!(self, ModelKind::Rnn | ModelKind::Fused)
    }

    pub fn uses_cnn(&self) -> bool {
        matches!(self, ModelKind::CnnMtf | ModelKind::Fused)
    }
}

/// One convolution block: conv + tanh + average pooling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvBlockSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    /// Pooling window (and pooling stride); 1 disables pooling.
    pub pool: usize,
}

impl ConvBlockSpec {
    /// Format: `<filters>x<kernel>s<stride>p<pool>`, e.g. `8x3s1p2`.
    fn parse(text: &str) -> Option<ConvBlockSpec> {
        let (filters, rest) = text.split_once('x')?;
        let (kernel, rest) = rest.split_once('s')?;
        let (stride, pool) = rest.split_once('p')?;
        Some(ConvBlockSpec {
            filters: filters.parse().ok()?,
            kernel: kernel.parse().ok()?,
            stride: stride.parse().ok()?,
            pool: pool.parse().ok()?,
        })
    }

    fn format(&self) -> String {
        format!("{}x{}s{}p{}", self.filters, self.kernel, self.stride, self.pool)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Hidden sizes of the stacked LSTM layers (rnn / fused).
    pub lstm_layers: Vec<usize>,
    /// Convolution blocks over the transition field (cnn_mtf / fused).
    pub conv_spec: Vec<ConvBlockSpec>,
    /// Hidden widths of the dense head (tanh activations).
    pub dense_spec: Vec<usize>,
    /// Hidden widths of the fusion head (fused only).
    pub fuse_spec: Vec<usize>,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Loss weight on fraud rows; 1.0 disables class weighting.
    pub pos_weight: f64,
}

impl ModelConfig {
    pub fn defaults(kind: ModelKind) -> ModelConfig {
        ModelConfig {
            kind,
            lstm_layers: vec![64, 64],
            conv_spec: vec![
                ConvBlockSpec { filters: 8, kernel: 5, stride: 1, pool: 2 },
                ConvBlockSpec { filters: 16, kernel: 3, stride: 1, pool: 2 },
            ],
            dense_spec: vec![32],
            fuse_spec: vec![32],
            lr: 0.05,
            epochs: 30,
            batch_size: 32,
            seed: 1,
            pos_weight: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: String| Error::BadConfigKey { key: key.into(), reason };
        if self.kind.uses_rnn() && self.lstm_layers.is_empty() {
            return Err(bad("lstm_layers", format!("required for kind={}", self.kind.as_str())));
        }
        if self.kind.uses_cnn() && self.conv_spec.is_empty() {
            return Err(bad("conv_spec", format!("required for kind={}", self.kind.as_str())));
        }
        if self.kind == ModelKind::Fused && self.dense_spec.is_empty() {
            return Err(bad("dense_spec", "fused models need a CNN feature head".into()));
        }
        if self.kind == ModelKind::Fused && self.fuse_spec.is_empty() {
            return Err(bad("fuse_spec", "fused models need fusion layers".into()));
        }
        if self.batch_size == 0 {
            return Err(bad("batch_size", "must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(bad("epochs", "must be >= 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(bad("lr", "must be positive".into()));
        }
        if !(self.pos_weight > 0.0) {
            return Err(bad("pos_weight", "must be positive".into()));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<ModelConfig> {
        let mut kind = None;
        let mut pairs = Vec::new();
        for raw in text.lines() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::BadConfigKey {
                key: line.to_string(),
                reason: "expected key=value".into(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key == "kind" {
                kind = Some(ModelKind::parse(value)?);
            } else {
                pairs.push((key.to_string(), value.to_string()));
            }
        }
        let kind = kind.ok_or_else(|| Error::MissingConfigKey { key: "kind".into() })?;
        let mut cfg = ModelConfig::defaults(kind);
        for (key, value) in pairs {
            let bad = |reason: &str| Error::BadConfigKey {
                key: key.clone(),
                reason: reason.to_string(),
            };
            match key.as_str() {
                "lstm_layers" => {
                    cfg.lstm_layers = parse_usize_list(&value).ok_or_else(|| bad("expected comma-separated positive integers"))?;
                }
                "conv_spec" => {
                    cfg.conv_spec = value
                        .split(',')
                        .map(|s| ConvBlockSpec::parse(s.trim()))
                        .collect::<Option<Vec<_>>>()
                        .ok_or_else(|| bad("expected blocks like 8x3s1p2"))?;
                }
                "dense_spec" => {
                    cfg.dense_spec = if value.is_empty() {
                        Vec::new()
                    } else {
                        parse_usize_list(&value).ok_or_else(|| bad("expected comma-separated positive integers"))?
                    };
                }
                "fuse_spec" => {
                    cfg.fuse_spec = parse_usize_list(&value).ok_or_else(|| bad("expected comma-separated positive integers"))?;
                }
                "lr" => cfg.lr = value.parse().map_err(|_| bad("expected a number"))?,
                "epochs" => cfg.epochs = value.parse().map_err(|_| bad("expected an integer"))?,
                "batch_size" => cfg.batch_size = value.parse().map_err(|_| bad("expected an integer"))?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad("expected an integer"))?,
                "pos_weight" => cfg.pos_weight = value.parse().map_err(|_| bad("expected a number"))?,
                _ => return Err(bad("unknown key")),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ModelConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|_| Error::FileNotFound(path.display().to_string()))?;
        ModelConfig::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "kind={}", self.kind.as_str());
        let _ = writeln!(s, "lstm_layers={}", join_usize(&self.lstm_layers));
        let _ = writeln!(
            s,
            "conv_spec={}",
            self.conv_spec.iter().map(ConvBlockSpec::format).collect::<Vec<_>>().join(",")
        );
        let _ = writeln!(s, "dense_spec={}", join_usize(&self.dense_spec));
        let _ = writeln!(s, "fuse_spec={}", join_usize(&self.fuse_spec));
        let _ = writeln!(s, "lr={}", self.lr);
        let _ = writeln!(s, "epochs={}", self.epochs);
        let _ = writeln!(s, "batch_size={}", self.batch_size);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "pos_weight={}", self.pos_weight);
        s
    }
}

fn parse_usize_list(text: &str) -> Option<Vec<usize>> {
    text.split(',')
        .map(|s| s.trim().parse::<usize>().ok().filter(|&v| v > 0))
        .collect()
}

fn join_usize(list: &[usize]) -> String {
    list.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}
