//! TOML run configuration for `simulate`.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::collectives::ReduceOp;
use crate::compress::{CompressionRatio, Compressor, GainTracker, DEFAULT_THRESHOLD_ROUNDS};
use crate::cost::{NetParams, ReduceAlgo};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{ModelKind, SmallModel};
use crate::moo::ControllerConfig;
use crate::netsched::{NetworkSchedule, Preset, Segment};
use crate::trainer::{AggMode, RatioSetting, Timing, TrainConfig};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub cluster: ClusterSection,
    pub model: ModelSection,
    #[serde(default)]
    pub data: DataSection,
    pub train: TrainSection,
    #[serde(default)]
    pub compression: CompressionSection,
    pub network: NetworkSection,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub timing: TimingSection,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSection {
    pub n: usize,
    #[serde(default = "one")]
    pub threads: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub features: usize,
    #[serde(default)]
    pub hidden: usize,
    pub classes: usize,
    /// Wire size charged for a full gradient, in bytes.
    pub size_bytes_override: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub samples_per_worker: usize,
    pub separation: f64,
    /// CSV of `feature...,label` rows; replaces the synthetic blobs.
    pub path: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection { samples_per_worker: 500, separation: 3.0, path: None }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub eta: f64,
    pub batch: usize,
    pub epochs: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub decay: Vec<(u64, f64)>,
    #[serde(default)]
    pub momentum: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Dense,
    Exact,
    Layerwise,
    Threshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    #[serde(alias = "STAR")]
    Star,
    #[serde(alias = "VAR")]
    Var,
    #[serde(alias = "AG")]
    Ag,
}

/// A ratio in (0, 1] or the word `adaptive`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum RatioValue {
    Number(f64),
    Word(String),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompressionSection {
    pub method: Method,
    pub c: RatioValue,
    pub mode: ModeName,
    pub reduce_algo: ReduceAlgo,
    pub reduce_op: ReduceOp,
    pub error_feedback: bool,
    pub threshold_rounds: u32,
    pub gain_window: usize,
}

impl Default for CompressionSection {
    fn default() -> Self {
        CompressionSection {
            method: Method::Dense,
            c: RatioValue::Number(1.0),
            mode: ModeName::Star,
            reduce_algo: ReduceAlgo::Ring,
            reduce_op: ReduceOp::Avg,
            error_feedback: true,
            threshold_rounds: DEFAULT_THRESHOLD_ROUNDS,
            gain_window: GainTracker::DEFAULT_WINDOW,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub trace_path: Option<PathBuf>,
    pub preset: Option<String>,
    /// Inline `[start_epoch, alpha_ms, bandwidth_gbps]` rows.
    pub segments: Option<Vec<(u64, f64, f64)>>,
    #[serde(default)]
    pub t_io_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimingMode {
    Modeled,
    Measured,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingSection {
    pub mode: TimingMode,
    pub compute_ms: f64,
    pub comp_ns_per_elem: f64,
}

impl Default for TimingSection {
    fn default() -> Self {
        TimingSection { mode: TimingMode::Modeled, compute_ms: 20.0, comp_ns_per_elem: 0.1 }
    }
}

/// Everything `trainer::run` needs, resolved from a config.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub train: TrainConfig,
    pub model: SmallModel,
    pub data: Dataset,
    pub schedule: NetworkSchedule,
    pub controller: ControllerConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn ratio(&self) -> Result<RatioSetting> {
        match &self.compression.c {
            RatioValue::Number(c) => Ok(RatioSetting::Fixed(CompressionRatio::new(*c)?)),
            RatioValue::Word(w) if w.eq_ignore_ascii_case("adaptive") => Ok(RatioSetting::Adaptive),
            RatioValue::Word(w) => Err(Error::Config(format!("compression.c must be a number or \"adaptive\", got {w:?}"))),
        }
    }

    fn schedule(&self, base: &Path) -> Result<NetworkSchedule> {
        let net = &self.network;
        let given = [net.trace_path.is_some(), net.preset.is_some(), net.segments.is_some()];
        if given.iter().filter(|g| **g).count() != 1 {
            return Err(Error::Config("network needs exactly one of trace_path, preset, segments".into()));
        }
        if let Some(p) = &net.trace_path {
            let path = base.join(p);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| Error::Config(format!("trace {}: {e}", path.display())))?;
            return NetworkSchedule::parse(&text);
        }
        if let Some(p) = &net.preset {
            return NetworkSchedule::preset(p.parse::<Preset>()?, self.train.epochs);
        }
        let rows = net.segments.as_deref().unwrap_or_default();
        let segments = rows
            .iter()
            .map(|&(start_epoch, a, b)| Ok(Segment { start_epoch, net: NetParams::from_ms_gbps(a, b)? }))
            .collect::<Result<Vec<_>>>()?;
        NetworkSchedule::new(segments)
    }

    /// Resolves relative paths against `base` (the config file's directory).
    pub fn build(&self, base: &Path) -> Result<Experiment> {
        let n = self.cluster.n;
        let m = &self.model;
        let model = SmallModel::new(m.kind, m.features, m.hidden, m.classes)?;
        if let Some(b) = m.size_bytes_override {
            if !(b.is_finite() && b >= 4.0) {
                return Err(Error::Config(format!("size_bytes_override must be >= 4, got {b}")));
            }
        }
        let data = match &self.data.path {
            Some(p) => {
                let path = base.join(p);
                if !path.exists() {
                    return Err(Error::Config(format!("dataset {} does not exist", path.display())));
                }
                Dataset::from_csv(&path)?
            }
            None => Dataset::blobs(
                self.data.samples_per_worker * n,
                m.features,
                m.classes,
                self.data.separation,
                self.train.seed,
            )?,
        };
        let c = &self.compression;
        let compressor = match c.method {
            Method::Dense => None,
            Method::Exact => Some(Compressor::Exact),
            Method::Layerwise => Some(Compressor::Layerwise),
            Method::Threshold => Some(Compressor::Threshold { rounds: c.threshold_rounds }),
        };
        let timing = match self.timing.mode {
            TimingMode::Modeled => {
                let t = &self.timing;
                if !(t.compute_ms >= 0.0 && t.comp_ns_per_elem >= 0.0) {
                    return Err(Error::Config("timing constants must be >= 0".into()));
                }
                Timing::Modeled { compute_s: t.compute_ms / 1e3, comp_s_per_elem: t.comp_ns_per_elem / 1e9 }
            }
            TimingMode::Measured => Timing::Measured,
        };
        let train = TrainConfig {
            workers: n,
            eta: self.train.eta,
            batch: self.train.batch,
            epochs: self.train.epochs,
            decay: self.train.decay.clone(),
            momentum: self.train.momentum,
            seed: self.train.seed,
            compressor,
            ratio: self.ratio()?,
            mode: match c.mode {
                ModeName::Star => AggMode::Star,
                ModeName::Var => AggMode::Var,
                ModeName::Ag => AggMode::Ag,
            },
            reduce_algo: c.reduce_algo,
            reduce_op: c.reduce_op,
            error_feedback: c.error_feedback,
            t_io: self.network.t_io_ms / 1e3,
            timing,
            model_bytes: m.size_bytes_override,
            threads: self.cluster.threads,
            gain_window: c.gain_window,
        };
        train.validate()?;
        if train.ratio == RatioSetting::Adaptive {
            self.controller.validate()?;
        }
        Ok(Experiment { train, model, data, schedule: self.schedule(base)?, controller: self.controller })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
[cluster]
n = 4

[model]
kind = "softmax_regression"
features = 8
classes = 3

[train]
eta = 0.1
batch = 8
epochs = 2
seed = 7
decay = [[1, 0.5]]

[compression]
method = "exact"
c = 0.1
mode = "var"

[network]
segments = [[0, 1.0, 10.0], [1, 50.0, 1.0]]
"#;

    #[test]
    fn parses_and_builds() {
        let cfg = RunConfig::parse(BASIC).unwrap();
        let exp = cfg.build(Path::new(".")).unwrap();
        assert_eq!(exp.train.workers, 4);
        assert_eq!(exp.train.mode, AggMode::Var);
        assert_eq!(exp.train.ratio, RatioSetting::Fixed(CompressionRatio::new(0.1).unwrap()));
        assert_eq!(exp.train.decay, vec![(1, 0.5)]);
        assert_eq!(exp.schedule.segments().len(), 2);
        assert_eq!(exp.data.len(), 2000);
    }

    #[test]
    fn adaptive_word() {
        let text = BASIC.replace("c = 0.1", "c = \"adaptive\"");
        let exp = RunConfig::parse(&text).unwrap().build(Path::new(".")).unwrap();
        assert_eq!(exp.train.ratio, RatioSetting::Adaptive);
        let text = BASIC.replace("c = 0.1", "c = \"sometimes\"");
        assert!(RunConfig::parse(&text).unwrap().build(Path::new(".")).is_err());
    }

    #[test]
    fn rejects_unknown_keys() {
        let text = BASIC.replace("seed = 7", "seed = 7\nsneaky = 1");
        assert!(matches!(RunConfig::parse(&text), Err(Error::Config(_))));
        let text = format!("{BASIC}\n[extra]\nx = 1\n");
        assert!(RunConfig::parse(&text).is_err());
    }

    #[test]
    fn missing_trace_is_an_error() {
        let text = BASIC.replace("segments = [[0, 1.0, 10.0], [1, 50.0, 1.0]]", "trace_path = \"nope.trace\"");
        let cfg = RunConfig::parse(&text).unwrap();
        assert!(matches!(cfg.build(Path::new("/nonexistent")), Err(Error::Config(_))));
    }

    #[test]
    fn network_sources_are_exclusive() {
        let text = BASIC.replace("[network]", "[network]\npreset = \"c1\"");
        assert!(RunConfig::parse(&text).unwrap().build(Path::new(".")).is_err());
    }
}
