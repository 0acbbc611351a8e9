//! Epoch-indexed network schedules and the simulated clock.
//!
//! Trace files hold one segment per line, `start_epoch,alpha_ms,bandwidth_gbps`,
//! with `#` starting a comment.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cost::NetParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start_epoch: u64,
    pub net: NetParams,
}

/// Piecewise-constant network conditions over training epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSchedule {
    segments: Vec<Segment>,
}

impl NetworkSchedule {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        match segments.first() {
            None => return Err(Error::InvalidSchedule("no segments".into())),
            Some(s) if s.start_epoch != 0 => {
                return Err(Error::InvalidSchedule("first segment must start at epoch 0".into()))
            }
            _ => {}
        }
        if let Some(w) = segments.windows(2).find(|w| w[0].start_epoch >= w[1].start_epoch) {
            return Err(Error::InvalidSchedule(format!(
                "start epochs must be strictly ascending ({} then {})",
                w[0].start_epoch, w[1].start_epoch
            )));
        }
        for s in &segments {
            NetParams::new(s.net.alpha, s.net.bandwidth)?;
        }
        Ok(NetworkSchedule { segments })
    }

    pub fn constant(net: NetParams) -> Self {
        NetworkSchedule { segments: vec![Segment { start_epoch: 0, net }] }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Conditions of the last segment starting at or before `epoch`.
    pub fn params_at(&self, epoch: u64) -> NetParams {
        let pos = self.segments.partition_point(|s| s.start_epoch <= epoch);
        self.segments[pos.saturating_sub(1)].net
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut segments = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::TraceParse { line: i + 1, msg };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(err(format!("expected 3 fields, found {}", fields.len())));
            }
            let start_epoch = fields[0].parse::<u64>().map_err(|e| err(format!("start_epoch: {e}")))?;
            let alpha_ms = fields[1].parse::<f64>().map_err(|e| err(format!("alpha_ms: {e}")))?;
            let gbps = fields[2].parse::<f64>().map_err(|e| err(format!("bandwidth_gbps: {e}")))?;
            let net = NetParams::from_ms_gbps(alpha_ms, gbps).map_err(|e| err(e.to_string()))?;
            segments.push(Segment { start_epoch, net });
        }
        NetworkSchedule::new(segments)
    }

    pub fn to_trace(&self) -> String {
        let mut out = String::from("# start_epoch,alpha_ms,bandwidth_gbps\n");
        for s in &self.segments {
            let _ = writeln!(out, "{},{},{}", s.start_epoch, s.net.alpha_ms(), s.net.bandwidth_gbps());
        }
        out
    }

    /// Preset schedule scaled to `epochs` total epochs.
    pub fn preset(preset: Preset, epochs: u64) -> Result<Self> {
        if epochs == 0 {
            return Err(Error::InvalidSchedule("epochs must be >= 1".into()));
        }
        let phases: &[(f64, f64, f64)] = match preset {
            // (fraction of a 50-epoch run, alpha ms, Gbps)
            Preset::C1 => &[(0.0, 1.0, 25.0), (13.0, 1.0, 1.0), (25.0, 50.0, 1.0), (37.0, 50.0, 25.0)],
            Preset::C2 => &[
                (0.0, 1.0, 25.0),
                (12.0, 10.0, 10.0),
                (20.0, 50.0, 1.0),
                (28.0, 10.0, 10.0),
                (36.0, 1.0, 25.0),
            ],
        };
        let mut segments = Vec::with_capacity(phases.len());
        for &(start, alpha_ms, gbps) in phases {
            let start_epoch = (start * epochs as f64 / 50.0).round() as u64;
            segments.push(Segment { start_epoch, net: NetParams::from_ms_gbps(alpha_ms, gbps)? });
        }
        NetworkSchedule::new(segments).map_err(|_| {
            Error::InvalidSchedule(format!("{} epochs is too few for preset {preset}", epochs))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    C1,
    C2,
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "c1" => Ok(Preset::C1),
            "c2" => Ok(Preset::C2),
            _ => Err(Error::InvalidSchedule(format!("unknown preset {s:?} (expected c1 or c2)"))),
        }
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Preset::C1 => "c1",
            Preset::C2 => "c2",
        })
    }
}

/// True when alpha or bandwidth moved by more than `rel_threshold`
/// relative to `prev`. A threshold of 0 flags any difference.
pub fn network_changed(prev: &NetParams, cur: &NetParams, rel_threshold: f64) -> bool {
    let moved = |a: f64, b: f64| {
        if rel_threshold <= 0.0 {
            a != b
        } else if a == 0.0 {
            b != 0.0
        } else {
            ((b - a) / a).abs() > rel_threshold
        }
    };
    moved(prev.alpha, cur.alpha) || moved(prev.bandwidth, cur.bandwidth)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Category {
    Compute,
    Sync,
    Compression,
    Io,
    Exploration,
}

impl Category {
    pub const ALL: [Category; 5] =
        [Category::Compute, Category::Sync, Category::Compression, Category::Io, Category::Exploration];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Compute => "compute",
            Category::Sync => "sync",
            Category::Compression => "compression",
            Category::Io => "io",
            Category::Exploration => "exploration",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

/// Simulated time split by cost category. `now()` is always the sum of
/// the accumulators, added in a fixed order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimClock {
    acc: [f64; 5],
}

impl SimClock {
    pub fn new() -> Self {
        SimClock::default()
    }

    pub fn charge(&mut self, category: Category, seconds: f64) -> Result<()> {
        if !(seconds >= 0.0) || !seconds.is_finite() {
            return Err(Error::NegativeDuration(seconds));
        }
        self.acc[category.slot()] += seconds;
        Ok(())
    }

    pub fn total(&self, category: Category) -> f64 {
        self.acc[category.slot()]
    }

    pub fn now(&self) -> f64 {
        self.acc.iter().sum()
    }
}
