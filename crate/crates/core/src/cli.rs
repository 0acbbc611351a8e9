//! Library side of the `flexcomm` commands. The binary only parses flags
//! and maps errors to exit codes.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::compress::CompressionRatio;
use crate::config::RunConfig;
use crate::cost::{crossover_cr, select_collective, Collective, CostBreakdown, Crossover, MessageSpec, NetParams, Pair};
use crate::error::{Error, Result};
use crate::moo::write_events_csv;
use crate::netsched::{NetworkSchedule, Preset};
use crate::trainer::{run, write_metrics_csv, RunArtifacts, RunSummary};

/// Env var that replaces `train.seed` from the config file.
pub const SEED_ENV: &str = "FLEXCOMM_SEED";

#[derive(Debug, Clone, PartialEq)]
pub struct PlanReport {
    pub net: NetParams,
    pub msg: MessageSpec,
    pub costs: CostBreakdown,
    pub selected: Collective,
    pub crossovers: Vec<(Pair, Crossover)>,
}

pub fn plan(alpha_ms: f64, bandwidth_gbps: f64, model_bytes: f64, workers: usize, cr: f64) -> Result<PlanReport> {
    let net = NetParams::from_ms_gbps(alpha_ms, bandwidth_gbps)?;
    let msg = MessageSpec::new(model_bytes, CompressionRatio::new(cr)?, workers)?;
    let sel = select_collective(&net, &msg)?;
    let crossovers = Pair::ALL
        .iter()
        .map(|&p| Ok((p, crossover_cr(&net, model_bytes, workers, p)?)))
        .collect::<Result<_>>()?;
    Ok(PlanReport { net, msg, costs: sel.costs, selected: sel.collective, crossovers })
}

fn crossover_text(c: Crossover) -> String {
    match c {
        Crossover::At(v) => format!("{v:.6}"),
        Crossover::None => "none".into(),
    }
}

impl fmt::Display for PlanReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "alpha={} ms  bandwidth={} Gbps  M={} B  N={}  c={}",
            self.net.alpha_ms(),
            self.net.bandwidth_gbps(),
            self.msg.bytes,
            self.msg.workers,
            self.msg.cr
        )?;
        let c = &self.costs;
        for (name, v) in [
            ("PS", c.ps),
            ("RING_AR", c.ring_ar),
            ("TREE_AR", c.tree_ar),
            ("BROADCAST", c.broadcast),
            ("ALLGATHER", c.allgather_dense),
            ("AG", c.ag_compressed),
            ("ART_RING", c.art_ring),
            ("ART_TREE", c.art_tree),
        ] {
            writeln!(f, "  {name:<10} {:>14.4} ms", v * 1e3)?;
        }
        writeln!(f, "selected: {} ({:.4} ms)", self.selected, c.of(self.selected) * 1e3)?;
        for (p, x) in &self.crossovers {
            writeln!(f, "crossover c* {:<18} {}", p.as_str(), crossover_text(*x))?;
        }
        Ok(())
    }
}

impl PlanReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["quantity", "value"]).map_err(crate::artopk::csv_err)?;
        let c = &self.costs;
        let mut rows: Vec<(String, String)> = vec![
            ("alpha_ms".into(), self.net.alpha_ms().to_string()),
            ("bandwidth_gbps".into(), self.net.bandwidth_gbps().to_string()),
            ("model_bytes".into(), self.msg.bytes.to_string()),
            ("workers".into(), self.msg.workers.to_string()),
            ("cr".into(), self.msg.cr.to_string()),
            ("ps_ms".into(), (c.ps * 1e3).to_string()),
            ("ring_ar_ms".into(), (c.ring_ar * 1e3).to_string()),
            ("tree_ar_ms".into(), (c.tree_ar * 1e3).to_string()),
            ("broadcast_ms".into(), (c.broadcast * 1e3).to_string()),
            ("allgather_ms".into(), (c.allgather_dense * 1e3).to_string()),
            ("ag_ms".into(), (c.ag_compressed * 1e3).to_string()),
            ("art_ring_ms".into(), (c.art_ring * 1e3).to_string()),
            ("art_tree_ms".into(), (c.art_tree * 1e3).to_string()),
            ("selected".into(), self.selected.to_string()),
        ];
        for (p, x) in &self.crossovers {
            rows.push((format!("crossover_{}", p.as_str()), crossover_text(*x)));
        }
        for (k, v) in rows {
            w.write_record([k, v]).map_err(crate::artopk::csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Writes `metrics.csv`, `selection.csv`, `controller.csv` and `summary.json` into `dir`.
pub fn write_artifacts(art: &RunArtifacts, dir: &Path) -> Result<RunSummary> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    write_metrics_csv(&art.metrics, create(&dir.join("metrics.csv"))?)?;
    art.selection.write_csv(create(&dir.join("selection.csv"))?)?;
    write_events_csv(&art.events, create(&dir.join("controller.csv"))?)?;
    let summary = art.summary();
    let mut out = create(&dir.join("summary.json"))?;
    serde_json::to_writer_pretty(&mut out, &summary).map_err(|e| Error::Io(e.to_string()))?;
    writeln!(out)?;
    out.flush()?;
    Ok(summary)
}

/// Loads `config_path`, applies `seed_override`, runs, and writes artifacts to `out_dir`.
pub fn simulate(config_path: &Path, out_dir: &Path, seed_override: Option<u64>, threads: Option<usize>) -> Result<RunSummary> {
    let mut cfg = RunConfig::load(config_path).map_err(|e| match e {
        Error::Io(m) => Error::Config(m),
        other => other,
    })?;
    if let Some(seed) = seed_override {
        cfg.train.seed = seed;
    }
    if let Some(t) = threads {
        cfg.cluster.threads = t;
    }
    let base = config_path.parent().unwrap_or_else(|| Path::new("."));
    let exp = cfg.build(base)?;
    let art = run(exp.train, exp.model, exp.data, &exp.schedule, Some(exp.controller))?;
    write_artifacts(&art, out_dir)
}

/// Parses `FLEXCOMM_SEED` if set.
pub fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|e| Error::Config(format!("{SEED_ENV}={v:?}: {e}"))),
        Err(_) => Ok(None),
    }
}

pub fn trace_gen(preset: Preset, epochs: u64) -> Result<String> {
    Ok(NetworkSchedule::preset(preset, epochs)?.to_trace())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_examples() {
        let r = plan(1.0, 10.0, 45_500_000.0, 8, 0.1).unwrap();
        assert_eq!(r.selected, Collective::ArtRing);
        assert!((r.costs.art_ring * 1e3 - 35.0).abs() / 35.0 < 0.05);
        assert_eq!(plan(1.0, 10.0, 45_500_000.0, 8, 0.001).unwrap().selected, Collective::Ag);
        assert_eq!(plan(1.0, 10.0, 45_500_000.0, 1, 0.1).unwrap_err(), Error::SingleWorker);
        let text = r.to_string();
        assert!(text.contains("selected: ART_RING"));
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("quantity,value\n"));
    }

    #[test]
    fn trace_gen_presets() {
        let t = trace_gen(Preset::C1, 50).unwrap();
        let s = NetworkSchedule::parse(&t).unwrap();
        let starts: Vec<u64> = s.segments().iter().map(|s| s.start_epoch).collect();
        assert_eq!(starts, vec![0, 13, 25, 37]);
        assert!(trace_gen(Preset::C1, 0).is_err());
    }
}
