//! Adaptive compression-ratio controller.
//!
//! Candidate ratios are probed for a few steps from a snapshot, scored on
//! (compression time, modeled sync time, 1/gain), and the knee of the Pareto
//! front is used until the network or the observed gain shifts.

use std::io::Write;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::artopk::csv_err;
use crate::compress::{CompressionRatio, GainTracker};
use crate::cost::{select_collective, Collective, MessageSpec, NetParams};
use crate::error::{Error, Result};
use crate::netsched::{network_changed, Category, SimClock};
use crate::trainer::Trainer;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub c_low: f64,
    pub c_high: f64,
    pub factor: f64,
    pub probe_iters: u32,
    pub gain_threshold: f64,
    /// Relative change in alpha or bandwidth that counts as a new network;
    /// 0 means any change.
    pub net_change_threshold: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            c_low: 0.001,
            c_high: 0.1,
            factor: 3.0,
            probe_iters: 10,
            gain_threshold: 0.10,
            net_change_threshold: 0.0,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        CompressionRatio::new(self.c_low)?;
        CompressionRatio::new(self.c_high)?;
        if self.c_low > self.c_high {
            return Err(Error::Config(format!("c_low {} exceeds c_high {}", self.c_low, self.c_high)));
        }
        if !(self.factor > 1.0) {
            return Err(Error::Config(format!("ladder factor must be > 1, got {}", self.factor)));
        }
        if self.probe_iters == 0 {
            return Err(Error::Config("probe_iters must be >= 1".into()));
        }
        if !(self.gain_threshold >= 0.0) || !(self.net_change_threshold >= 0.0) {
            return Err(Error::Config("thresholds must be >= 0".into()));
        }
        Ok(())
    }
}

fn round_sig3(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let scale = 10f64.powi(2 - x.abs().log10().floor() as i32);
    (x * scale).round() / scale
}

/// `c_high, c_high/f, c_high/f^2, ...` rounded to three significant digits,
/// stopping once the next rung would fall below `c_low * f`, then `c_low`.
pub fn candidate_ladder(cfg: &ControllerConfig) -> Result<Vec<CompressionRatio>> {
    cfg.validate()?;
    let mut out = vec![cfg.c_high];
    let mut c = cfg.c_high;
    let floor = cfg.c_low * cfg.factor * (1.0 - 1e-9);
    loop {
        c /= cfg.factor;
        let r = round_sig3(c);
        if r < floor {
            break;
        }
        out.push(r);
    }
    if (out[out.len() - 1] - cfg.c_low).abs() > 1e-12 {
        out.push(cfg.c_low);
    }
    out.into_iter().map(CompressionRatio::new).collect()
}

/// Probe statistics for one ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CandidateCR {
    pub c: f64,
    pub gain_avg: f64,
    pub t_comp_avg: f64,
    pub t_sync_modeled: f64,
    pub collective: Collective,
    pub probe_steps: u32,
}

impl CandidateCR {
    fn objectives(&self) -> [f64; 3] {
        [self.t_comp_avg, self.t_sync_modeled, 1.0 / self.gain_avg]
    }
}

fn dominates(a: &[f64; 3], b: &[f64; 3]) -> bool {
    a.iter().zip(b).all(|(x, y)| x <= y) && a.iter().zip(b).any(|(x, y)| x < y)
}

/// Non-dominated candidates, in input order. All objectives are minimised.
pub fn pareto_front(cands: &[CandidateCR]) -> Vec<CandidateCR> {
    let objs: Vec<[f64; 3]> = cands.iter().map(CandidateCR::objectives).collect();
    cands
        .iter()
        .enumerate()
        .filter(|(i, _)| !objs.iter().any(|o| dominates(o, &objs[*i])))
        .map(|(_, c)| *c)
        .collect()
}

/// Knee point: smallest distance to the origin after min-max normalising
/// each objective over the front. Near-ties go to the larger ratio.
pub fn choose_cr(front: &[CandidateCR]) -> Result<CandidateCR> {
    let first = front.first().ok_or(Error::NoCandidates)?;
    let objs: Vec<[f64; 3]> = front.iter().map(CandidateCR::objectives).collect();
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for o in &objs {
        for d in 0..3 {
            lo[d] = lo[d].min(o[d]);
            hi[d] = hi[d].max(o[d]);
        }
    }
    let dist = |o: &[f64; 3]| -> f64 {
        (0..3)
            .map(|d| {
                let span = hi[d] - lo[d];
                let v = if span > 0.0 { (o[d] - lo[d]) / span } else { 0.0 };
                v * v
            })
            .sum::<f64>()
            .sqrt()
    };
    let mut best = (*first, dist(&objs[0]));
    for (cand, o) in front.iter().zip(&objs).skip(1) {
        let d = dist(o);
        if d < best.1 - 1e-12 || ((d - best.1).abs() <= 1e-12 && cand.c > best.0.c) {
            best = (*cand, d);
        }
    }
    Ok(best.0)
}

/// True when the rolling gain has moved from `gain_ref` by at least
/// `threshold` (relative). Needs two samples.
pub fn trigger_gain(tracker: &GainTracker, gain_ref: Option<f64>, threshold: f64) -> bool {
    if tracker.len() < 2 {
        return false;
    }
    match (tracker.mean(), gain_ref) {
        (Some(g), Some(r)) if r > 0.0 => ((g - r) / r).abs() >= threshold,
        _ => false,
    }
}

/// Probes every ratio in `ladder` for `probe_iters` steps from the current
/// state and restores it afterwards. Probe time is charged to `Exploration`.
pub fn explore(
    trainer: &mut Trainer,
    clock: &mut SimClock,
    ladder: &[CompressionRatio],
    probe_iters: u32,
    net: &NetParams,
) -> Result<Vec<CandidateCR>> {
    let workers = trainer.config().workers;
    let bytes = trainer.sizing().model_bytes();
    let mut out = Vec::with_capacity(ladder.len());
    for &cr in ladder {
        let sel = select_collective(net, &MessageSpec::new(bytes, cr, workers)?)?;
        let plan = trainer.plan_for(cr, sel.collective);
        let snap = trainer.snapshot();
        let (mut gain_sum, mut gain_n, mut comp_sum) = (0.0, 0u32, 0.0);
        let mut failed = None;
        for _ in 0..probe_iters {
            match trainer.step(&plan) {
                Ok((m, _)) => {
                    clock.charge(Category::Exploration, m.t_step)?;
                    comp_sum += m.t_comp_decomp;
                    if let Some(g) = m.gain {
                        gain_sum += g;
                        gain_n += 1;
                    }
                }
                Err(e) => {
                    failed = Some(e);
                    break;
                }
            }
        }
        trainer.restore(snap);
        match failed {
            Some(Error::Diverged { .. }) => {
                warn!("probe at c={cr} diverged, dropping candidate");
                continue;
            }
            Some(e) => return Err(e),
            None => {}
        }
        if gain_n == 0 {
            warn!("probe at c={cr} saw only zero gradients, dropping candidate");
            continue;
        }
        out.push(CandidateCR {
            c: cr.get(),
            gain_avg: gain_sum / gain_n as f64,
            t_comp_avg: comp_sum / probe_iters as f64,
            t_sync_modeled: sel.time(),
            collective: sel.collective,
            probe_steps: probe_iters,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Trigger {
    Gain,
    Network,
}

/// One controller decision point.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerEvent {
    pub step: u64,
    pub trigger: Trigger,
    pub chosen_c: f64,
    pub chosen_collective: Collective,
    pub front: Vec<CandidateCR>,
    pub candidates: Vec<CandidateCR>,
}

#[derive(Serialize)]
struct EventRow {
    step: u64,
    trigger: Trigger,
    chosen_c: f64,
    chosen_collective: Collective,
    front_size: usize,
}

pub fn write_events_csv<W: Write>(events: &[ControllerEvent], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if events.is_empty() {
        w.write_record(["step", "trigger", "chosen_c", "chosen_collective", "front_size"]).map_err(csv_err)?;
    }
    for e in events {
        w.serialize(EventRow {
            step: e.step,
            trigger: e.trigger,
            chosen_c: e.chosen_c,
            chosen_collective: e.chosen_collective,
            front_size: e.front.len(),
        })
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Controller {
    cfg: ControllerConfig,
    ladder: Vec<CompressionRatio>,
    model_bytes: f64,
    workers: usize,
    candidates: Vec<CandidateCR>,
    current: Option<CandidateCR>,
    gain_ref: Option<f64>,
    last_net: Option<NetParams>,
    events: Vec<ControllerEvent>,
}

impl Controller {
    pub fn new(cfg: ControllerConfig, model_bytes: f64, workers: usize) -> Result<Self> {
        if workers < 2 {
            return Err(Error::SingleWorker);
        }
        Ok(Controller {
            ladder: candidate_ladder(&cfg)?,
            cfg,
            model_bytes,
            workers,
            candidates: Vec::new(),
            current: None,
            gain_ref: None,
            last_net: None,
            events: Vec::new(),
        })
    }

    pub fn ladder(&self) -> &[CompressionRatio] {
        &self.ladder
    }

    pub fn events(&self) -> &[ControllerEvent] {
        &self.events
    }

    pub fn into_events(self) -> Vec<ControllerEvent> {
        self.events
    }

    fn refresh_sync(&mut self, net: &NetParams) -> Result<()> {
        for cand in &mut self.candidates {
            let cr = CompressionRatio::new(cand.c)?;
            let sel = select_collective(net, &MessageSpec::new(self.model_bytes, cr, self.workers)?)?;
            cand.t_sync_modeled = sel.time();
            cand.collective = sel.collective;
        }
        Ok(())
    }

    fn decide(&mut self, trainer: &mut Trainer, step: u64, trigger: Trigger) -> Result<()> {
        let front = pareto_front(&self.candidates);
        let chosen = choose_cr(&front)?;
        if self.current.map(|c| c.c) != Some(chosen.c) {
            trainer.gains_mut().clear();
            self.gain_ref = Some(chosen.gain_avg);
        }
        info!("step {step}: {trigger:?} -> c={} via {}", chosen.c, chosen.collective);
        self.current = Some(chosen);
        self.events.push(ControllerEvent {
            step,
            trigger,
            chosen_c: chosen.c,
            chosen_collective: chosen.collective,
            front,
            candidates: self.candidates.clone(),
        });
        Ok(())
    }

    /// Called before every training step; returns the ratio and collective to use.
    pub fn on_step(
        &mut self,
        trainer: &mut Trainer,
        clock: &mut SimClock,
        net: NetParams,
    ) -> Result<(CompressionRatio, Collective)> {
        let step = trainer.step_index();
        match self.last_net {
            None => {
                self.candidates = explore(trainer, clock, &self.ladder, self.cfg.probe_iters, &net)?;
                self.decide(trainer, step, Trigger::Gain)?;
            }
            Some(prev) if network_changed(&prev, &net, self.cfg.net_change_threshold) => {
                self.refresh_sync(&net)?;
                self.decide(trainer, step, Trigger::Network)?;
            }
            Some(_) => {
                let full = trainer.gains().len() >= trainer.gains().window();
                if full && trigger_gain(trainer.gains(), self.gain_ref, self.cfg.gain_threshold) {
                    self.candidates = explore(trainer, clock, &self.ladder, self.cfg.probe_iters, &net)?;
                    self.gain_ref = trainer.gains().mean();
                    let cur = self.current.ok_or(Error::NoCandidates)?;
                    let front = pareto_front(&self.candidates);
                    info!("step {step}: gain drift, candidates refreshed");
                    self.events.push(ControllerEvent {
                        step,
                        trigger: Trigger::Gain,
                        chosen_c: cur.c,
                        chosen_collective: cur.collective,
                        front,
                        candidates: self.candidates.clone(),
                    });
                }
            }
        }
        self.last_net = Some(net);
        let cur = self.current.ok_or(Error::NoCandidates)?;
        Ok((CompressionRatio::new(cur.c)?, cur.collective))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(c: f64, t_comp: f64, t_sync: f64, inv_gain: f64) -> CandidateCR {
        CandidateCR { c, gain_avg: 1.0 / inv_gain, t_comp_avg: t_comp, t_sync_modeled: t_sync, collective: Collective::Ag, probe_steps: 1 }
    }

    #[test]
    fn default_ladder() {
        let l: Vec<f64> = candidate_ladder(&ControllerConfig::default()).unwrap().into_iter().map(|c| c.get()).collect();
        assert_eq!(l, vec![0.1, 0.0333, 0.0111, 0.0037, 0.001]);
    }

    #[test]
    fn decade_ladder_and_degenerate() {
        let cfg = ControllerConfig { factor: 10.0, ..Default::default() };
        let l: Vec<f64> = candidate_ladder(&cfg).unwrap().into_iter().map(|c| c.get()).collect();
        assert_eq!(l, vec![0.1, 0.01, 0.001]);
        let cfg = ControllerConfig { c_low: 0.05, c_high: 0.05, ..Default::default() };
        assert_eq!(candidate_ladder(&cfg).unwrap().len(), 1);
        let cfg = ControllerConfig { c_low: 0.5, c_high: 0.05, ..Default::default() };
        assert!(candidate_ladder(&cfg).is_err());
    }

    #[test]
    fn knee_example() {
        let cs = [cand(0.1, 1.0, 9.0, 9.0), cand(0.01, 5.0, 5.0, 5.0), cand(0.001, 9.0, 9.0, 1.0)];
        let front = pareto_front(&cs);
        assert_eq!(front.len(), 3);
        assert_eq!(choose_cr(&front).unwrap().c, 0.01);
    }

    #[test]
    fn dominated_points_drop() {
        let cs = [cand(0.1, 1.0, 1.0, 1.0), cand(0.01, 2.0, 1.0, 1.0), cand(0.001, 1.0, 1.0, 1.0)];
        let front = pareto_front(&cs);
        assert_eq!(front.iter().map(|c| c.c).collect::<Vec<_>>(), vec![0.1, 0.001]);
        // identical objectives tie, larger ratio wins
        assert_eq!(choose_cr(&front).unwrap().c, 0.1);
        assert_eq!(choose_cr(&[]).unwrap_err(), Error::NoCandidates);
    }

    fn tracker(samples: &[f64]) -> GainTracker {
        let mut t = GainTracker::default();
        samples.iter().for_each(|&g| t.push(g));
        t
    }

    #[test]
    fn gain_trigger() {
        assert!(trigger_gain(&tracker(&[0.7, 0.7]), Some(0.8), 0.1));
        assert!(!trigger_gain(&tracker(&[0.75, 0.75]), Some(0.8), 0.1));
        assert!(!trigger_gain(&tracker(&[0.7]), Some(0.8), 0.1));
        assert!(trigger_gain(&tracker(&[0.8, 0.8]), Some(0.8), 0.0));
        assert!(!trigger_gain(&tracker(&[0.7, 0.7]), None, 0.1));
    }
}
