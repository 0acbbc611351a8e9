//! Synchronous data-parallel SGD over simulated workers.
//!
//! Gradients are computed for real on desk-scale models; communication time
//! comes from the cost model, and compute/compression time is either modeled
//! (deterministic, the default) or measured from wall time.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::artopk::{ag_step, artopk_step, csv_err, AgParams, ArtopkParams, SelectionLog, SelectionMode, WireSizing};
use crate::collectives::{Cluster, ReduceOp};
use crate::compress::{CompressionRatio, Compressor, GainTracker};
use crate::cost::{Collective, NetParams, ReduceAlgo};
use crate::data::{Dataset, Sampler};
use crate::error::{Error, Result};
use crate::grad::{DenseGrad, ModelState, ResidualStore};
use crate::model::{sgd_update, Example, SmallModel};
use crate::moo::{Controller, ControllerConfig, ControllerEvent};
use crate::netsched::{Category, NetworkSchedule, SimClock};

/// How gradients are exchanged when the ratio is fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggMode {
    Star,
    Var,
    Ag,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RatioSetting {
    Fixed(CompressionRatio),
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Timing {
    /// Fixed compute time per step and a per-element cost for compression.
    Modeled { compute_s: f64, comp_s_per_elem: f64 },
    /// Wall-clock measurements folded into simulated time.
    Measured,
}

impl Default for Timing {
    fn default() -> Self {
        Timing::Modeled { compute_s: 0.02, comp_s_per_elem: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub workers: usize,
    pub eta: f64,
    pub batch: usize,
    pub epochs: u64,
    /// `(epoch, factor)`: from `epoch` on, the step size is multiplied by `factor`.
    pub decay: Vec<(u64, f64)>,
    pub momentum: f64,
    pub seed: u64,
    /// `None` trains uncompressed with a dense allreduce.
    pub compressor: Option<Compressor>,
    pub ratio: RatioSetting,
    pub mode: AggMode,
    pub reduce_algo: ReduceAlgo,
    pub reduce_op: ReduceOp,
    pub error_feedback: bool,
    pub t_io: f64,
    pub timing: Timing,
    pub model_bytes: Option<f64>,
    pub threads: usize,
    pub gain_window: usize,
}

impl TrainConfig {
    pub fn dense(workers: usize, eta: f64, batch: usize, epochs: u64, seed: u64) -> Self {
        TrainConfig {
            workers,
            eta,
            batch,
            epochs,
            decay: Vec::new(),
            momentum: 0.0,
            seed,
            compressor: None,
            ratio: RatioSetting::Fixed(CompressionRatio::FULL),
            mode: AggMode::Star,
            reduce_algo: ReduceAlgo::Ring,
            reduce_op: ReduceOp::Avg,
            error_feedback: true,
            t_io: 0.0,
            timing: Timing::default(),
            model_bytes: None,
            threads: 1,
            gain_window: GainTracker::DEFAULT_WINDOW,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("eta must be > 0, got {}", self.eta)));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.t_io >= 0.0) {
            return Err(Error::Config("t_io must be >= 0".into()));
        }
        if self.ratio == RatioSetting::Adaptive {
            if self.compressor.is_none() {
                return Err(Error::Config("adaptive ratio needs a compression method".into()));
            }
            if self.workers < 2 {
                return Err(Error::Config("adaptive ratio needs at least 2 workers".into()));
            }
        }
        Ok(())
    }

    pub fn eta_at(&self, epoch: u64) -> f64 {
        self.decay.iter().filter(|(e, _)| *e <= epoch).fold(self.eta, |eta, (_, f)| eta * f)
    }
}

/// What one step does with the per-worker gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepPlan {
    Dense { algo: ReduceAlgo, op: ReduceOp },
    Artopk(ArtopkParams),
    Ag(AgParams),
}

impl StepPlan {
    pub fn label(&self) -> &'static str {
        match self {
            StepPlan::Dense { algo: ReduceAlgo::Ring, .. } => "RING_AR",
            StepPlan::Dense { algo: ReduceAlgo::Tree, .. } => "TREE_AR",
            StepPlan::Artopk(p) if p.algo == ReduceAlgo::Ring => "ART_RING",
            StepPlan::Artopk(_) => "ART_TREE",
            StepPlan::Ag(_) => "AG",
        }
    }

    pub fn cr(&self) -> CompressionRatio {
        match self {
            StepPlan::Dense { .. } => CompressionRatio::FULL,
            StepPlan::Artopk(p) => p.cr,
            StepPlan::Ag(p) => p.cr,
        }
    }
}

/// One row of the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepMetrics {
    pub step: u64,
    pub loss: f64,
    pub t_compute: f64,
    pub t_comp_decomp: f64,
    pub t_sync: f64,
    pub t_io: f64,
    pub t_step: f64,
    pub gain: Option<f64>,
    pub cr_used: f64,
    pub collective_used: String,
    pub selected_rank: Option<usize>,
}

pub fn write_metrics_csv<W: Write>(rows: &[StepMetrics], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    if rows.is_empty() {
        w.write_record([
            "step", "loss", "t_compute", "t_comp_decomp", "t_sync", "t_io", "t_step", "gain", "cr_used",
            "collective_used", "selected_rank",
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
struct Worker {
    state: ModelState,
    velocity: Vec<f64>,
    sampler: Sampler,
}

/// Deep copy of everything a probe step can touch.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    workers: Vec<Worker>,
    residuals: ResidualStore,
    gains: GainTracker,
}

pub struct Trainer {
    cfg: TrainConfig,
    model: SmallModel,
    data: Dataset,
    workers: Vec<Worker>,
    residuals: ResidualStore,
    gains: GainTracker,
    cluster: Cluster,
    sizing: WireSizing,
    steps_per_epoch: usize,
    pool: Option<rayon::ThreadPool>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, model: SmallModel, data: Dataset, net: NetParams) -> Result<Self> {
        cfg.validate()?;
        if data.features() != model.features {
            return Err(Error::Config(format!(
                "dataset has {} features, model expects {}",
                data.features(),
                model.features
            )));
        }
        if data.num_classes() > model.classes {
            return Err(Error::Config(format!(
                "dataset has {} classes, model has {}",
                data.num_classes(),
                model.classes
            )));
        }
        let shards = data.shard(cfg.workers)?;
        let steps_per_epoch = shards[0].len / cfg.batch;
        if steps_per_epoch == 0 {
            return Err(Error::Config(format!(
                "batch {} exceeds shard size {}",
                cfg.batch, shards[0].len
            )));
        }
        let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let params = model.init_params(&mut init_rng);
        let workers = shards
            .iter()
            .enumerate()
            .map(|(r, &shard)| Worker {
                state: ModelState::new(params.clone(), cfg.seed.wrapping_add(1 + r as u64)),
                velocity: vec![0.0; params.len()],
                sampler: Sampler::new(shard),
            })
            .collect();
        let pool = if cfg.threads > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(cfg.threads)
                    .build()
                    .map_err(|e| Error::Config(e.to_string()))?,
            )
        } else {
            None
        };
        Ok(Trainer {
            residuals: ResidualStore::zeros(cfg.workers, params.len()),
            gains: GainTracker::new(cfg.gain_window),
            cluster: Cluster::new(cfg.workers, net)?,
            sizing: WireSizing::new(params.len(), cfg.model_bytes),
            steps_per_epoch,
            workers,
            model,
            data,
            cfg,
            pool,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn step_index(&self) -> u64 {
        self.workers[0].state.step
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.steps_per_epoch
    }

    pub fn total_steps(&self) -> u64 {
        self.cfg.epochs * self.steps_per_epoch as u64
    }

    pub fn epoch(&self) -> u64 {
        self.step_index() / self.steps_per_epoch as u64
    }

    pub fn sizing(&self) -> &WireSizing {
        &self.sizing
    }

    pub fn gains(&self) -> &GainTracker {
        &self.gains
    }

    pub fn gains_mut(&mut self) -> &mut GainTracker {
        &mut self.gains
    }

    pub fn residuals(&self) -> &ResidualStore {
        &self.residuals
    }

    pub fn params(&self, worker: usize) -> &[f64] {
        &self.workers[worker].state.params
    }

    pub fn set_net(&mut self, net: NetParams) {
        self.cluster.set_net(net);
    }

    pub fn net(&self) -> NetParams {
        self.cluster.net()
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot { workers: self.workers.clone(), residuals: self.residuals.clone(), gains: self.gains.clone() }
    }

    pub fn restore(&mut self, snap: Snapshot) {
        self.workers = snap.workers;
        self.residuals = snap.residuals;
        self.gains = snap.gains;
    }

    /// Plan for the configured fixed mode.
    pub fn fixed_plan(&self) -> StepPlan {
        match (self.cfg.compressor, self.cfg.ratio) {
            (None, _) => StepPlan::Dense { algo: self.cfg.reduce_algo, op: self.cfg.reduce_op },
            (Some(_), RatioSetting::Fixed(cr)) => {
                let collective = match (self.cfg.mode, self.cfg.reduce_algo) {
                    (AggMode::Ag, _) => Collective::Ag,
                    (_, ReduceAlgo::Ring) => Collective::ArtRing,
                    (_, ReduceAlgo::Tree) => Collective::ArtTree,
                };
                self.plan_for(cr, collective)
            }
            (Some(_), RatioSetting::Adaptive) => {
                // the controller replaces this before the first step
                self.plan_for(CompressionRatio::FULL, Collective::ArtRing)
            }
        }
    }

    /// Plan for a compressed exchange at ratio `cr` over `collective`.
    pub fn plan_for(&self, cr: CompressionRatio, collective: Collective) -> StepPlan {
        let mode = match self.cfg.mode {
            AggMode::Var => SelectionMode::Var,
            AggMode::Star | AggMode::Ag => SelectionMode::Star,
        };
        let art = |algo| {
            StepPlan::Artopk(ArtopkParams {
                cr,
                mode,
                algo,
                op: self.cfg.reduce_op,
                error_feedback: self.cfg.error_feedback,
            })
        };
        match collective {
            Collective::Ag => StepPlan::Ag(AgParams {
                cr,
                compressor: self.cfg.compressor.unwrap_or(Compressor::Exact),
                op: self.cfg.reduce_op,
                error_feedback: self.cfg.error_feedback,
            }),
            Collective::ArtRing => art(ReduceAlgo::Ring),
            Collective::ArtTree => art(ReduceAlgo::Tree),
        }
    }

    fn modeled_comp_time(&self, plan: &StepPlan, comp_s_per_elem: f64) -> f64 {
        let g = self.sizing.modeled_len();
        let topk = |cr: CompressionRatio| g + cr.get() * g * g.max(2.0).log2();
        let elems = match plan {
            StepPlan::Dense { .. } => 0.0,
            StepPlan::Artopk(p) => topk(p.cr),
            StepPlan::Ag(p) => match p.compressor {
                Compressor::Exact | Compressor::Layerwise => topk(p.cr),
                Compressor::Threshold { rounds } => (rounds as f64 + 1.0) * g,
            },
        };
        elems * comp_s_per_elem
    }

    fn local_gradients(&mut self) -> Result<(Vec<f64>, Vec<DenseGrad>)> {
        let step = self.step_index();
        let spe = self.steps_per_epoch;
        let epoch = step / spe as u64;
        let batch_idx = (step % spe as u64) as usize;
        let batch = self.cfg.batch;
        let batches: Vec<Vec<usize>> = self
            .workers
            .iter_mut()
            .map(|w| w.sampler.batch(&mut w.state.rng, epoch, batch_idx, batch))
            .collect();
        let model = self.model;
        let data = &self.data;
        let workers = &self.workers;
        let compute = |r: usize| -> Result<(f64, DenseGrad)> {
            let examples: Vec<Example<'_>> = batches[r].iter().map(|&i| data.example(i)).collect();
            model.compute_grad(&workers[r].state.params, &examples)
        };
        let results: Vec<Result<(f64, DenseGrad)>> = match &self.pool {
            Some(pool) => pool.install(|| (0..workers.len()).into_par_iter().map(compute).collect()),
            None => (0..workers.len()).map(compute).collect(),
        };
        let mut losses = Vec::with_capacity(results.len());
        let mut grads = Vec::with_capacity(results.len());
        for res in results {
            let (l, g) = res.map_err(|e| match e {
                Error::NonFinite(_) => Error::Diverged { step, loss: f64::NAN },
                other => other,
            })?;
            losses.push(l);
            grads.push(g);
        }
        Ok((losses, grads))
    }

    /// Runs one synchronous step under `plan` and advances every replica.
    pub fn step(&mut self, plan: &StepPlan) -> Result<(StepMetrics, Vec<usize>)> {
        let step = self.step_index();
        let epoch = self.epoch();

        let t0 = Instant::now();
        let (losses, g_o) = self.local_gradients()?;
        let measured_compute = t0.elapsed().as_secs_f64();
        let loss = losses.iter().sum::<f64>() / losses.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }

        let mut clock = SimClock::new();
        let t1 = Instant::now();
        let (aggregates, selected, gain) = match plan {
            StepPlan::Dense { algo, op } => {
                let vectors: Vec<Vec<f64>> = g_o.iter().map(|g| g.values().to_vec()).collect();
                let bytes = self.sizing.bytes_for(self.sizing.grad_len());
                let out = self.cluster.allreduce(&mut clock, &vectors, *op, *algo, bytes)?;
                (out, None, Some(1.0))
            }
            StepPlan::Artopk(p) => {
                let out = artopk_step(&self.cluster, &mut clock, &self.sizing, step, &g_o, &mut self.residuals, p)?;
                (out.aggregates, out.selected_rank, out.gain)
            }
            StepPlan::Ag(p) => {
                let out = ag_step(&self.cluster, &mut clock, &self.sizing, &g_o, &mut self.residuals, p)?;
                (out.aggregates, None, out.gain)
            }
        };
        let measured_comp = t1.elapsed().as_secs_f64();

        let eta = self.cfg.eta_at(epoch);
        let mu = self.cfg.momentum;
        for (w, agg) in self.workers.iter_mut().zip(&aggregates) {
            let velocity = if mu > 0.0 { Some((w.velocity.as_mut_slice(), mu)) } else { None };
            sgd_update(&mut w.state.params, agg, eta, velocity)?;
            w.state.advance();
        }
        if let Some(g) = gain {
            self.gains.push(g);
        }

        let (t_compute, t_comp_decomp) = match self.cfg.timing {
            Timing::Modeled { compute_s, comp_s_per_elem } => {
                (compute_s, self.modeled_comp_time(plan, comp_s_per_elem))
            }
            Timing::Measured => {
                let comp = if matches!(plan, StepPlan::Dense { .. }) { 0.0 } else { measured_comp };
                (measured_compute, comp)
            }
        };
        let t_sync = clock.total(Category::Sync);
        let t_io = self.cfg.t_io;
        let metrics = StepMetrics {
            step,
            loss,
            t_compute,
            t_comp_decomp,
            t_sync,
            t_io,
            t_step: t_compute + t_sync + t_io + t_comp_decomp,
            gain,
            cr_used: plan.cr().get(),
            collective_used: plan.label().to_string(),
            selected_rank: selected,
        };
        let kept = match plan {
            StepPlan::Dense { .. } => Vec::new(),
            _ => aggregates[0].iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, _)| i).collect(),
        };
        Ok((metrics, kept))
    }

    /// Largest elementwise difference between any replica and rank 0.
    pub fn replica_divergence(&self) -> f64 {
        let base = &self.workers[0].state.params;
        self.workers[1..]
            .iter()
            .flat_map(|w| w.state.params.iter().zip(base).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max)
    }

    /// Mean loss and accuracy of rank 0's replica over the whole dataset.
    pub fn evaluate(&self) -> Result<(f64, f64)> {
        let params = &self.workers[0].state.params;
        let examples: Vec<Example<'_>> = self.data.iter().collect();
        let (loss, _) = self.model.compute_grad(params, &examples)?;
        Ok((loss, self.model.accuracy(params, examples)))
    }
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub metrics: Vec<StepMetrics>,
    pub selection: SelectionLog,
    pub events: Vec<ControllerEvent>,
    pub clock: SimClock,
    pub final_params: Vec<f64>,
    pub final_loss: f64,
    pub final_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub steps: u64,
    pub final_loss: f64,
    pub final_accuracy: f64,
    pub last_step_loss: f64,
    pub simulated_seconds: BTreeMap<String, f64>,
    pub iterations_per_cr: BTreeMap<String, u64>,
    pub iterations_per_collective: BTreeMap<String, u64>,
    pub selection_counts: Vec<u64>,
    pub controller_events: usize,
    pub network_events: usize,
    pub gain_events: usize,
}

impl RunArtifacts {
    pub fn summary(&self) -> RunSummary {
        let mut simulated_seconds: BTreeMap<String, f64> =
            Category::ALL.iter().map(|c| (c.as_str().to_string(), self.clock.total(*c))).collect();
        simulated_seconds.insert("total".into(), self.clock.now());
        let mut per_cr = BTreeMap::new();
        let mut per_collective = BTreeMap::new();
        for m in &self.metrics {
            *per_cr.entry(m.cr_used.to_string()).or_insert(0) += 1;
            *per_collective.entry(m.collective_used.clone()).or_insert(0) += 1;
        }
        let network_events = self.events.iter().filter(|e| e.trigger == crate::moo::Trigger::Network).count();
        RunSummary {
            steps: self.metrics.len() as u64,
            final_loss: self.final_loss,
            final_accuracy: self.final_accuracy,
            last_step_loss: self.metrics.last().map_or(f64::NAN, |m| m.loss),
            simulated_seconds,
            iterations_per_cr: per_cr,
            iterations_per_collective: per_collective,
            selection_counts: self.selection.counts().to_vec(),
            controller_events: self.events.len(),
            network_events,
            gain_events: self.events.len() - network_events,
        }
    }
}

/// Trains for `cfg.epochs` epochs under `schedule`; with an adaptive ratio
/// the controller picks the ratio and collective.
pub fn run(
    cfg: TrainConfig,
    model: SmallModel,
    data: Dataset,
    schedule: &NetworkSchedule,
    controller: Option<ControllerConfig>,
) -> Result<RunArtifacts> {
    let mut trainer = Trainer::new(cfg, model, data, schedule.params_at(0))?;
    let mut controller = match trainer.config().ratio {
        RatioSetting::Adaptive => Some(Controller::new(controller.unwrap_or_default(), trainer.sizing().model_bytes(), trainer.config().workers)?),
        RatioSetting::Fixed(_) => None,
    };
    let fixed = trainer.fixed_plan();
    let mut clock = SimClock::new();
    let mut metrics = Vec::with_capacity(trainer.total_steps() as usize);
    let mut selection = SelectionLog::new(trainer.config().workers);

    for _ in 0..trainer.total_steps() {
        let net = schedule.params_at(trainer.epoch());
        trainer.set_net(net);
        let plan = match controller.as_mut() {
            Some(ctl) => {
                let (cr, collective) = ctl.on_step(&mut trainer, &mut clock, net)?;
                trainer.plan_for(cr, collective)
            }
            None => fixed,
        };
        let (row, _) = trainer.step(&plan)?;
        clock.charge(Category::Compute, row.t_compute)?;
        clock.charge(Category::Sync, row.t_sync)?;
        clock.charge(Category::Compression, row.t_comp_decomp)?;
        clock.charge(Category::Io, row.t_io)?;
        if let Some(rank) = row.selected_rank {
            selection.record(row.step, rank);
        }
        let divergence = trainer.replica_divergence();
        if divergence != 0.0 {
            warn!("replicas diverged by {divergence} at step {}", row.step);
            return Err(Error::Config(format!("replica divergence {divergence} at step {}", row.step)));
        }
        metrics.push(row);
    }

    let (final_loss, final_accuracy) = trainer.evaluate()?;
    Ok(RunArtifacts {
        metrics,
        selection,
        events: controller.map(Controller::into_events).unwrap_or_default(),
        clock,
        final_params: trainer.params(0).to_vec(),
        final_loss,
        final_accuracy,
    })
}
