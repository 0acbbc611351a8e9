use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use flexcomm::compress::{CompressionRatio, Compressor};
use flexcomm::cost::{ring_allreduce_cost, NetParams};
use flexcomm::data::Dataset;
use flexcomm::model::{Example, ModelKind, SmallModel};
use flexcomm::moo::{candidate_ladder, explore, ControllerConfig, Trigger};
use flexcomm::netsched::{Category, NetworkSchedule, Segment, SimClock};
use flexcomm::trainer::{run, RatioSetting, TrainConfig, Trainer};

fn net(alpha_ms: f64, gbps: f64) -> NetParams {
    NetParams::from_ms_gbps(alpha_ms, gbps).unwrap()
}

fn blob_task(workers: usize, per_worker: usize, features: usize, classes: usize, sep: f64, seed: u64) -> (SmallModel, Dataset) {
    let model = SmallModel::new(ModelKind::SoftmaxRegression, features, 0, classes).unwrap();
    let data = Dataset::blobs(workers * per_worker, features, classes, sep, seed).unwrap();
    (model, data)
}

#[test]
fn dense_baseline_learns_two_blobs() {
    let (model, data) = blob_task(4, 500, 2, 2, 3.0, 5);
    let cfg = TrainConfig::dense(4, 0.1, 25, 5, 5);
    let sched = NetworkSchedule::constant(net(1.0, 10.0));
    let out = run(cfg, model, data, &sched, None).unwrap();
    assert!(out.final_accuracy >= 0.95, "accuracy {}", out.final_accuracy);
    assert!(out.metrics.last().unwrap().loss < out.metrics[0].loss);
}

#[test]
fn dense_step_is_sgd_on_the_union_batch() {
    // one batch per epoch covering the whole shard, so the union is the full dataset
    let (workers, per) = (4, 30);
    let (model, data) = blob_task(workers, per, 5, 3, 2.0, 8);
    let cfg = TrainConfig::dense(workers, 0.3, per, 1, 8);
    let mut trainer = Trainer::new(cfg.clone(), model, data.clone(), net(1.0, 10.0)).unwrap();
    trainer.step(&trainer.fixed_plan()).unwrap();

    let mut params = model.init_params(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let all: Vec<Example<'_>> = data.iter().collect();
    let (_, g) = model.compute_grad(&params, &all).unwrap();
    for (p, gi) in params.iter_mut().zip(g.values()) {
        *p -= cfg.eta * gi;
    }
    for w in 0..workers {
        for (a, b) in trainer.params(w).iter().zip(&params) {
            assert!((a - b).abs() <= 1e-12, "worker {w}: {a} vs {b}");
        }
    }
}

fn compressed_trainer(c: f64) -> Trainer {
    let (model, data) = blob_task(4, 100, 20, 5, 1.0, 3);
    let mut cfg = TrainConfig::dense(4, 0.1, 10, 3, 3);
    cfg.compressor = Some(Compressor::Exact);
    cfg.ratio = RatioSetting::Fixed(CompressionRatio::new(c).unwrap());
    Trainer::new(cfg, model, data, net(1.0, 10.0)).unwrap()
}

#[test]
fn exploration_leaves_training_untouched() {
    let ladder = candidate_ladder(&ControllerConfig::default()).unwrap();
    assert_eq!(ladder.len(), 5);

    let mut probed = compressed_trainer(0.05);
    let mut plain = compressed_trainer(0.05);
    let plan = probed.fixed_plan();
    for _ in 0..3 {
        probed.step(&plan).unwrap();
        plain.step(&plan).unwrap();
    }

    let before = probed.snapshot();
    let step_before = probed.step_index();
    let mut clock = SimClock::new();
    let cands = explore(&mut probed, &mut clock, &ladder, 10, &net(1.0, 10.0)).unwrap();
    assert_eq!(cands.len(), 5);
    assert_eq!(cands.iter().map(|c| c.probe_steps).sum::<u32>(), 50);
    assert!(probed.snapshot() == before);
    assert_eq!(probed.step_index(), step_before);
    assert!(clock.total(Category::Exploration) > 0.0);
    assert_eq!(clock.total(Category::Sync), 0.0);

    for _ in 0..5 {
        let (a, _) = probed.step(&plan).unwrap();
        let (b, _) = plain.step(&plan).unwrap();
        assert_eq!(a.loss, b.loss);
    }
    assert_eq!(probed.params(0), plain.params(0));
}

#[test]
fn network_change_fires_on_the_first_step_of_the_epoch() {
    let (model, data) = blob_task(4, 100, 20, 5, 1.0, 4);
    let mut cfg = TrainConfig::dense(4, 0.1, 10, 5, 4);
    cfg.compressor = Some(Compressor::Exact);
    cfg.ratio = RatioSetting::Adaptive;
    cfg.model_bytes = Some(45.5e6);
    let sched = NetworkSchedule::new(vec![
        Segment { start_epoch: 0, net: net(1.0, 25.0) },
        Segment { start_epoch: 3, net: net(50.0, 1.0) },
    ])
    .unwrap();
    let ctl = ControllerConfig { probe_iters: 2, ..ControllerConfig::default() };
    let out = run(cfg, model, data, &sched, Some(ctl)).unwrap();
    let net_steps: Vec<u64> =
        out.events.iter().filter(|e| e.trigger == Trigger::Network).map(|e| e.step).collect();
    assert_eq!(net_steps, vec![30]);
    assert_eq!(out.events[0].step, 0);
    assert_eq!(out.events[0].trigger, Trigger::Gain);
}

#[test]
fn error_feedback_report() {
    let (model, data) = blob_task(4, 200, 50, 10, 0.5, 6);
    let mut losses = Vec::new();
    for ef in [true, false] {
        let mut cfg = TrainConfig::dense(4, 0.1, 10, 4, 6);
        cfg.compressor = Some(Compressor::Exact);
        cfg.ratio = RatioSetting::Fixed(CompressionRatio::new(0.01).unwrap());
        cfg.error_feedback = ef;
        let out = run(cfg, model, data.clone(), &NetworkSchedule::constant(net(1.0, 10.0)), None).unwrap();
        losses.push(out.final_loss);
    }
    eprintln!("c=0.01 final loss: error feedback {:.4}, without {:.4}", losses[0], losses[1]);
    assert!(losses.iter().all(|l| l.is_finite()));
}

#[test]
fn dense_sync_time_is_ring_cost_per_step() {
    let (model, data) = blob_task(8, 40, 10, 4, 2.0, 2);
    let mut cfg = TrainConfig::dense(8, 0.1, 8, 2, 2);
    cfg.model_bytes = Some(1e8);
    let n = net(5.0, 10.0);
    let out = run(cfg, model, data, &NetworkSchedule::constant(n), None).unwrap();
    let summary = out.summary();
    let expected = summary.steps as f64 * ring_allreduce_cost(&n, 1e8, 8);
    let got = summary.simulated_seconds["sync"];
    assert!((got - expected).abs() <= 1e-9 * expected, "{got} vs {expected}");
    assert_eq!(summary.iterations_per_collective["RING_AR"], summary.steps);
}
