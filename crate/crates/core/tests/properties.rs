use proptest::prelude::*;

use flexcomm::compress::{
    compression_gain, error_feedback, residual_update, topk_exact, topk_layerwise, CompressionRatio,
};
use flexcomm::cost::{
    closed_form_prefers, cost_primitives, crossover_cr, select_collective, Collective, Crossover, MessageSpec,
    NetParams, Pair,
};
use flexcomm::grad::{densify, flatten, DenseGrad};
use flexcomm::moo::{choose_cr, pareto_front, CandidateCR};
use flexcomm::netsched::{NetworkSchedule, Segment};

fn net_strategy() -> impl Strategy<Value = NetParams> {
    (0.01f64..300.0, 0.1f64..100.0).prop_map(|(a, b)| NetParams::from_ms_gbps(a, b).unwrap())
}

fn grad_strategy(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, 1..max_len)
}

fn cr_strategy() -> impl Strategy<Value = CompressionRatio> {
    (-4.0f64..0.0).prop_map(|e| CompressionRatio::new(10f64.powf(e)).unwrap())
}

proptest! {
    #[test]
    fn selector_is_argmin_and_matches_closed_form(
        net in net_strategy(),
        bytes in 1e3f64..1e10,
        n in 2usize..512,
        c in cr_strategy(),
    ) {
        let msg = MessageSpec::new(bytes, c, n).unwrap();
        let sel = select_collective(&net, &msg).unwrap();
        let costs = cost_primitives(&net, &msg);
        for other in Collective::ALL {
            prop_assert!(sel.time() <= costs.of(other));
        }
        for pair in Pair::ALL {
            let (p, o) = (costs.of(pair.preferred()), costs.of(pair.other()));
            if (p - o).abs() > 1e-9 * p.max(o) {
                prop_assert_eq!(closed_form_prefers(pair, &net, &msg).unwrap(), p < o);
            }
        }
    }

    #[test]
    fn crossover_separates_regimes(net in net_strategy(), bytes in 1e5f64..1e10, n in 3usize..256) {
        for pair in Pair::ALL {
            if let Crossover::At(c_star) = crossover_cr(&net, bytes, n, pair).unwrap() {
                let above = c_star * 1.01;
                if c_star > 0.0 && above <= 1.0 {
                    let msg = MessageSpec::new(bytes, CompressionRatio::new(above).unwrap(), n).unwrap();
                    prop_assert!(closed_form_prefers(pair, &net, &msg).unwrap());
                }
                let below = c_star * 0.99;
                if below > 0.0 {
                    let msg = MessageSpec::new(bytes, CompressionRatio::new(below).unwrap(), n).unwrap();
                    prop_assert!(!closed_form_prefers(pair, &net, &msg).unwrap());
                }
            }
        }
    }

    #[test]
    fn topk_keeps_the_largest(v in grad_strategy(400), c in cr_strategy()) {
        let g = DenseGrad::from_values(v.clone()).unwrap();
        let s = topk_exact(&g, c).unwrap();
        prop_assert_eq!(s.nnz(), c.k(v.len()));
        prop_assert!(s.indices().windows(2).all(|w| w[0] < w[1]));
        let min_kept = s.values().iter().map(|x| x.abs()).fold(f64::INFINITY, f64::min);
        for (i, x) in v.iter().enumerate() {
            if s.indices().binary_search(&i).is_err() {
                prop_assert!(x.abs() <= min_kept);
            }
        }
    }

    #[test]
    fn layerwise_respects_layer_budgets(
        layers in prop::collection::vec(grad_strategy(60), 1..6),
        c in cr_strategy(),
    ) {
        let g = flatten(&layers).unwrap();
        let s = topk_layerwise(&g, c).unwrap();
        for span in g.layers() {
            let in_layer = s.indices().iter().filter(|&&i| i >= span.offset && i < span.offset + span.len).count();
            prop_assert_eq!(in_layer, c.k(span.len));
        }
    }

    #[test]
    fn gain_is_bounded_and_monotone(v in grad_strategy(300), e1 in -4.0f64..0.0, e2 in -4.0f64..0.0) {
        let g = DenseGrad::from_values(v).unwrap();
        prop_assume!(g.norm_sq() > 0.0);
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let gain = |e: f64| {
            let c = CompressionRatio::new(10f64.powf(e)).unwrap();
            compression_gain(&g, &topk_exact(&g, c).unwrap()).unwrap()
        };
        let (a, b) = (gain(lo), gain(hi));
        prop_assert!(a > 0.0 && b <= 1.0 && a <= b);
    }

    #[test]
    fn error_feedback_conserves_mass(v in grad_strategy(200), r in grad_strategy(200), c in cr_strategy()) {
        let len = v.len().min(r.len());
        let g_o = DenseGrad::from_values(v[..len].to_vec()).unwrap();
        let g_e = error_feedback(&g_o, &r[..len]).unwrap();
        let g_c = topk_exact(&g_e, c).unwrap();
        let residual = residual_update(&g_e, &g_c).unwrap();
        let dense = densify(&g_c).unwrap();
        for i in 0..len {
            prop_assert_eq!(dense.values()[i] + residual[i], g_e.values()[i]);
        }
    }

    #[test]
    fn pareto_front_matches_brute_force(
        pts in prop::collection::vec((0u8..6, 0u8..6, 1u8..6), 1..8),
    ) {
        let cands: Vec<CandidateCR> = pts
            .iter()
            .enumerate()
            .map(|(i, &(a, b, g))| CandidateCR {
                c: 0.1 / (i + 1) as f64,
                gain_avg: g as f64 / 5.0,
                t_comp_avg: a as f64,
                t_sync_modeled: b as f64,
                collective: Collective::Ag,
                probe_steps: 1,
            })
            .collect();
        let obj = |x: &CandidateCR| [x.t_comp_avg, x.t_sync_modeled, 1.0 / x.gain_avg];
        let brute: Vec<f64> = cands
            .iter()
            .filter(|a| !cands.iter().any(|b| {
                let (oa, ob) = (obj(a), obj(b));
                (0..3).all(|d| ob[d] <= oa[d]) && (0..3).any(|d| ob[d] < oa[d])
            }))
            .map(|a| a.c)
            .collect();
        let front = pareto_front(&cands);
        prop_assert_eq!(front.iter().map(|c| c.c).collect::<Vec<_>>(), brute.clone());
        let chosen = choose_cr(&front).unwrap();
        prop_assert!(brute.contains(&chosen.c));
    }

    #[test]
    fn trace_roundtrip(
        starts in prop::collection::btree_set(1u64..500, 0..6),
        a in 0.1f64..100.0,
        b in 0.1f64..100.0,
    ) {
        let mut segments = vec![Segment { start_epoch: 0, net: NetParams::from_ms_gbps(a, b).unwrap() }];
        for (i, s) in starts.iter().enumerate() {
            let net = NetParams::from_ms_gbps(a * (i + 2) as f64, b / (i + 2) as f64).unwrap();
            segments.push(Segment { start_epoch: *s, net });
        }
        let sched = NetworkSchedule::new(segments).unwrap();
        let back = NetworkSchedule::parse(&sched.to_trace()).unwrap();
        prop_assert_eq!(back.segments().len(), sched.segments().len());
        for (x, y) in back.segments().iter().zip(sched.segments()) {
            prop_assert_eq!(x.start_epoch, y.start_epoch);
            prop_assert!((x.net.alpha - y.net.alpha).abs() <= 1e-12 * y.net.alpha);
            prop_assert!((x.net.bandwidth - y.net.bandwidth).abs() <= 1e-9 * y.net.bandwidth);
        }
    }
}
