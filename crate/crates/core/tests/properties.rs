use std::sync::Arc;

use proptest::prelude::*;

use cantestbed::attack::{parse_replay, write_replay, AttackProfile, ReplayOptions, ReplayRecord, ReplayTrace};
use cantestbed::can::{
    arbitration_winner, crc15, decode_frame, encode_frame, frame_duration, stuffable_bits, CanFrame, Level,
};
use cantestbed::ecu::{EcuConfig, Role};
use cantestbed::ids::{
    classify, mlp_infer, quantise_weight, CostProfile, FeatureWindow, QuantLayer, QuantMlpModel, ReceivedFrame,
    Requant, Strategy as Deployment, FEATURE_LEN, MODEL_FORMAT_VERSION, WINDOW_FRAMES,
};
use cantestbed::monitor::{compute_metrics, vcd_timescale, MetricsReport};
use cantestbed::sim::{resolve_bus, Drive, SimConfig, Simulation, ATTACKER_PORT};
use cantestbed::{Bitrate, SimTime, TrafficClass};

fn frame() -> impl Strategy<Value = CanFrame> {
    prop_oneof![
        (0u16..=0x7FF, prop::collection::vec(any::<u8>(), 0..=8)).prop_map(|(id, p)| CanFrame::new(id, &p).unwrap()),
        (0u16..=0x7FF, 0u8..=8).prop_map(|(id, dlc)| CanFrame::remote(id, dlc).unwrap()),
    ]
}

fn class() -> impl Strategy<Value = TrafficClass> {
    (0usize..4).prop_map(|i| TrafficClass::ALL[i])
}

fn model() -> impl Strategy<Value = QuantMlpModel> {
    (prop::collection::vec(1usize..=12, 4), 1u8..=8, any::<u64>()).prop_map(|(hidden, bits, seed)| {
        let mut dims = vec![FEATURE_LEN];
        dims.extend(hidden);
        dims.push(4);
        // Xorshift fill from one seed.
        let mut s = seed | 1;
        let mut next = move || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            s
        };
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| QuantLayer {
                inputs: d[0],
                outputs: d[1],
                weight_scale: 0.1,
                weights: (0..d[0] * d[1]).map(|_| (next() % 16) as i8 - 8).collect(),
                biases: (0..d[1]).map(|_| (next() % 2001) as i32 - 1000).collect(),
                requant: (i < 4).then(|| Requant { multiplier: (next() % (1 << 30)) as i32 + 1, shift: 20 + (next() % 16) as u8 }),
            })
            .collect();
        QuantMlpModel { format_version: MODEL_FORMAT_VERSION, input_scale: 1.0, activation_bits: bits, layers }
    })
}

proptest! {
    #[test]
    fn frame_constructor_enforces_limits(id in any::<u16>(), len in 0usize..12, dlc in 0u8..12) {
        let payload = vec![0xA5; len];
        match CanFrame::new(id, &payload) {
            Ok(f) => {
                prop_assert!(id <= 0x7FF && len <= 8);
                prop_assert_eq!(usize::from(f.dlc()), len);
                prop_assert_eq!(f.payload().len(), len);
            }
            Err(_) => prop_assert!(id > 0x7FF || len > 8),
        }
        match CanFrame::remote(id, dlc) {
            Ok(f) => {
                prop_assert!(id <= 0x7FF && dlc <= 8);
                prop_assert_eq!(f.dlc(), dlc);
                prop_assert!(f.payload().is_empty());
            }
            Err(_) => prop_assert!(id > 0x7FF || dlc > 8),
        }
    }

    #[test]
    fn codec_round_trip_and_stuffing(f in frame()) {
        let bs = encode_frame(&f);
        prop_assert_eq!(decode_frame(bs.bits()).unwrap(), f.clone());
        let stuffed = &bs.bits()[..bs.stuffed_len()];
        prop_assert!(!stuffed.windows(6).any(|w| w.iter().all(|&b| b == w[0])));
        prop_assert!(bs.stuff_count() <= (stuffable_bits(f.dlc(), f.is_remote()) - 1) / 4);
        prop_assert_eq!(bs.len() as u32, bs.nominal_bits() + bs.stuff_count());
        prop_assert_eq!(frame_duration(&f).ticks(), bs.len() as u64);
    }

    #[test]
    fn corrupted_crc_is_rejected(f in frame(), flip in 0usize..15) {
        let bs = encode_frame(&f);
        // The 15 CRC bits sit right before the stuffed region ends; flip one
        // of them by counting unstuffed positions from the end.
        let stuffed = bs.stuffed_len();
        let mut bits = bs.bits().to_vec();
        let mut seen = 0;
        let mut run = (Level::Recessive, 0usize);
        let mut positions = Vec::new();
        for (i, &b) in bits[..stuffed].iter().enumerate() {
            if run.1 == 5 {
                run = (b, 1);
                continue;
            }
            positions.push(i);
            run = if b == run.0 { (b, run.1 + 1) } else { (b, 1) };
            seen += 1;
        }
        prop_assert_eq!(seen, stuffable_bits(f.dlc(), f.is_remote()) as usize);
        let pos = positions[positions.len() - 15 + flip];
        bits[pos] = bits[pos].flip();
        prop_assert!(decode_frame(&bits).is_err());
    }

    #[test]
    fn crc_fits_fifteen_bits(bits in prop::collection::vec(any::<bool>().prop_map(Level::from_bit), 0..200)) {
        prop_assert!(crc15(bits) < 1 << 15);
    }

    #[test]
    fn arbitration_is_min_id(ids in prop::collection::btree_set(0u16..=0x7FF, 1..12)) {
        let frames: Vec<CanFrame> = ids.iter().rev().map(|&id| CanFrame::new(id, &[1, 2]).unwrap()).collect();
        let w = arbitration_winner(&frames).unwrap();
        prop_assert_eq!(frames[w].id(), *ids.iter().next().unwrap());
    }

    #[test]
    fn bus_is_wired_and(drivers in prop::collection::vec(prop_oneof![
        Just(Drive::Idle),
        Just(Drive::Level(Level::Dominant)),
        Just(Drive::Level(Level::Recessive)),
    ], 0..10)) {
        let dominant = drivers.contains(&Drive::Level(Level::Dominant));
        prop_assert_eq!(resolve_bus(&drivers) == Level::Dominant, dominant);
    }

    #[test]
    fn vcd_timescale_covers_one_bit(rate_idx in 0usize..7) {
        let rates = [1_000_000, 500_000, 250_000, 125_000, 100_000, 50_000, 10_000];
        let b = Bitrate::new(rates[rate_idx]).unwrap();
        let (mag, unit, per_tick) = vcd_timescale(b.bit_time_ns());
        let unit_ns = match unit { "s" => 1_000_000_000, "ms" => 1_000_000, "us" => 1_000, "ns" => 1, _ => 0 };
        prop_assert!([1, 10, 100].contains(&mag));
        prop_assert_eq!(mag * unit_ns * per_tick, b.bit_time_ns());
    }

    #[test]
    fn metrics_recompute_from_matrix(m in prop::array::uniform4(prop::array::uniform4(0u64..1000))) {
        let r = MetricsReport::from_confusion(m);
        let total: u64 = m.iter().flatten().sum();
        let trace: u64 = (0..4).map(|i| m[i][i]).sum();
        prop_assert_eq!(r.total, total);
        prop_assert_eq!(r.misclassified, total - trace);
        if total > 0 {
            prop_assert!((r.accuracy - trace as f64 / total as f64).abs() < 1e-12);
        }
        for (i, c) in r.per_class.iter().enumerate() {
            let row: u64 = m[i].iter().sum();
            let col: u64 = (0..4).map(|k| m[k][i]).sum();
            prop_assert_eq!(c.support, row);
            prop_assert_eq!(c.recall, (row > 0).then(|| m[i][i] as f64 / row as f64));
            prop_assert_eq!(c.precision, (col > 0).then(|| m[i][i] as f64 / col as f64));
        }
    }

    #[test]
    fn metrics_from_pairs_match_matrix(pairs in prop::collection::vec((class(), class()), 1..300)) {
        let r = compute_metrics(pairs.iter().copied());
        let mut m = [[0u64; 4]; 4];
        for (t, p) in &pairs {
            m[t.index()][p.index()] += 1;
        }
        prop_assert_eq!(r.confusion, m);
    }

    #[test]
    fn window_slides_one_frame_at_a_time(frames in prop::collection::vec(frame(), 1..12)) {
        let mut w = FeatureWindow::new();
        let mut prev: Option<[u8; FEATURE_LEN]> = None;
        for (i, f) in frames.iter().enumerate() {
            w.push(f);
            let feats = w.features();
            prop_assert_eq!(feats.is_some(), i + 1 >= WINDOW_FRAMES);
            if let (Some(p), Some(n)) = (prev, feats) {
                let step = FEATURE_LEN / WINDOW_FRAMES;
                prop_assert_eq!(&p[step..], &n[..FEATURE_LEN - step]);
            }
            prev = feats;
        }
    }

    #[test]
    fn quantised_weight_within_half_step(w in -10.0f64..10.0, scale in 0.01f64..2.0) {
        let q = quantise_weight(w, scale);
        prop_assert!((-8..=7).contains(&q));
        if (-8.0 * scale..=7.0 * scale).contains(&w) {
            prop_assert!((f64::from(q) * scale - w).abs() <= scale / 2.0 + 1e-12);
        }
    }

    #[test]
    fn replay_csv_round_trips(
        steps in prop::collection::vec((0u64..5_000_000, frame(), class()), 1..40),
    ) {
        let mut t = 0;
        let records: Vec<ReplayRecord> = steps
            .into_iter()
            .filter(|(_, f, _)| !f.is_remote())
            .map(|(dt, frame, label)| {
                t += dt;
                ReplayRecord { timestamp_ns: t, frame, label }
            })
            .collect();
        prop_assume!(!records.is_empty());
        let text = write_replay(&records);
        let back = parse_replay(&text, &ReplayOptions::default()).unwrap();
        prop_assert_eq!(back.records, records);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inference_is_deterministic_and_strategies_agree(
        m in model(),
        frames in prop::collection::vec(frame(), WINDOW_FRAMES..20),
        gaps in prop::collection::vec(0u64..500, 20),
    ) {
        let window = [7u8; FEATURE_LEN];
        prop_assert_eq!(mlp_infer(&m, &window).unwrap(), mlp_infer(&m, &window).unwrap());
        let mut t = 0;
        let rx: Vec<ReceivedFrame> = frames
            .iter()
            .zip(&gaps)
            .map(|(f, gap)| {
                let sof = t + gap;
                let end = sof + frame_duration(f).ticks();
                t = end;
                ReceivedFrame { frame: f.clone(), sof: SimTime(sof), end: SimTime(end) }
            })
            .collect();
        let m = Arc::new(m);
        let run = |s| classify(Some(m.clone()), CostProfile::paper_artix7(s), Bitrate::default(), &rx).unwrap();
        let (ecu, ctl) = (run(Deployment::EcuCoupled), run(Deployment::ControllerCoupled));
        prop_assert_eq!(ecu.len(), rx.len() + 1 - WINDOW_FRAMES);
        for (a, b) in ecu.iter().zip(&ctl) {
            prop_assert_eq!(a.class, b.class);
            prop_assert_eq!(a.logits, b.logits);
            prop_assert!(a.latency.elapsed_us >= 6.3 * b.latency.elapsed_us);
            for v in [a, b] {
                let l = &v.latency;
                prop_assert_eq!(l.elapsed_us, (l.verdict_time - l.sof_time) as f64 * 2.0);
                prop_assert!(v.probabilities.iter().all(|p| (0.0..=1.0).contains(p)));
                prop_assert!((v.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                let best = v.probabilities.iter().cloned().fold(f64::MIN, f64::max);
                prop_assert_eq!(v.probabilities[v.class.index()], best);
            }
        }
        for (v, r) in ctl.iter().zip(&rx[WINDOW_FRAMES - 1..]) {
            prop_assert!(v.latency.verdict_time - v.latency.sof_time >= r.end - r.sof);
        }
    }
}

fn functional() -> Simulation {
    Simulation::new(SimConfig::new(SimConfig::functional_roster())).unwrap()
}

fn ms(t: f64) -> SimTime {
    SimTime(Bitrate::default().ticks_from_ms(t))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn bus_log_complete_ordered_exclusive(seed in any::<u64>(), rate in 200.0f64..4000.0, lo in 0u16..0x700) {
        let mut cfg = SimConfig::new(SimConfig::functional_roster());
        cfg.seed = seed;
        let mut sim = Simulation::new(cfg).unwrap();
        let fuzz = AttackProfile::Fuzz { rate_hz: rate, id_min: lo, id_max: lo + 0xFF, dlc: 8, payload: Default::default() };
        sim.start_attack(&fuzz.into(), None).unwrap();
        let stats = sim.run_until(ms(150.0)).unwrap();
        let log = sim.bus_log();
        prop_assert_eq!(stats.frames as usize, log.len());
        prop_assert!(log.windows(2).all(|w| w[1].sof >= w[0].end));
        for r in log {
            prop_assert_eq!(r.end - r.sof, encode_frame(&r.frame).len() as u64);
        }
    }

    #[test]
    fn dos_flood_owns_the_bus(start in 20.0f64..200.0, len in 5.0f64..60.0) {
        let mut sim = functional();
        sim.run_until(ms(start)).unwrap();
        let h = sim.start_attack(&AttackProfile::DosFlood { id: 0, payload: vec![0; 8] }.into(), None).unwrap();
        let from = sim.now();
        sim.run_until(ms(start + len)).unwrap();
        sim.stop_attack(h).unwrap();
        let to = sim.now();
        // A frame already on the wire when the flood starts may finish.
        let during: Vec<_> = sim.bus_log().iter().filter(|r| r.sof > from + 160 && r.end <= to).collect();
        prop_assert!(!during.is_empty());
        prop_assert!(during.iter().all(|r| r.frame.id() == 0 && r.source == ATTACKER_PORT));
    }

    #[test]
    fn life_counters_count_by_one(seed in any::<u64>(), until in 50.0f64..400.0) {
        let mut cfg = SimConfig::new(SimConfig::functional_roster());
        cfg.seed = seed;
        let mut sim = Simulation::new(cfg).unwrap();
        sim.set_sensor("ECU3", "collision", 1).unwrap();
        sim.run_until(ms(until)).unwrap();
        for (name, hist) in sim.signal_log() {
            if name.ends_with(".life_counter") {
                prop_assert!(hist.windows(2).all(|w| w[1].1 == w[0].1 + 1), "{}", name);
            }
            if name.ends_with(".airbag_deployed") {
                let first = hist.iter().position(|(_, v)| *v == 1);
                if let Some(i) = first {
                    prop_assert!(hist[i..].iter().all(|(_, v)| *v == 1));
                }
            }
        }
    }

    #[test]
    fn replay_keeps_trace_order(ids in prop::collection::vec(0x400u16..0x7FF, 1..60), gap_us in 300u64..3000) {
        let records: Vec<ReplayRecord> = ids
            .iter()
            .enumerate()
            .map(|(i, &id)| ReplayRecord {
                timestamp_ns: i as u64 * gap_us * 1000,
                frame: CanFrame::new(id, &[i as u8]).unwrap(),
                label: TrafficClass::ALL[i % 4],
            })
            .collect();
        let mut sim = Simulation::new(SimConfig::new(vec![EcuConfig::new("N1", Role::Lights)])).unwrap();
        let spec = AttackProfile::Replay { path: "trace.csv".into(), time_scale: 1.0, default_attack: None };
        sim.start_attack(&spec.into(), Some(Arc::new(ReplayTrace { records: records.clone() }))).unwrap();
        sim.run_until(ms(ids.len() as f64 * gap_us as f64 / 1000.0 + 20.0)).unwrap();
        let got: Vec<CanFrame> = sim
            .bus_log()
            .iter()
            .filter(|r| r.source == ATTACKER_PORT)
            .map(|r| r.frame.clone().without_timestamp())
            .collect();
        let want: Vec<CanFrame> = records.into_iter().map(|r| r.frame).collect();
        prop_assert_eq!(got, want);
    }
}
