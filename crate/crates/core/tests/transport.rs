use std::collections::HashMap;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use phasorguard::analytics::{LocalConfig, LocalEngine};
use phasorguard::bundled;
use phasorguard::model::{BusId, FeederModel};
use phasorguard::pipeline::{analyze, central_model_for, local_config_for, Analysis, PipelineConfig};
use phasorguard::synth::{generate, Generated};
use phasorguard::transport::{
    serve_local, CentralRun, CentralServeConfig, CentralServer, Codec, FaultInjection, Kind, LocalRun,
    LocalServeConfig,
};

fn setup(scenario: &str) -> (FeederModel, Vec<BusId>, Generated) {
    let feeder = bundled::feeder("ieee34").unwrap();
    let sc = bundled::scenario(scenario).unwrap();
    let g = generate(&sc, &feeder).unwrap();
    (feeder, sc.sensors, g)
}

fn offline(feeder: &FeederModel, g: &Generated) -> Analysis {
    let streams: Vec<_> = g.clean.iter().cloned().zip(g.uplink.iter().cloned()).collect();
    analyze(feeder, &streams, &PipelineConfig::default()).unwrap()
}

fn engine(feeder: &FeederModel, bus: BusId) -> LocalEngine {
    LocalEngine::new(bus, local_config_for(&LocalConfig::default(), feeder, bus))
}

/// Runs one central server and a sensor thread per stream; `tweak` adjusts
/// each sensor's config by index.
fn run(
    feeder: &FeederModel,
    sensors: &[BusId],
    g: &Generated,
    central: CentralServeConfig,
    tweak: impl Fn(usize, &mut LocalServeConfig),
) -> (CentralRun, Vec<LocalRun>) {
    let model = central_model_for(feeder, sensors).unwrap();
    let codec = central.codec;
    let server = CentralServer::bind("127.0.0.1:0", model, central).unwrap();
    let addr = server.local_addr().unwrap().to_string();
    let shutdown = Arc::new(AtomicBool::new(false));
    let handle = {
        let shutdown = shutdown.clone();
        thread::spawn(move || server.run(shutdown))
    };
    let locals: Vec<_> = g
        .clean
        .iter()
        .zip(&g.uplink)
        .enumerate()
        .map(|(i, (clean, up))| {
            let engine = engine(feeder, clean.bus);
            let source: Vec<_> = clean.frames.iter().cloned().zip(up.frames.iter().cloned()).collect();
            let mut cfg = LocalServeConfig {
                central: addr.clone(),
                codec,
                ..LocalServeConfig::default()
            };
            tweak(i, &mut cfg);
            let shutdown = shutdown.clone();
            thread::spawn(move || serve_local(engine, source, &cfg, shutdown).unwrap())
        })
        .collect();
    let locals = locals.into_iter().map(|l| l.join().unwrap()).collect();
    (handle.join().unwrap().unwrap(), locals)
}

#[test]
fn one_second_outage_loses_nothing() {
    let (feeder, sensors, g) = setup("slgf");
    let reference = offline(&feeder, &g);
    let fault_k = g.truth.events[0].start_k + 30;
    let (net, locals) = run(&feeder, &sensors, &g, CentralServeConfig::default(), |i, cfg| {
        if i == 0 {
            cfg.fault = Some(FaultInjection {
                at_k: fault_k,
                down_for: Duration::from_secs(1),
            });
        }
    });
    assert_eq!(locals[0].connections, 2);
    assert!(locals.iter().all(|l| l.unacknowledged == 0));
    let sent: usize = locals.iter().map(|l| l.reports.len()).sum();
    assert!(sent > 0);
    assert_eq!(net.fusion_gaps, 0);
    assert_eq!(net.sessions.total_gaps(), 0);
    assert_eq!(net.log, reference.log);
    assert_eq!(net.x, reference.x);
}

#[test]
fn reports_arrive_before_the_frame_that_produced_them() {
    let (feeder, sensors, g) = setup("slgf");
    // sample at which each report is emitted, per sensor and sequence number
    let mut emitted: HashMap<(BusId, u64), u64> = HashMap::new();
    for s in &g.clean {
        let mut e = engine(&feeder, s.bus);
        let mut seq = 0;
        for f in &s.frames {
            for _ in e.process(f).1 {
                emitted.insert((s.bus, seq), f.k);
                seq += 1;
            }
        }
    }
    assert!(!emitted.is_empty());
    let cfg = CentralServeConfig {
        record_arrivals: true,
        ..CentralServeConfig::default()
    };
    let fault_k = g.truth.events[0].start_k + 10;
    let (net, _) = run(&feeder, &sensors, &g, cfg, |i, cfg| {
        if i == 1 {
            cfg.fault = Some(FaultInjection {
                at_k: fault_k,
                down_for: Duration::from_millis(500),
            });
        }
    });
    let first = |bus: BusId, kind: Kind, k: u64| {
        net.arrivals
            .iter()
            .position(|&(b, kd, kk)| b == bus && kd == kind && kk == k)
            .unwrap_or_else(|| panic!("{bus} {kind:?} {k} never arrived"))
    };
    for (&(bus, seq), &k) in &emitted {
        assert!(first(bus, Kind::Report, seq) < first(bus, Kind::Frame, k), "sensor {bus} report {seq}");
    }
}

#[test]
fn json_codec_matches_offline() {
    let (feeder, sensors, g) = setup("replay-minor");
    let reference = offline(&feeder, &g);
    let cfg = CentralServeConfig {
        codec: Codec::Json,
        ..CentralServeConfig::default()
    };
    let (net, _) = run(&feeder, &sensors, &g, cfg, |_, _| {});
    assert_eq!(net.log, reference.log);
    assert_eq!(net.fusion_gaps, 0);
}
