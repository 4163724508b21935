//! Turn a scenario into per-sensor phasor streams and ground truth.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::network::{assemble, solve, NetworkState, Solution};
use super::scenario::{Event, EventKind, Load, Scenario};
use crate::analytics::{PhasorFrame, Rule};
use crate::model::{BusId, FeederModel, LineId, Provenance};
use crate::phasor::{Complex64, Phasor3};
use crate::{Error, Result};

/// Frames of one sensor, in sample order.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorStream {
    pub bus: BusId,
    pub frames: Vec<PhasorFrame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthEvent {
    pub kind: EventKind,
    pub start_k: u64,
    pub end_k: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bus: Option<BusId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<LineId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phases: Option<String>,
    /// Rules expected to fire for this event.
    pub expected_rules: Vec<Rule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    pub scenario: String,
    /// Feeder reference as given in the scenario.
    pub feeder: String,
    pub samples: u64,
    pub sensors: Vec<BusId>,
    pub epoch: String,
    pub events: Vec<TruthEvent>,
}

impl GroundTruth {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ground truth serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone)]
pub struct Generated {
    /// What each sensor measured.
    pub clean: Vec<SensorStream>,
    /// What each sensor's uplink carried; differs from `clean` under attack.
    pub uplink: Vec<SensorStream>,
    pub truth: GroundTruth,
}

impl Generated {
    pub fn attacked(&self) -> bool {
        self.clean != self.uplink
    }
}

pub fn expected_rules(kind: EventKind) -> Vec<Rule> {
    match kind {
        EventKind::VoltageSag => vec![Rule::VoltageMag],
        EventKind::SlgFault => vec![
            Rule::VoltageMag,
            Rule::CurrentMag,
            Rule::ActivePower,
            Rule::ReactivePower,
            Rule::Central,
        ],
        EventKind::FuseOpen => vec![Rule::CurrentMag, Rule::Central],
        EventKind::LoadLoss => vec![Rule::ActivePower, Rule::CurrentMag, Rule::Central],
        EventKind::LoadStep => vec![Rule::ActivePower, Rule::CurrentMag],
        EventKind::ReplayAttack => vec![Rule::Central],
    }
}

/// Move loads of buses removed by lateral reduction onto their attachment
/// bus, phase by phase.
pub fn roll_up_loads(loads: &[Load], provenance: &Provenance) -> Vec<Load> {
    let mut acc: BTreeMap<BusId, [[f64; 2]; 3]> = BTreeMap::new();
    for l in loads {
        let target = provenance.attachment_of(l.bus).unwrap_or(l.bus);
        let e = acc.entry(target).or_default();
        for (acc, s) in e.iter_mut().zip(&l.s) {
            acc[0] += s[0];
            acc[1] += s[1];
        }
    }
    acc.into_iter().map(|(bus, s)| Load { bus, s }).collect()
}

fn state_at(sc: &Scenario, feeder: &FeederModel, base: &[Complex64], k: u64) -> NetworkState {
    let mut st = NetworkState {
        source: sc.source_voltage_pu,
        loads: base.to_vec(),
        ..Default::default()
    };
    for e in sc.events.iter().filter(|e| e.is_active(k)) {
        apply_event(&mut st, feeder, e, k);
    }
    st
}

fn apply_event(st: &mut NetworkState, feeder: &FeederModel, e: &Event, k: u64) {
    let bus_idx = e.bus.and_then(|b| feeder.bus_index(b));
    match e.kind {
        EventKind::VoltageSag => st.source *= e.magnitude,
        EventKind::SlgFault => {
            let b = bus_idx.expect("validated");
            for p in e.phase_mask().expect("validated").phases() {
                st.faults.push((b, p, e.magnitude));
            }
        }
        EventKind::FuseOpen => {
            let id = Scenario::resolve_line(feeder, e.line.expect("validated")).expect("validated");
            st.open.push((id, e.phase_mask().expect("validated")));
        }
        EventKind::LoadLoss => {
            let b = bus_idx.expect("validated");
            for p in 0..3 {
                st.loads[3 * b + p] *= 1.0 - e.magnitude;
            }
        }
        EventKind::LoadStep => {
            let b = bus_idx.expect("validated");
            let ramp = if e.ramp_k == 0 {
                1.0
            } else {
                ((k - e.start_k + 1) as f64 / e.ramp_k as f64).min(1.0)
            };
            for p in 0..3 {
                st.loads[3 * b + p] *= 1.0 + e.magnitude * ramp;
            }
        }
        EventKind::ReplayAttack => {}
    }
}

fn measure(feeder: &FeederModel, sol: &Solution, bus: BusId) -> (Phasor3, BTreeMap<LineId, Phasor3>) {
    let b = feeder.bus_index(bus).expect("validated");
    let mut lines = BTreeMap::new();
    for (idx, line) in feeder.lines.iter().enumerate() {
        if line.touches(bus) {
            lines.insert(line.id, sol.line_current(feeder, idx, b));
        }
    }
    (sol.bus_voltage(b), lines)
}

fn blend(a: &Phasor3, b: &Phasor3, w: f64) -> Phasor3 {
    std::array::from_fn(|p| a[p] * (1.0 - w) + b[p] * w)
}

/// Raised-cosine weights of the two samples after a state change.
const BLEND: [f64; 2] = [0.25, 0.75];

pub fn generate(sc: &Scenario, feeder: &FeederModel) -> Result<Generated> {
    sc.validate(feeder)?;
    let n = 3 * feeder.bus_count();
    let mut base = vec![Complex64::new(0.0, 0.0); n];
    for l in &sc.loads {
        let b = feeder.bus_index(l.bus).expect("validated");
        let phases = feeder.bus_phases(l.bus);
        for (p, s) in l.phase_power().into_iter().enumerate() {
            if phases.has(p) {
                base[3 * b + p] += s;
            }
        }
    }
    let samples = sc.samples();
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    let noise = Normal::new(0.0, sc.noise_sigma / std::f64::consts::SQRT_2)
        .map_err(|e| Error::Scenario(format!("{}: noise: {e}", sc.name)))?;
    let cnoise = |z: Complex64, rng: &mut ChaCha8Rng| {
        if sc.noise_sigma == 0.0 {
            z
        } else {
            z + Complex64::new(noise.sample(rng), noise.sample(rng))
        }
    };

    let mut streams: Vec<SensorStream> = sc
        .sensors
        .iter()
        .map(|&bus| SensorStream {
            bus,
            frames: Vec::with_capacity(samples as usize),
        })
        .collect();
    let mut current: Option<(NetworkState, Solution, u64)> = None;
    let mut previous: Option<Solution> = None;
    let mut phi = 0.0;
    for k in 0..samples {
        let st = state_at(sc, feeder, &base, k);
        let changed = current.as_ref().is_none_or(|(s, _, _)| *s != st);
        if changed {
            let warm = current.as_ref().map(|(_, s, _)| s.v.clone());
            let net = assemble(feeder, &st);
            let sol = solve(feeder, &net, &st, sc.constant_z_below, warm.as_deref()).map_err(
                |(iterations, mismatch)| {
                    let end_k = (k + 1..samples)
                        .find(|&j| state_at(sc, feeder, &base, j) != st)
                        .unwrap_or(samples);
                    Error::LoadFlow {
                        start_k: k,
                        end_k,
                        iterations,
                        mismatch,
                    }
                },
            )?;
            previous = current.take().map(|(_, s, _)| s);
            current = Some((st, sol, k));
        }
        let (_, sol, since) = current.as_ref().expect("set above");
        let age = (k - since) as usize;
        if k > 0 {
            phi += sc.beta_at(k);
        }
        let rot = Complex64::from_polar(1.0, phi);
        for stream in &mut streams {
            let (mut v, mut lines) = measure(feeder, sol, stream.bus);
            if let (Some(old), true) = (&previous, age < BLEND.len()) {
                let (vo, lo) = measure(feeder, old, stream.bus);
                v = blend(&vo, &v, BLEND[age]);
                for (id, i) in lines.iter_mut() {
                    *i = blend(&lo[id], i, BLEND[age]);
                }
            }
            let v = v.map(|z| cnoise(z * rot, &mut rng));
            for i in lines.values_mut() {
                *i = i.map(|z| cnoise(z * rot, &mut rng));
            }
            stream.frames.push(PhasorFrame {
                k,
                bus: stream.bus,
                v,
                i_lines: lines,
            });
        }
    }

    let mut uplink = streams.clone();
    for e in sc.replay_attacks() {
        let s = uplink.iter_mut().find(|s| Some(s.bus) == e.bus).expect("validated");
        *s = apply_replay_attack(s, e.start_k, e.end_k, sc.replay_window);
    }
    let truth = GroundTruth {
        scenario: sc.name.clone(),
        feeder: sc.feeder.clone(),
        samples,
        sensors: sc.sensors.clone(),
        epoch: sc.epoch.clone().unwrap_or_else(|| crate::time::DEFAULT_EPOCH.to_string()),
        events: sc
            .events
            .iter()
            .map(|e| TruthEvent {
                kind: e.kind,
                start_k: e.start_k,
                end_k: e.end_k.min(samples),
                bus: e.bus,
                line: e.line.and_then(|l| Scenario::resolve_line(feeder, l)),
                phases: e.phases.clone(),
                expected_rules: expected_rules(e.kind),
            })
            .collect(),
    };
    Ok(Generated {
        clean: streams,
        uplink,
        truth,
    })
}

/// Replace frames in `[start, end)` by a cyclic replay of the last
/// `window` frames before `start` (fewer if the stream is shorter).
pub fn apply_replay_attack(stream: &SensorStream, start: u64, end: u64, window: u64) -> SensorStream {
    let by_k: BTreeMap<u64, &PhasorFrame> = stream.frames.iter().map(|f| (f.k, f)).collect();
    let w = window.min(start).max(1);
    let frames = stream
        .frames
        .iter()
        .map(|f| {
            if f.k < start || f.k >= end {
                return f.clone();
            }
            let src = start - w + (f.k - start) % w;
            match by_k.get(&src) {
                Some(s) => PhasorFrame {
                    k: f.k,
                    ..(*s).clone()
                },
                None => f.clone(),
            }
        })
        .collect();
    SensorStream {
        bus: stream.bus,
        frames,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::scenario::{DriftSegment, LineRef};

    fn ieee34() -> FeederModel {
        FeederModel::from_json(include_str!("../../data/ieee34.feeder")).unwrap()
    }

    fn scenario() -> Scenario {
        Scenario {
            name: "t".into(),
            feeder: "ieee34".into(),
            duration_s: 2.0,
            seed: 3,
            sensors: vec![BusId(7), BusId(19), BusId(31)],
            source_voltage_pu: 1.05,
            noise_sigma: 0.0,
            drift: vec![],
            loads: vec![
                Load {
                    bus: BusId(24),
                    s: [[0.05, 0.02], [0.0, 0.0], [0.0, 0.0]],
                },
                Load {
                    bus: BusId(31),
                    s: [[0.04, 0.02], [0.015, 0.009], [0.06, 0.03]],
                },
            ],
            constant_z_below: 0.7,
            replay_window: 120,
            epoch: None,
            events: vec![],
        }
    }

    #[test]
    fn noiseless_streams_satisfy_the_model() {
        let f = ieee34();
        let g = generate(&scenario(), &f).unwrap();
        assert_eq!(g.clean.len(), 3);
        assert_eq!(g.clean[0].frames.len(), 240);
        let fr = &g.clean[2].frames[10];
        let inj = fr.net_injection();
        let load = [
            Complex64::new(0.04, 0.02),
            Complex64::new(0.015, 0.009),
            Complex64::new(0.06, 0.03),
        ];
        for p in 0..3 {
            assert!((inj[p] + (load[p] / fr.v[p]).conj()).norm() < 1e-9);
        }
        assert!(!g.attacked());
    }

    #[test]
    fn drift_rotates_all_phasors() {
        let f = ieee34();
        let mut sc = scenario();
        sc.drift = vec![DriftSegment {
            start_k: 0,
            drift_hz: 0.1,
        }];
        let g = generate(&sc, &f).unwrap();
        let beta = crate::analytics::hz_to_beta(0.1);
        let a0 = g.clean[0].frames[0].v[0].arg();
        let a1 = g.clean[0].frames[1].v[0].arg();
        assert!(((a1 - a0) - beta).abs() < 1e-12);
    }

    #[test]
    fn transitions_are_blended() {
        let f = ieee34();
        let mut sc = scenario();
        sc.events.push(Event {
            kind: EventKind::LoadLoss,
            bus: Some(BusId(31)),
            line: None,
            phases: None,
            start_k: 100,
            end_k: 240,
            magnitude: 1.0,
            ramp_k: 0,
        });
        let g = generate(&sc, &f).unwrap();
        let line = *g.clean[2].frames[0].i_lines.keys().next().unwrap();
        let i = |k: usize| g.clean[2].frames[k].i_lines[&line][0];
        let (old, new) = (i(99), i(110));
        assert!((i(100) - (old * 0.75 + new * 0.25)).norm() < 1e-12);
        assert!((i(101) - (old * 0.25 + new * 0.75)).norm() < 1e-12);
        assert!((i(102) - new).norm() < 1e-12);
    }

    #[test]
    fn same_seed_same_streams() {
        let f = ieee34();
        let mut sc = scenario();
        sc.noise_sigma = 1e-4;
        let a = generate(&sc, &f).unwrap();
        let b = generate(&sc, &f).unwrap();
        assert_eq!(a.clean, b.clean);
        sc.seed = 4;
        assert_ne!(generate(&sc, &f).unwrap().clean, a.clean);
    }

    #[test]
    fn noise_has_the_requested_variance() {
        let f = ieee34();
        let mut sc = scenario();
        sc.noise_sigma = 1e-3;
        sc.duration_s = 100.0;
        sc.sensors = vec![BusId(7)];
        let clean = {
            let mut c = sc.clone();
            c.noise_sigma = 0.0;
            generate(&c, &f).unwrap()
        };
        let noisy = generate(&sc, &f).unwrap();
        let mut sum = 0.0;
        let mut n = 0.0;
        for (a, b) in clean.clean[0].frames.iter().zip(&noisy.clean[0].frames) {
            for p in 0..3 {
                sum += (b.v[p] - a.v[p]).norm_sqr();
                n += 1.0;
            }
        }
        let var = sum / n;
        assert!(n >= 1e4);
        assert!((var / 1e-6 - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn load_loss_moves_current_on_the_source_path_only() {
        let f = ieee34();
        let mut sc = scenario();
        sc.sensors = (2..=34).map(BusId).collect();
        let before = generate(&sc, &f).unwrap();
        sc.events.push(Event {
            kind: EventKind::LoadLoss,
            bus: Some(BusId(24)),
            line: None,
            phases: None,
            start_k: 0,
            end_k: 240,
            magnitude: 1.0,
            ramp_k: 0,
        });
        let after = generate(&sc, &f).unwrap();
        let mut path: Vec<BusId> = vec![BusId(24)];
        let adj = f.adjacency();
        let mut parent = BTreeMap::new();
        let mut queue = std::collections::VecDeque::from([f.slack]);
        parent.insert(f.slack, f.slack);
        while let Some(u) = queue.pop_front() {
            for &(w, _) in &adj[f.bus_index(u).unwrap()] {
                if let std::collections::btree_map::Entry::Vacant(e) = parent.entry(w) {
                    e.insert(u);
                    queue.push_back(w);
                }
            }
        }
        while *path.last().unwrap() != f.slack {
            path.push(parent[path.last().unwrap()]);
        }
        let on_path = |l: &crate::model::LineSegment| path.contains(&l.from_bus) && path.contains(&l.to_bus);
        let (mut on, mut off) = (0.0f64, 0.0f64);
        for (s0, s1) in before.clean.iter().zip(&after.clean) {
            for (id, i0) in &s0.frames[50].i_lines {
                let i1 = s1.frames[50].i_lines[id];
                let d = (0..3).map(|p| (i1[p] - i0[p]).norm()).fold(0.0, f64::max);
                if on_path(f.line(*id).unwrap()) {
                    on = on.max(d);
                } else {
                    off = off.max(d);
                }
            }
        }
        assert!(on > 0.0);
        assert!(off < 0.02 * on, "on {on} off {off}");
    }

    #[test]
    fn replay_repeats_the_last_window() {
        let f = ieee34();
        let mut sc = scenario();
        sc.noise_sigma = 1e-4;
        sc.events.push(Event {
            kind: EventKind::ReplayAttack,
            bus: Some(BusId(31)),
            line: None,
            phases: None,
            start_k: 150,
            end_k: 240,
            magnitude: 0.0,
            ramp_k: 0,
        });
        sc.replay_window = 20;
        let g = generate(&sc, &f).unwrap();
        assert!(g.attacked());
        let up = &g.uplink[2].frames;
        assert_eq!(up[150].v, g.clean[2].frames[130].v);
        assert_eq!(up[171].v, g.clean[2].frames[131].v);
        assert_eq!(up[171].k, 171);
        assert_eq!(g.uplink[0], g.clean[0]);
    }

    #[test]
    fn fuse_event_resolves_its_line() {
        let f = ieee34();
        let mut sc = scenario();
        sc.events.push(Event {
            kind: EventKind::FuseOpen,
            bus: None,
            line: Some(LineRef(BusId(26), BusId(25))),
            phases: Some("a".into()),
            start_k: 10,
            end_k: 240,
            magnitude: 0.0,
            ramp_k: 0,
        });
        let g = generate(&sc, &f).unwrap();
        assert!(g.truth.events[0].line.is_some());
        assert_eq!(g.truth.events[0].expected_rules, vec![Rule::CurrentMag, Rule::Central]);
    }
}
