#!/usr/bin/env python3
"""Regenerate the bundled scenario files for the IEEE-34 feeder.

Spot loads follow the published IEEE-34 load table (kW, kvar per phase),
with the two shunt capacitor banks as negative reactive load. All loads are
scaled by LOAD_SCALE and expressed in per-unit of one phase's share of the
1 MVA base, i.e. 3 * kW / 1000.
"""
import json, os, sys

HERE = os.path.dirname(os.path.abspath(__file__))
OUT = os.path.join(HERE, "..", "crates", "core", "data", "scenarios")
FEEDER = os.path.join(HERE, "..", "crates", "core", "data", "ieee34.feeder")

LOAD_SCALE = 0.5
SOURCE = 1.05

LOADS_KW = {
    860: [(20, 16)] * 3, 840: [(9, 7)] * 3, 844: [(135, 105)] * 3, 848: [(20, 16)] * 3,
    890: [(150, 75)] * 3, 830: [(10, 5), (10, 5), (25, 10)],
    806: [(0, 0), (30, 15), (25, 14)], 810: [(0, 0), (16, 8), (0, 0)],
    820: [(34, 17), (0, 0), (0, 0)], 822: [(135, 70), (0, 0), (0, 0)],
    824: [(0, 0), (5, 2), (0, 0)], 826: [(0, 0), (40, 20), (0, 0)],
    828: [(0, 0), (0, 0), (4, 2)], 856: [(0, 0), (4, 2), (0, 0)],
    858: [(7, 3), (2, 1), (6, 3)], 864: [(2, 1), (0, 0), (0, 0)],
    834: [(4, 2), (15, 8), (13, 7)], 836: [(30, 15), (10, 6), (42, 22)],
    842: [(9, 5), (0, 0), (0, 0)], 846: [(0, 0), (25, 12), (20, 11)],
    838: [(0, 0), (28, 14), (0, 0)],
}
CAPACITOR_KVAR = {844: 100, 848: 150}

# Extra spot load at bus 864 whose disconnection is the load-loss event.
LOAD_LOSS_KW = (150, 50)


def bus_ids():
    with open(FEEDER) as f:
        d = json.load(f)
    return {int(b["name"]): b["id"] for b in d["buses"]}


def loads(ids, extra=None):
    out = {}
    for name, phases in LOADS_KW.items():
        s = [[3 * LOAD_SCALE * p / 1000, 3 * LOAD_SCALE * q / 1000] for p, q in phases]
        out[ids[name]] = s
    for name, kvar in CAPACITOR_KVAR.items():
        for ph in out[ids[name]]:
            ph[1] -= 3 * LOAD_SCALE * kvar / 1000
    if extra:
        bus, s = extra
        for p in range(3):
            out[bus][p][0] += s[p][0]
            out[bus][p][1] += s[p][1]
    return [{"bus": b, "s": [[round(x, 12) for x in ph] for ph in s]} for b, s in sorted(out.items())]


def base(name, ids, **kw):
    sc = {
        "name": name,
        "feeder": "ieee34",
        "duration_s": 10.0,
        "seed": 20170101,
        "sensors": [7, 19, 31],
        "source_voltage_pu": SOURCE,
        "noise_sigma": 1e-4,
        "loads": loads(ids),
        "events": [],
    }
    sc.update(kw)
    return sc


# 10 ohm fault resistance on the 24.9 kV, 1 MVA base (620 ohm)
FAULT_ADMITTANCE_PU = 62.0


def slgf_events(ids):
    # Illustrative timing: fault on phase a at 842 for 1.5 s, cleared by the
    # phase-a fuse on 834-842, which stays open.
    return [
        {"kind": "slg-fault", "bus": ids[842], "phases": "a", "start_k": 360, "end_k": 540, "magnitude": FAULT_ADMITTANCE_PU},
        {"kind": "fuse-open", "line": [ids[834], ids[842]], "phases": "a", "start_k": 540, "end_k": 1200},
    ]


def replay(bus, start=300):
    return {"kind": "replay-attack", "bus": bus, "start_k": start, "end_k": 1200}


def main():
    ids = bus_ids()
    p = 3 * LOAD_SCALE * LOAD_LOSS_KW[0] / 1000
    q = 3 * LOAD_SCALE * LOAD_LOSS_KW[1] / 1000
    scenarios = [
        base("steady", ids),
        base("drift", ids, drift=[{"start_k": 0, "drift_hz": 0.05}, {"start_k": 600, "drift_hz": -0.05}]),
        base("slgf", ids, events=slgf_events(ids)),
        base("replay-minor", ids, events=[replay(7)] + slgf_events(ids)),
        base("replay-dominant", ids, events=[replay(19)] + slgf_events(ids)),
        base("replay-two", ids, events=[replay(7), replay(19)] + slgf_events(ids)),
        base(
            "load-loss",
            ids,
            loads=loads(ids, (ids[864], [[p, q], [0, 0], [0, 0]])),
            events=[{"kind": "load-loss", "bus": ids[864], "start_k": 600, "end_k": 1200, "magnitude": 1.0}],
        ),
    ]
    os.makedirs(OUT, exist_ok=True)
    for sc in scenarios:
        sc["events"].sort(key=lambda e: e["start_k"])
        with open(os.path.join(OUT, sc["name"] + ".json"), "w") as f:
            json.dump(sc, f, indent=1)
            f.write("\n")
    print("wrote", len(scenarios), "scenarios to", os.path.normpath(OUT), file=sys.stderr)


if __name__ == "__main__":
    main()
