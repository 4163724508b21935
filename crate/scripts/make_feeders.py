#!/usr/bin/env python3
"""Regenerate the bundled IEEE-34 and IEEE-123 feeder files.

Line-configuration impedances and lengths follow the published IEEE
distribution test feeder data. Output admittances are in siemens per
segment (lines) or per-unit on the system base (regulators, transformers,
switches), per the feeder JSON schema.
"""
import json, math, os, sys
import numpy as np

FT_PER_MILE = 5280.0

def sym(upper):
    m = np.zeros((3, 3), dtype=complex)
    idx = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]
    for (i, j), v in zip(idx, upper):
        m[i, j] = v
        m[j, i] = v
    return m

def cfg(z_upper, b_upper):
    return sym(z_upper), sym(b_upper) * 1e-6

def single(phase, z, b):
    zm = np.zeros((3, 3), dtype=complex)
    bm = np.zeros((3, 3))
    zm[phase, phase] = z
    bm[phase, phase] = b * 1e-6
    return zm, bm

def series_shunt(zcfg, length_ft, phases):
    z, b = zcfg
    miles = length_ft / FT_PER_MILE
    idx = [p for p in range(3) if phases[p]]
    y = np.zeros((3, 3), dtype=complex)
    sub = z[np.ix_(idx, idx)] * miles
    y[np.ix_(idx, idx)] = np.linalg.inv(sub)
    ysh = np.zeros((3, 3), dtype=complex)
    ysh[np.ix_(idx, idx)] = 1j * b[np.ix_(idx, idx)] * miles
    return y, ysh

def pairs(m):
    return [[float(m[i, j].real), float(m[i, j].imag)] for i in range(3) for j in range(3)]

def mask_str(phases):
    return "".join(c for c, p in zip("abc", phases) if p)

def pu_block(z_pu, phases):
    idx = [p for p in range(3) if phases[p]]
    y = np.zeros((3, 3), dtype=complex)
    for p in idx:
        y[p, p] = 1.0 / z_pu
    return y

def phases_of(zcfg):
    z, _ = zcfg
    return [abs(z[p, p]) > 0 for p in range(3)]

def ieee34():
    c300 = cfg([1.3368 + 1.3343j, 0.2101 + 0.5779j, 0.2130 + 0.5015j,
                1.3238 + 1.3569j, 0.2066 + 0.4591j, 1.3294 + 1.3471j],
               [5.3350, -1.5313, -0.9943, 5.0979, -0.6212, 4.8880])
    c301 = cfg([1.9300 + 1.4115j, 0.2327 + 0.6442j, 0.2359 + 0.5691j,
                1.9157 + 1.4281j, 0.2288 + 0.5238j, 1.9219 + 1.4209j],
               [5.1207, -1.4364, -0.9402, 4.9055, -0.5951, 4.7154])
    c302 = single(0, 2.7995 + 1.4855j, 4.2251)
    c303 = single(1, 2.7995 + 1.4855j, 4.2251)
    c304 = single(1, 1.9217 + 1.4212j, 4.3637)
    amps = {"300": 230.0, "301": 180.0, "302": 140.0, "303": 140.0, "304": 180.0}
    cfgs = {"300": c300, "301": c301, "302": c302, "303": c303, "304": c304}
    names = [800, 802, 806, 808, 810, 812, 814, 850, 816, 818, 820, 822, 824, 826,
             828, 830, 854, 856, 852, 832, 888, 890, 858, 864, 834, 842, 844, 846,
             848, 860, 836, 840, 862, 838]
    num = {n: i + 1 for i, n in enumerate(names)}
    segs = [(800, 802, 2580, "300"), (802, 806, 1730, "300"), (806, 808, 32230, "300"),
            (808, 810, 5804, "303"), (808, 812, 37500, "300"), (812, 814, 29730, "300"),
            (814, 850, None, "REG"), (816, 818, 1710, "302"), (816, 824, 10210, "301"),
            (818, 820, 48150, "302"), (820, 822, 13740, "302"), (824, 826, 3030, "303"),
            (824, 828, 840, "301"), (828, 830, 20440, "301"), (830, 854, 520, "301"),
            (832, 858, 4900, "301"), (832, 888, None, "XFM"), (834, 842, 280, "301"),
            (834, 860, 2020, "301"), (836, 840, 860, "301"), (836, 862, 280, "301"),
            (842, 844, 1350, "301"), (844, 846, 3640, "301"), (846, 848, 530, "301"),
            (850, 816, 310, "301"), (852, 832, None, "REG"), (854, 856, 23330, "303"),
            (854, 852, 36830, "301"), (858, 864, 1620, "302"), (858, 834, 5830, "301"),
            (860, 836, 2680, "301"), (862, 838, 4860, "304"), (888, 890, 10560, "300")]
    kv = {n: (4.16 if n in (888, 890) else 24.9) for n in names}
    buses = [{"id": num[n], "name": str(n), "kv_base": kv[n],
              "type": "slack" if n == 800 else "pq"} for n in names]
    lines = []
    abc = [True, True, True]
    for a, b, length, c in segs:
        line = {"from": num[a], "to": num[b]}
        if c == "REG":
            # step-voltage regulator at neutral tap: leakage impedance only
            y = pu_block(0.0001 + 0.001j, abc)
            line.update(phases="abc", per_unit=True, series=pairs(y),
                        shunt=pairs(np.zeros((3, 3))), rating_amps=219.0)
        elif c == "XFM":
            # 500 kVA 24.9/4.16 kV, Z = 1.9 + j4.08 % on own base
            z = (0.019 + 0.0408j) * (1.0 / 0.5)
            y = pu_block(z, abc)
            line.update(phases="abc", per_unit=True, series=pairs(y),
                        shunt=pairs(np.zeros((3, 3))), rating_amps=14.5)
        else:
            ph = phases_of(cfgs[c])
            y, ysh = series_shunt(cfgs[c], length, ph)
            line.update(phases=mask_str(ph), series=pairs(y), shunt=pairs(ysh),
                        rating_amps=amps[c])
        lines.append(line)
    return {"name": "IEEE 34-bus test feeder", "base_mva": 1.0, "slack": 1,
            "buses": buses, "lines": lines}

def ieee123():
    def z6(a, b, c, d, e, f):
        return [a, b, c, d, e, f]
    za, zb, zc = 0.4576 + 1.0780j, 0.4666 + 1.0482j, 0.4615 + 1.0651j
    m1, m2, m3 = 0.1560 + 0.5017j, 0.1580 + 0.4236j, 0.1535 + 0.3849j
    b1, b2, b3 = 5.6765, 5.9809, 5.3971
    n1, n2, n3 = -1.8319, -1.1645, -0.6982
    cfgs = {
        1: cfg(z6(za, m1, m3, zb, m2, zc), [b1, n1, n3, b2, n2, b3]),
        2: cfg(z6(zb, m2, m1, zc, m3, za), [b2, n2, n1, b3, n3, b1]),
        3: cfg(z6(zc, m3, m2, za, m1, zb), [b3, n3, n2, b1, n1, b2]),
        4: cfg(z6(zc, m2, m3, zb, m1, za), [b3, n2, n3, b2, n1, b1]),
        5: cfg(z6(zb, m1, m2, za, m3, zc), [b2, n1, n2, b1, n3, b3]),
        6: cfg(z6(za, m3, m1, zc, m2, zb), [b1, n3, n1, b3, n2, b2]),
        12: cfg(z6(1.5209 + 0.7521j, 0.5198 + 0.2775j, 0.4924 + 0.2157j,
                   1.5329 + 0.7162j, 0.5198 + 0.2775j, 1.5209 + 0.7521j),
                [67.2242, 0, 0, 67.2242, 0, 67.2242]),
    }
    z7 = np.zeros((3, 3), dtype=complex); b7 = np.zeros((3, 3))
    z7[0, 0], z7[2, 2], z7[0, 2], z7[2, 0] = za, zc, m3, m3
    b7[0, 0], b7[2, 2], b7[0, 2], b7[2, 0] = 5.1154e-6, 5.1704e-6, -1.0549e-6, -1.0549e-6
    cfgs[7] = (z7, b7)
    z8 = np.zeros((3, 3), dtype=complex); b8 = np.zeros((3, 3))
    z8[0, 0], z8[1, 1], z8[0, 1], z8[1, 0] = za, zc, m3, m3
    b8[0, 0], b8[1, 1], b8[0, 1], b8[1, 0] = 5.1154e-6, 5.1704e-6, -1.0549e-6, -1.0549e-6
    cfgs[8] = (z8, b8)
    cfgs[9] = single(0, 1.3292 + 1.3475j, 4.5193)
    cfgs[10] = single(1, 1.3292 + 1.3475j, 4.5193)
    cfgs[11] = single(2, 1.3292 + 1.3475j, 4.5193)
    amps = {c: 400.0 for c in range(1, 7)}
    amps.update({7: 400.0, 8: 400.0, 9: 230.0, 10: 230.0, 11: 230.0, 12: 240.0})
    segs = """1 2 175 10;1 3 250 11;1 7 300 1;3 4 200 11;3 5 325 11;5 6 250 11;7 8 200 1;
8 12 225 10;8 9 225 9;8 13 300 1;9 14 425 9;13 34 150 11;13 18 825 2;14 11 250 9;
14 10 250 9;15 16 375 11;15 17 350 11;18 19 250 9;18 21 300 2;19 20 325 9;21 22 525 10;
21 23 250 2;23 24 550 11;23 25 275 2;25 26 350 7;25 28 200 2;26 27 275 7;26 31 225 11;
27 33 500 9;28 29 300 2;29 30 350 2;30 250 200 2;31 32 300 11;34 15 100 11;35 36 650 8;
35 40 250 1;36 37 300 9;36 38 250 10;38 39 325 10;40 41 325 11;40 42 250 1;42 43 500 10;
42 44 200 1;44 45 200 9;44 47 250 1;45 46 300 9;47 48 150 4;47 49 250 4;49 50 250 4;
50 51 250 4;52 53 200 1;53 54 125 1;54 55 275 1;54 57 350 3;55 56 275 1;57 58 250 10;
57 60 750 3;58 59 250 10;60 61 550 5;60 62 250 12;62 63 175 12;63 64 350 12;64 65 425 12;
65 66 325 12;67 68 200 9;67 72 275 3;67 97 250 3;68 69 275 9;69 70 325 9;70 71 275 9;
72 73 275 11;72 76 200 3;73 74 350 11;74 75 400 11;76 77 400 6;76 86 700 3;77 78 100 6;
78 79 225 6;78 80 475 6;80 81 475 6;81 82 250 6;81 84 675 11;82 83 250 6;84 85 475 11;
86 87 450 6;87 88 175 9;87 89 275 6;89 90 225 10;89 91 225 6;91 92 300 11;91 93 225 6;
93 94 275 9;93 95 300 6;95 96 200 10;97 98 275 3;98 99 550 3;99 100 300 3;100 450 800 3;
101 102 225 11;101 105 275 3;102 103 325 11;103 104 700 11;105 106 225 10;105 108 325 3;
106 107 575 10;108 109 450 9;108 300 1000 3;109 110 300 9;110 111 575 9;110 112 125 9;
112 113 525 9;113 114 325 9;135 35 375 4;149 1 400 1;152 52 400 1;160 67 350 6;
197 101 250 3"""
    segs = [tuple(int(t) for t in s.split()) for s in segs.replace("\n", "").split(";")]
    # closed and normally-open three-phase switches, the substation regulator
    # and the service transformer, all carried as per-unit ties
    ties = [(13, 152, "SW"), (18, 135, "SW"), (60, 160, "SW"), (97, 197, "SW"),
            (150, 149, "REG"), (61, 610, "XFM"), (250, 251, "SW"), (450, 451, "SW"),
            (151, 300, "SW"), (300, 350, "SW")]
    kv = {610: 0.48}
    names = sorted({a for a, _, _, _ in segs} | {b for _, b, _, _ in segs}
                   | {a for a, _, _ in ties} | {b for _, b, _ in ties})
    names.remove(150)
    names = [150] + names
    num = {n: i + 1 for i, n in enumerate(names)}
    buses = [{"id": num[n], "name": str(n), "kv_base": kv.get(n, 4.16),
              "type": "slack" if n == 150 else "pq"} for n in names]
    lines = []
    abc = [True, True, True]
    for a, b, length, c in segs:
        ph = phases_of(cfgs[c])
        y, ysh = series_shunt(cfgs[c], length, ph)
        lines.append({"from": num[a], "to": num[b], "phases": mask_str(ph),
                      "series": pairs(y), "shunt": pairs(ysh), "rating_amps": amps[c]})
    for a, b, kind in ties:
        if kind == "SW":
            z, rating = 0.0001 + 0.0001j, 400.0
        elif kind == "REG":
            z, rating = 0.0001 + 0.001j, 400.0
        else:
            # 150 kVA 4.16/0.48 kV, Z = 1.27 + j2.72 % on own base
            z, rating = (0.0127 + 0.0272j) * (1.0 / 0.15), 21.0
        lines.append({"from": num[a], "to": num[b], "phases": "abc", "per_unit": True,
                      "series": pairs(pu_block(z, abc)), "shunt": pairs(np.zeros((3, 3))),
                      "rating_amps": rating})
    return {"name": "IEEE 123-bus test feeder", "base_mva": 1.0, "slack": 1,
            "buses": buses, "lines": lines}

if __name__ == "__main__":
    default = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "crates", "core", "data")
    out = sys.argv[1] if len(sys.argv) > 1 else default
    for fname, feeder in (("ieee34.feeder", ieee34()), ("ieee123.feeder", ieee123())):
        with open(f"{out}/{fname}", "w") as f:
            json.dump(feeder, f, indent=1)
            f.write("\n")
