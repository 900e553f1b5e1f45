#!/usr/bin/env python3
"""Regenerate fixtures/golden/*.json with 50-digit arithmetic.

Written straight from the rate formulas, sharing no code with the Rust
crates, so the golden tests compare two independent evaluations.
"""
import json
from pathlib import Path

from mpmath import mp, mpf, log, exp, sqrt

mp.dps = 50

CHANNEL = dict(eta_bob=mpf("0.045"), p_dc=mpf("2e-7"), e_d=mpf("0.033"))
Q_SIFT, F_EC = mpf("0.5"), mpf("1.22")
LOSSES = [0, 5, 10, 20, 30, 35]
SPS1 = dict(p0=mpf("0.359"), p1=mpf("0.529"), p2=mpf("0.112"))
SPS2 = dict(p0=mpf("0.115"), p1=mpf("0.458"), p2=mpf("0.427"))
BARE_SIGNAL = dict(p0=mpf("0.675"), p1=mpf("0.296"), p2=mpf("0.029"))
HERALD = dict(t=mpf("0.5"), eta_d=mpf("0.9"), p_dc=mpf("2e-7"))


def h2(x):
    if x <= 0:
        return mpf(0)
    return -x * log(x, 2) - (1 - x) * log(1 - x, 2)


def eta_at(loss_db):
    return mpf(10) ** (-mpf(loss_db) / 10) * CHANNEL["eta_bob"]


def y_e(eta, n):
    pdc, ed = CHANNEL["p_dc"], CHANNEL["e_d"]
    t = 1 - (1 - eta) ** n
    y = t + pdc - t * pdc
    return y, (ed * t + pdc / 2) / y


def gain(weights, eta):
    q = eq = mpf(0)
    for n, w in enumerate(weights):
        y, e = y_e(eta, n)
        q += w * y
        eq += w * y * e
    return q, eq / q


def clip(raw, *errs):
    return mpf(0) if raw < 0 or any(e >= mpf("0.5") for e in errs) else raw


def dtb_rate(d, loss):
    eta = eta_at(loss)
    q, e = gain([d["p0"], d["p1"], d["p2"]], eta)
    y1, e1 = y_e(eta, 1)
    raw = Q_SIFT * (-q * F_EC * h2(e) + d["p1"] * y1 * (1 - h2(e1)))
    return clip(raw, e, e1)


def hp_rate(d, loss):
    t, ed, pdc = HERALD["t"], HERALD["eta_d"], HERALD["p_dc"]
    r = 1 - t
    # Herald fires and 0, 1 or 2 photons travel on.
    v = d["p0"] * pdc + d["p1"] * r * (ed + pdc) + d["p2"] * r * r * (1 - (1 - ed) ** 2 + pdc)
    s = 2 * d["p2"] * r * t * (ed + pdc) + t * d["p1"] * pdc
    w = t * t * d["p2"] * pdc
    eta = eta_at(loss)
    q, e = gain([v, s, w], eta)
    y1, _ = y_e(eta, 1)
    omega = s * y1 / q
    raw = Q_SIFT * q * (-F_EC * h2(e) + omega * (1 - h2(e / omega)))
    return clip(raw, e, e / omega)


def wcs_raw(mu, eta):
    pdc, ed = CHANNEL["p_dc"], CHANNEL["e_d"]
    det = 1 - exp(-eta * mu)
    q = pdc + (1 - pdc) * det
    e = (ed * det + pdc / 2) / q
    y1, e1 = y_e(eta, 1)
    return Q_SIFT * (-q * F_EC * h2(e) + mu * exp(-mu) * y1 * (1 - h2(e1))), e1


def wcs_rate(loss):
    eta = eta_at(loss)
    f = lambda m: wcs_raw(m, eta)[0]
    # Coarse scan, then golden section on the best bracket.
    grid = [mpf("1e-6") + (2 - mpf("1e-6")) * k / 400 for k in range(401)]
    k = max(range(len(grid)), key=lambda i: f(grid[i]))
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, 400)]
    g = (sqrt(5) - 1) / 2
    for _ in range(200):
        c, d = b - g * (b - a), a + g * (b - a)
        if f(c) > f(d):
            b = d
        else:
            a = c
    mu = (a + b) / 2
    raw, e1 = wcs_raw(mu, eta)
    return clip(raw, e1)


def record(protocol, params, loss, skr):
    return dict(protocol=protocol, params=params, loss_db=loss, skr=float(skr))


def main():
    out = Path(__file__).resolve().parent.parent / "fixtures" / "golden"
    out.mkdir(parents=True, exist_ok=True)
    ch = dict(loss_db=0.0, eta_bob=0.045, p_dc=2e-7, e_d=0.033)
    kr = dict(q_sifting=0.5, f_ec=1.22)
    as_json = lambda d: {k: float(v) for k, v in d.items()} | {"p3": 0.0}
    hp_setting = dict(t=0.5, r=0.5, eta_d=0.9, p_dc_alice=2e-7, include_vacuum=True)
    sets = {
        "dtb_sps1": [record("dtb", dict(channel=ch, key=kr, signal=as_json(SPS1)), l, dtb_rate(SPS1, l)) for l in LOSSES],
        "dtb_bare_signal": [
            record("dtb", dict(channel=ch, key=kr, signal=as_json(BARE_SIGNAL)), l, dtb_rate(BARE_SIGNAL, l)) for l in LOSSES
        ],
        "perfect_sps": [
            record("perfect-sps", dict(channel=ch, key=kr), l, dtb_rate(dict(p0=0, p1=mpf(1), p2=0), l)) for l in LOSSES
        ],
        "hp_sps2": [
            record("hp", dict(channel=ch, key=kr, setting=hp_setting | {"source": as_json(SPS2)}), l, hp_rate(SPS2, l))
            for l in LOSSES
        ],
        "wcs": [record("wcs", dict(channel=ch, key=kr), l, wcs_rate(l)) for l in LOSSES],
    }
    for name, records in sets.items():
        (out / f"{name}.json").write_text(json.dumps(records, indent=2) + "\n")
        print(name, [f"{r['skr']:.6e}" for r in records])


if __name__ == "__main__":
    main()
