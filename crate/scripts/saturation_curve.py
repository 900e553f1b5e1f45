#!/usr/bin/env python3
"""Write fixtures/saturation_curve.csv: a cascade saturation curve with 1%
multiplicative noise, standing in for a measured power series.

Truth: alpha * I_s = 0.8 per unit pump power, exciton share 0.55.
"""
from pathlib import Path

import numpy as np

K, RHO, NOISE, SEED = 0.8, 0.55, 0.01, 20261018

rng = np.random.default_rng(SEED)
s = np.geomspace(0.02, 30.0, 40)
x = K * s
y = (x * x + RHO * x) / (1 + x + x * x) * (1 + NOISE * rng.standard_normal(s.size))
out = Path(__file__).resolve().parent.parent / "fixtures" / "saturation_curve.csv"
with out.open("w", newline="\n") as f:
    f.write("pump_power,normalized_counts\n")
    for a, b in zip(s, y):
        f.write(f"{float(a)!r},{float(b)!r}\n")
print(out)
