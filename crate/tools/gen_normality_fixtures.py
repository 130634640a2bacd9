#!/usr/bin/env python3
"""Freeze Shapiro-Wilk and Kolmogorov-Smirnov reference values.

Generates 20 fixed samples spanning n in {10, 50, 500, 5000} from a mix of
distributions (normal, uniform, exponential, lognormal, bimodal), runs
scipy.stats.shapiro and the z-scored one-sample KS test against N(0,1) with
the asymptotic Kolmogorov p-value, and writes everything as JSON. The samples
themselves are embedded so the Rust tests recompute from identical inputs.

Run from the repo root:  python3 tools/gen_normality_fixtures.py
"""

import json

import numpy as np
from scipy import stats

rng = np.random.default_rng(20260816)

SIZES = [10, 50, 500, 5000]
KINDS = ["normal", "uniform", "exponential", "lognormal", "bimodal"]


def draw(kind: str, n: int) -> np.ndarray:
    if kind == "normal":
        return rng.normal(1.5, 2.0, n)
    if kind == "uniform":
        return rng.uniform(-1.0, 3.0, n)
    if kind == "exponential":
        return rng.exponential(2.0, n)
    if kind == "lognormal":
        return rng.lognormal(0.0, 0.7, n)
    if kind == "bimodal":
        half = n // 2
        return np.concatenate(
            [rng.normal(-2.0, 0.5, half), rng.normal(2.0, 0.5, n - half)]
        )
    raise ValueError(kind)


fixtures = []
for n in SIZES:
    for kind in KINDS:
        x = draw(kind, n)
        w, sw_p = stats.shapiro(x)
        z = (x - x.mean()) / x.std(ddof=0)
        d = stats.kstest(z, "norm").statistic
        ks_p = stats.kstwobign.sf(np.sqrt(n) * d)
        fixtures.append(
            {
                "name": f"{kind}_{n}",
                "n": n,
                "sample": [round(float(v), 9) for v in x],
                "sw_w": float(w),
                "sw_p": float(sw_p),
                "ks_d": float(d),
                "ks_p": float(ks_p),
            }
        )

# recompute statistics from the rounded samples actually shipped to Rust so
# both sides see bit-identical inputs
for fx in fixtures:
    x = np.array(fx["sample"])
    w, sw_p = stats.shapiro(x)
    z = (x - x.mean()) / x.std(ddof=0)
    d = stats.kstest(z, "norm").statistic
    fx["sw_w"] = round(float(w), 10)
    fx["sw_p"] = round(float(sw_p), 10)
    fx["ks_d"] = round(float(d), 10)
    fx["ks_p"] = round(float(stats.kstwobign.sf(np.sqrt(fx["n"]) * d)), 10)

assert len(fixtures) == 20
with open("crates/core/tests/data/normality_fixtures.json", "w") as fh:
    json.dump(fixtures, fh, indent=1)
print(f"wrote {len(fixtures)} fixtures")
for fx in fixtures:
    print(f"  {fx['name']:>16}  W={fx['sw_w']:.6f} p={fx['sw_p']:.3e} "
          f"D={fx['ks_d']:.6f} ks_p={fx['ks_p']:.3e}")
