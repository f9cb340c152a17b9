"""
Detectors and scripted attacks
==============================

Phase one fits the statistical and autoencoder detectors on benign traces
and calibrates each threshold to a 1% false-positive rate. The scripted
baselines then show how loud naive timing attacks are.
"""

# %%
import numpy as np

from timingsim import harness as H
from timingsim.baselines import BaselineSpec

scenario = H.Scenario()
p1 = H.phase1_train_detectors(scenario, seed=0)
print(p1.table())

# %%
# Thresholds are quantiles of held-out benign scores; three consecutive
# windows above tau raise an alarm.
for d in p1.suite.detectors:
    print(f"{d.name:<9} tau={d.tau:.4f}")

# %%
# Each baseline runs 30 evaluation episodes after a warmup. Random Delay
# holds 10% of packets by up to 120 ms and is caught almost every window.
reports = {}
for kind in ("random_delay", "periodic_jitter", "poisson_jitter"):
    reports[kind] = H.bench_baseline(scenario, p1.suite, BaselineSpec(kind), seed=0)
print(H.summary_table(reports))

# %%
# Stealth is one minus the weighted mean recall; a quiet attack keeps it
# near one but also barely moves the plant.
for kind, r in reports.items():
    lo, hi = r.stealth_ci
    print(f"{kind:<16} stealth {r.stealth:.3f} [{lo:.3f}, {hi:.3f}]  dCycles {r.delta_cycles:+.1f}%")
print("mean recall:", {k: round(float(np.mean(list(r.recall.values()))), 3) for k, r in reports.items()})
