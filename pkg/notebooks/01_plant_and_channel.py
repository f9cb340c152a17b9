"""
The mixing line under a timing attack
=====================================

A walk through the co-simulation: the three-tank plant, the PLC scan
cycle, and the field channel that can hold packets back. Run it with
``python notebooks/01_plant_and_channel.py``.
"""

# %%
# A benign run. The closed loop couples the plant, the PID controller and
# the channel; every scan produces one row of plant state and one row of
# timing features.
import numpy as np

from timingsim.channel import Tag
from timingsim.loop import FEATURE_NAMES, ClosedLoop

loop = ClosedLoop(seed=0).run(1000)
rows = np.asarray(loop.plant_rows)
print(f"scans: {loop.scan_index}, actuator cycles: {loop.cycles}, batches: {len(loop.qualities)}")
print(f"mean batch inaccuracy: {np.mean(loop.qualities):.3f} %")

# %%
# Conservation: what is in the tanks plus what left, minus what came in,
# stays at its initial value to rounding.
s = loop.state
print("volume bookkeeping:", s.total_volume + s.cumulative_outflow - s.cumulative_inflow)

# %%
# One held level report. The controller acts on a stale process image for
# a few scans, which the timing features pick up as a longer gap.
benign = ClosedLoop(seed=1).run(200)
attacked = ClosedLoop(seed=1).run(100)
attacked.step({Tag.LEVEL_REPORT: 80.0})
attacked.run(99)
diff = np.abs(attacked.feature_matrix() - benign.feature_matrix()).max(axis=0)
for name, d in zip(FEATURE_NAMES, diff):
    if d > 0:
        print(f"  {name:<16} max change {d:.3f}")

# %%
# The channel trace records every packet with its requested hold; the
# per-tag FIFO clamp can only push later packets further back, never
# reorder them.
held = [p for p in attacked.channel.trace if p.attacked]
for p in held:
    print(p.tag.value, p.scheduled_time, "->", p.delivered_time)
