"""
Learning when and what to delay
===============================

The scheduler picks a wait and a hold length, the disturber picks which
tags to hold, and both learn by advantage actor-critic against a frozen
detector suite. The defender then hardens its detectors on the
attacker's windows.
"""

# %%
from dataclasses import replace

import numpy as np

from timingsim import harness as H
from timingsim.adversary import Knowledge, Strategy

scenario = H.Scenario()
p1 = H.phase1_train_detectors(scenario, seed=0)

# %%
# Phase two: train a black-box Low & Slow pair. The curve is the mean step
# reward per episode.
p2 = H.phase2_train_adversary(scenario, p1.suite, seed=0)
r = np.asarray(p2.curve.rewards)
tenth = max(1, len(r) // 10)
print(f"reward: first 10% {r[:tenth].mean():.3f}, last 10% {r[-tenth:].mean():.3f}")
print("episodes to 95% of final:", p2.curve.episodes_to_fraction(0.95))

# %%
report = H.evaluate_agents(scenario, p2.agents, p1.suite, seed=0)
print(H.summary_table({"lowslow/black": report}))

# %%
# The same agent with more knowledge: the grey box sees a noisy 1 Hz alert
# bit, the white box sees calibrated scores.
for k in (Knowledge.GREY, Knowledge.WHITE):
    cfg = replace(scenario.adversary, knowledge=k)
    ag = H.phase2_train_adversary(scenario, p1.suite, 0, cfg).agents
    rep = H.evaluate_agents(scenario, ag, p1.suite, 0)
    print(k.value, {n: round(v, 3) for n, v in rep.recall.items()})

# %%
# Min-max: each round the frozen attacker plays, recall on its windows is
# logged, and the detectors are hardened on them.
mm = H.minmax_train(scenario, suite=p1.suite, agents=p2.agents, benign_windows=p1.benign_windows, seed=0)
for log in mm.rounds:
    print(f"round {log.round}: R_attack {log.R_attack:.3f}  R_detect {log.R_detect:.3f}  L {log.L:+.3f}")

# %%
# Out of context: the frozen Smash & Grab attacker meets drifted dynamics
# and a retuned suite.
from timingsim.evaluation import DRIFT_TIERS

sg = H.phase2_train_adversary(scenario, p1.suite, 0, replace(scenario.adversary, strategy=Strategy.SMASH_GRAB,
                                                              epsilon=None)).agents
fresh = H.fresh_suite(scenario, DRIFT_TIERS["medium"], 0)
out = H.phase3_ooc_eval(scenario, {(Strategy.SMASH_GRAB, Knowledge.BLACK): sg}, fresh, DRIFT_TIERS["medium"], 0)
print(H.summary_table(out))
