"""Two-agent A2C timing adversary and its single-agent baseline.

The scheduler picks how long to wait and how long to hold packets; the
disturber picks which tagged channels to hold. Both share one reward,

    R = alpha * D + beta * (1 - C),

where D is the disturbance against a benign twin run on the same plant seed
and C the detectability visible at the configured knowledge level.
"""

from __future__ import annotations

import csv
import enum
import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .approximator import (
    CollapsedPolicy, PolicyParams, clip_global_norm, forward_categorical, forward_scalar, grad_log_prob,
    grad_scalar, init_params, sgd_step,
)
from .channel import ALL_TAGS, ChannelConfig, Tag, extract_timing_features
from .detectors import DetectorSuite, StreamingScorer
from .loop import ClosedLoop
from .plant import PlantConfig


class Strategy(str, enum.Enum):
    LOW_SLOW = "lowslow"
    SMASH_GRAB = "smashgrab"


class Knowledge(str, enum.Enum):
    BLACK = "black"
    GREY = "grey"
    WHITE = "white"


T_WAIT_GRID = (0, 5, 10, 20, 50)  # scans
T_DELAY_GRID = {Strategy.LOW_SLOW: (0, 10, 40, 80, 150), Strategy.SMASH_GRAB: (0, 40, 150, 300, 400)}  # ms
DELAY_CAP = {Strategy.LOW_SLOW: 150.0, Strategy.SMASH_GRAB: 400.0}
N_SIGNALS = 6
EPSILON_RANGE = {Strategy.LOW_SLOW: (0.05, 0.1), Strategy.SMASH_GRAB: (0.2, 0.5)}


def target_subsets(tags: Sequence[Tag] = ALL_TAGS, k: int = 3) -> list[tuple[Tag, ...]]:
    """All tag subsets of size <= k, the empty no-op first."""
    return [c for r in range(0, k + 1) for c in itertools.combinations(tags, r)]


@dataclass
class AdversaryConfig:
    alpha: float = 0.55
    beta: float = 0.45
    gamma_sched: float = 0.9
    gamma_dist: float = 0.9
    epsilon: tuple[float, float] | None = None  # None: the strategy's range
    mu: float = 0.3
    Gamma: int = 40
    history_window: int = 20  # scans
    credit_window: int = 20  # scans of aftermath always credited to an accepted hold
    history_decay: float = 0.9
    knowledge: Knowledge = Knowledge.BLACK
    strategy: Strategy = Strategy.LOW_SLOW
    lr_actor: float = 1e-3
    lr_critic: float = 3e-3
    hidden: tuple[int, ...] = (64, 64)
    budget_k: int = 3
    alert_period: int = 100  # scans between grey-box alert bits (1 Hz at 10 ms)
    alert_flip: float = 0.05
    alert_trailing: int = 4
    d_weights: tuple[float, float] = (0.5, 0.5)
    clip_norm: float | None = 1.0

    def __post_init__(self):
        self.knowledge = Knowledge(self.knowledge)
        self.strategy = Strategy(self.strategy)
        if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta <= 0:
            raise ValueError("alpha and beta must be nonnegative with a positive sum")
        total = self.alpha + self.beta
        self.alpha, self.beta = self.alpha / total, self.beta / total
        for g in (self.gamma_sched, self.gamma_dist):
            if not 0 <= g < 1:
                raise ValueError("discount factors must lie in [0, 1)")
        if self.Gamma < 0:
            raise ValueError("Gamma must be >= 0")
        if self.credit_window < 0:
            raise ValueError("credit_window must be >= 0")
        if self.epsilon is None:
            self.epsilon = EPSILON_RANGE[self.strategy]
        lo, hi = self.epsilon
        if not 0 <= lo <= hi <= 1:
            raise ValueError("epsilon range must satisfy 0 <= lo <= hi <= 1")
        self.epsilon = (float(lo), float(hi))
        self.hidden = tuple(self.hidden)

    @property
    def delay_grid(self) -> tuple[int, ...]:
        return T_DELAY_GRID[self.strategy]

    @property
    def delay_cap(self) -> float:
        return DELAY_CAP[self.strategy]

    @property
    def subsets(self) -> list[tuple[Tag, ...]]:
        return target_subsets(ALL_TAGS, self.budget_k)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["knowledge"] = self.knowledge.value
        d["strategy"] = self.strategy.value
        return d


# --- observation ------------------------------------------------------------


class ActionHistory:
    """omega: decayed sum of own delays over the trailing ``window`` scans.

    omega_k = rho * omega_{k-1} + d_k - rho**window * d_{k-window}
    """

    def __init__(self, decay: float = 0.9, window: int = 20):
        self.decay = decay
        self.window = window
        self.value = 0.0
        self._recent: list[float] = []

    def push(self, delay: float) -> float:
        self._recent.append(delay)
        drop = self._recent.pop(0) if len(self._recent) > self.window else 0.0
        self.value = self.decay * self.value + delay - self.decay ** self.window * drop
        return self.value


@dataclass
class Observation:
    signals: np.ndarray  # s0..s3, level/setpoint ratio, level trend
    timing: np.ndarray
    omega: float
    budget_left: float
    knowledge: Knowledge
    alert_bit: float = 0.0
    detector_scores: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def vector(self) -> np.ndarray:
        parts = [self.signals, self.timing, [self.omega, self.budget_left]]
        if self.knowledge in (Knowledge.GREY, Knowledge.WHITE):
            parts.append([self.alert_bit])
        if self.knowledge is Knowledge.WHITE:
            s = self.detector_scores
            parts.append(s)
            parts.append([s.max() if s.size else 0.0])
        return np.concatenate([np.asarray(p, dtype=float) for p in parts])


def observation_size(config: AdversaryConfig, n_detectors: int) -> int:
    base = N_SIGNALS + 18 + 2
    if config.knowledge is Knowledge.BLACK:
        return base
    if config.knowledge is Knowledge.GREY:
        return base + 1
    return base + 1 + n_detectors + 1


def observe(loop: ClosedLoop, config: AdversaryConfig, history: ActionHistory, delays_used: int,
            alert_bit: float = 0.0, detector_scores: np.ndarray | None = None) -> Observation:
    """Assemble o_t from what a bump-in-the-wire tap sees, per knowledge level."""
    cap3 = loop.plant_config.tank_capacity_ve3
    seen, prev = loop.last_seen, loop.prev_seen
    level, sp = seen[Tag.LEVEL_REPORT], seen[Tag.SETPOINT_REPORT]
    # process context derived from observed payloads: level relative to setpoint and its trend
    ratio = min(2.0, level / sp) if sp > 0 else 0.0
    trend = 10.0 * (level - prev[Tag.LEVEL_REPORT]) / cap3
    signals = np.array([seen[Tag.FILL_CMD], seen[Tag.DISCHARGE_CMD], level / cap3, sp / cap3, ratio, trend])
    timing = extract_timing_features(loop.channel.trace, window=32,
                                     scan_period=loop.plant_config.scan_period).as_vector()
    budget_left = 1.0 - delays_used / config.Gamma if config.Gamma > 0 else 0.0
    scores = np.zeros(0)
    if config.knowledge is Knowledge.WHITE and detector_scores is not None:
        scores = np.asarray(detector_scores, dtype=float)
    return Observation(signals, timing, history.value / config.delay_cap, budget_left, config.knowledge,
                       alert_bit if config.knowledge is not Knowledge.BLACK else 0.0, scores)


# --- reward -----------------------------------------------------------------


@dataclass
class WindowStats:
    """Plant activity over a span of scans."""

    err_integral: float  # sum |PV - SP| * dt, L*s
    cycles: int


class MissingBaseline(RuntimeError):
    pass


def compute_D(attack: WindowStats, baseline: WindowStats | None, weights: tuple[float, float] = (0.5, 0.5)) -> float:
    """Disturbance in [0, 1] relative to the benign twin over the same scans."""
    if baseline is None:
        raise MissingBaseline("D needs the benign baseline of the same seed")
    err_term = max(0.0, attack.err_integral - baseline.err_integral) / max(baseline.err_integral, 1e-9)
    cyc_term = max(0, attack.cycles - baseline.cycles) / max(baseline.cycles, 1)
    d = weights[0] * min(1.0, err_term) + weights[1] * min(1.0, cyc_term)
    return min(1.0, max(0.0, d))


def compute_C(knowledge: Knowledge, calibrated_scores: Sequence[float] = (), alert_bits: Sequence[float] = (),
              episode_flagged: bool = False, trailing: int = 4) -> float:
    """Detectability as the attacker perceives it."""
    knowledge = Knowledge(knowledge)
    if knowledge is Knowledge.WHITE:
        return float(max(calibrated_scores)) if len(calibrated_scores) else 0.0
    if knowledge is Knowledge.GREY:
        bits = list(alert_bits)[-trailing:]
        return float(np.mean(bits)) if bits else 0.0
    return 1.0 if episode_flagged else 0.0


@dataclass
class RewardBreakdown:
    D: float
    C: float
    R: float


def reward(D: float, C: float, config: AdversaryConfig) -> RewardBreakdown:
    if not (0 <= D <= 1 and 0 <= C <= 1):
        raise ValueError(f"D and C must lie in [0, 1], got D={D} C={C}")
    return RewardBreakdown(D, C, config.alpha * D + config.beta * (1.0 - C))


# --- agents -----------------------------------------------------------------


def action_preference(actor: PolicyParams, obs) -> float:
    p = forward_categorical(actor, obs)
    return float(p.max() - p.min())


def should_trigger(c: float, mu: float, delays_used: int, Gamma: int) -> bool:
    return c >= mu and delays_used < Gamma


def greedy_action(actor: PolicyParams, obs) -> int:
    # np.argmax returns the lowest index among ties
    return int(np.argmax(forward_categorical(actor, obs)))


@dataclass
class Agent:
    actor: PolicyParams
    critic: PolicyParams
    gamma: float
    name: str = "agent"

    @classmethod
    def create(cls, n_obs: int, n_actions: int, config: AdversaryConfig, gamma: float, rng: np.random.Generator,
               name: str = "agent") -> "Agent":
        sizes = [n_obs, *config.hidden]
        actor = init_params(sizes + [n_actions], "categorical", config.lr_actor, rng)
        critic = init_params(sizes + [1], "scalar", config.lr_critic, rng)
        return cls(actor, critic, gamma, name)

    def act(self, obs: np.ndarray, rng: np.random.Generator, epsilon: float) -> tuple[int, bool, np.ndarray]:
        """epsilon-greedy: uniform action with probability epsilon, else a draw from pi."""
        p = forward_categorical(self.actor, obs)
        u = rng.random()
        if u < epsilon:
            return int(rng.integers(len(p))), True, p
        return int(rng.choice(len(p), p=p)), False, p


def a2c_update(actor: PolicyParams, critic: PolicyParams, obs, action: int, r: float, next_obs, terminal: bool,
               gamma: float, clip_norm: float | None = 1.0) -> tuple[PolicyParams, PolicyParams, float]:
    """One TD(1) actor-critic step; the TD error doubles as the advantage."""
    if not math.isfinite(r):
        raise FloatingPointError(f"non-finite reward {r}")
    v = forward_scalar(critic, obs)
    v_next = 0.0 if terminal else forward_scalar(critic, next_obs)
    delta = r + gamma * v_next - v
    if not math.isfinite(delta):
        raise FloatingPointError(f"non-finite TD error: r={r} V={v} V'={v_next}")
    if delta == 0.0:
        return actor, critic, 0.0
    gc = grad_scalar(critic, obs).scaled(delta)
    ga = grad_log_prob(actor, obs, action).scaled(delta)
    if clip_norm is not None:
        gc = clip_global_norm(gc, clip_norm)
        ga = clip_global_norm(ga, clip_norm)
    # the sign of delta is already folded into the gradients
    return sgd_step(actor, ga, 1.0), sgd_step(critic, gc, 1.0), float(delta)


# --- episodes ---------------------------------------------------------------


@dataclass
class EpisodeEnv:
    plant: PlantConfig = field(default_factory=PlantConfig)
    suite: DetectorSuite | None = None
    episode_scans: int = 200
    warmup_scans: int = 32
    tag_map: dict[Tag, Tag] | None = None  # drifted tag labels: intended target -> tag actually hit

    @property
    def total_scans(self) -> int:
        return self.warmup_scans + self.episode_scans


_BASELINES: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}


def benign_baseline(plant: PlantConfig, seed: int, n_scans: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-scan |PV - SP| * dt and cumulative cycles of the benign twin (cached)."""
    key = (repr(plant), seed, n_scans)
    if key not in _BASELINES:
        loop = ClosedLoop(plant, seed=seed).run(n_scans)
        _BASELINES[key] = _loop_arrays(loop)
    return _BASELINES[key]


def _loop_arrays(loop: ClosedLoop) -> tuple[np.ndarray, np.ndarray]:
    rows = np.asarray(loop.plant_rows)
    dt = loop.plant_config.scan_period / 1000.0
    err = np.abs(rows[:, 3] - rows[:, 4]) * dt
    cyc = rows[:, 5] + rows[:, 6]
    return err, cyc


def window_stats(err: np.ndarray, cyc: np.ndarray, start: int, end: int, cyc_before: float) -> WindowStats:
    return WindowStats(float(err[start:end].sum()), int(cyc[end - 1] - cyc_before))


@dataclass
class StepRecord:
    """One scheduler step: the attack scan plus its aftermath up to the next attack."""

    scan_start: int
    scan_end: int
    sched_action: int
    dist_action: int  # first executed target subset of the step (0 = no-op)
    t_wait: int
    t_delay: float
    triggered: bool  # the trigger fired on the attack scan
    explored: bool
    accepted_tags: int  # delayed packets accepted by the channel
    D: float = 0.0
    C: float = 0.0
    R: float = 0.0
    td_sched: float = 0.0
    td_dist: float = 0.0
    obs_sched: np.ndarray | None = None
    strikes: int = 0  # 1 when the channel accepted a delay
    dist_records: list = field(default_factory=list)  # (obs, executed action) per triggered scan


@dataclass
class EpisodeTrace:
    seed: int
    steps: list[StepRecord]
    loop: ClosedLoop
    scorer: StreamingScorer | None
    warmup: int
    epsilon: float
    flagged: bool = False

    @property
    def mean_reward(self) -> float:
        return float(np.mean([s.R for s in self.steps])) if self.steps else 0.0

    @property
    def delays_used(self) -> int:
        """Scans in which the channel accepted at least one delay."""
        return sum(s.strikes for s in self.steps)

    def write_csv(self, path) -> None:
        cols = ["scan_start", "scan_end", "sched_action", "dist_action", "t_wait", "t_delay", "triggered",
                "explored", "accepted_tags", "strikes", "D", "C", "R", "td_sched", "td_dist", "observation"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for s in self.steps:
                obs = " ".join(f"{v:.6g}" for v in (s.obs_sched if s.obs_sched is not None else []))
                w.writerow([s.scan_start, s.scan_end, s.sched_action, s.dist_action, s.t_wait, s.t_delay,
                            int(s.triggered), int(s.explored), s.accepted_tags, s.strikes, repr(s.D), repr(s.C),
                            repr(s.R), repr(s.td_sched), repr(s.td_dist), obs])

    def summary(self) -> dict:
        return {"seed": self.seed, "episode_reward": self.mean_reward, "delays_used": self.delays_used,
                "steps": len(self.steps), "flagged": self.flagged, "epsilon": self.epsilon}

    def write_json(self, path, extra: dict | None = None) -> None:
        with open(path, "w") as fh:
            json.dump({**self.summary(), **(extra or {})}, fh, indent=2)


class _Episode:
    """Shared machinery of the dual- and single-agent loops."""

    def __init__(self, env: EpisodeEnv, config: AdversaryConfig, seed: int, rng: np.random.Generator):
        self.env, self.config, self.seed, self.rng = env, config, seed, rng
        channel = ChannelConfig(delay_cap=config.delay_cap, budget=config.budget_k)
        self.loop = ClosedLoop(env.plant, channel, seed=seed)
        self.loop.run(env.warmup_scans)
        self.scorer = StreamingScorer(env.suite) if env.suite is not None else None
        self.history = ActionHistory(config.history_decay, config.history_window)
        self.base_err, self.base_cyc = benign_baseline(env.plant, seed, env.total_scans)
        lo, hi = config.epsilon
        self.epsilon = float(rng.uniform(lo, hi)) if hi > lo else lo
        self.used = 0
        self.alert_bits: list[float] = []
        self._alert_rng = np.random.default_rng(seed + 7_919)
        self._alarm_seen = 0  # alarms consumed by the alert stream
        self.steps: list[StepRecord] = []

    @property
    def done(self) -> bool:
        return self.loop.scan_index >= self.env.total_scans

    def scan(self, delays=None) -> int:
        accepted = self.loop.step(delays)
        applied = sum(delays.values()) if (delays and accepted) else 0.0
        self.history.push(applied)
        if accepted:
            self.used += 1
        if self.scorer is not None:
            self.scorer.update(self.loop.features)
            if self.config.knowledge is Knowledge.GREY and self.loop.scan_index % self.config.alert_period == 0:
                self._emit_alert()
        return accepted

    def _emit_alert(self):
        alarms = self.scorer.alarm_array()
        fresh = alarms[:, self._alarm_seen:]
        self._alarm_seen = alarms.shape[1]
        bit = float(fresh.any())
        if self._alert_rng.random() < self.config.alert_flip:
            bit = 1.0 - bit
        self.alert_bits.append(bit)

    def latest_scores(self) -> np.ndarray:
        if self.scorer is None or not self.scorer.ends:
            return np.zeros(len(self.env.suite.detectors) if self.env.suite else 0)
        sc = self.scorer.score_array()[:, -1]
        return self.env.suite.calibrated(sc[:, None])[:, 0]

    def observe(self) -> np.ndarray:
        bit = self.alert_bits[-1] if self.alert_bits else 0.0
        return observe(self.loop, self.config, self.history, self.used, bit, self.latest_scores()).vector()

    def wait(self, n: int) -> None:
        for _ in range(n):
            if self.done:
                return
            self.scan()

    def hold(self, t_delay: float, subset: tuple[Tag, ...], allowed: bool) -> int:
        """One attack scan: hold this scan's packets of ``subset`` for ``t_delay`` ms."""
        ok = allowed and t_delay > 0 and bool(subset) and self.used < self.config.Gamma
        if ok and self.env.tag_map:
            subset = tuple(self.env.tag_map.get(t, t) for t in subset)
        return self.scan({t: float(t_delay) for t in subset} if ok else None)

    def close(self, step: StepRecord) -> None:
        """End the step's span; grey C is read now, D and white C at ``finish``."""
        step.scan_end = self.loop.scan_index
        if self.config.knowledge is Knowledge.GREY:
            step.C = self.step_C(step.scan_start, step.scan_end)
        self.steps.append(step)

    def credit_end(self, step: StepRecord) -> int:
        """A hold is judged over its span or its credit window, whichever is longer."""
        if not step.strikes:
            return step.scan_end
        return min(self.loop.scan_index, max(step.scan_end, step.scan_start + self.config.credit_window))

    def step_D(self, start: int, end: int) -> float:
        if end <= start:
            return 0.0
        rows = np.asarray(self.loop.plant_rows[start - 1 if start > 0 else 0:end])
        dt = self.loop.plant_config.scan_period / 1000.0
        err = np.abs(rows[:, 3] - rows[:, 4]) * dt
        cyc = rows[:, 5] + rows[:, 6]
        if start > 0:
            err, att_before = err[1:], cyc[0]
        else:
            att_before = 0.0
        attack = WindowStats(float(err.sum()), int(cyc[-1] - att_before))
        before = self.base_cyc[start - 1] if start > 0 else 0.0
        base = window_stats(self.base_err, self.base_cyc, start, end, before)
        return compute_D(attack, base, self.config.d_weights)

    def step_C(self, start: int, end: int) -> float:
        k = self.config.knowledge
        if k is Knowledge.WHITE and self.scorer is not None:
            ends = np.asarray(self.scorer.ends)
            if ends.size == 0:
                return 0.0
            sel = (ends >= start) & (ends < end)
            if not sel.any():
                sel = ends == ends.max()
            # per window the max over detectors, averaged over the step so its length does not bias C
            cal = self.env.suite.calibrated(self.scorer.score_array()[:, sel])
            return float(cal.max(axis=0).mean())
        if k is Knowledge.GREY:
            return compute_C(k, alert_bits=self.alert_bits, trailing=self.config.alert_trailing)
        return 0.0  # black: filled in at the end of the episode

    def finish(self) -> bool:
        """Score every step and apply the terminal black-box verdict; returns whether any detector alarmed."""
        flagged = bool(self.scorer is not None and self.scorer.alarm_array().any())
        for s in self.steps:
            end = self.credit_end(s)
            s.D = self.step_D(s.scan_start, end)
            if self.config.knowledge is Knowledge.BLACK:
                s.C = compute_C(Knowledge.BLACK, episode_flagged=flagged)
            elif self.config.knowledge is Knowledge.WHITE:
                s.C = self.step_C(s.scan_start, end)
            s.R = reward(s.D, s.C, self.config).R
        return flagged


def _learn(agent: Agent, records: list[tuple[np.ndarray, int, float]], clip_norm) -> list[float]:
    """Replay one episode's transitions in order through a2c_update."""
    tds = []
    for i, (obs, a, r) in enumerate(records):
        terminal = i == len(records) - 1
        nxt = obs if terminal else records[i + 1][0]
        try:
            agent.actor, agent.critic, td = a2c_update(agent.actor, agent.critic, obs, a, r, nxt, terminal,
                                                      agent.gamma, clip_norm)
        except CollapsedPolicy:
            td = 0.0
        tds.append(td)
    return tds


def run_episode(env: EpisodeEnv, scheduler: Agent, disturber: Agent, config: AdversaryConfig,
                rng: np.random.Generator, seed: int = 0, learn: bool = True) -> EpisodeTrace:
    """Wait, then let the disturber pick which of this scan's packets to hold.

    A step spans from its attack scan to the next step's attack scan, so
    the aftermath of a hold is credited to the hold. Updates are replayed
    in step order after the episode because the black-box detectability
    term is only known at its end. Disturber decisions that the trigger
    suppressed carry no action and are not learned from.
    """
    ep = _Episode(env, config, seed, rng)
    grid, subsets = config.delay_grid, config.subsets
    n_delay = len(grid)
    pending: StepRecord | None = None
    while not ep.done:
        o_s = ep.observe()
        a_s, _, _ = scheduler.act(o_s, rng, ep.epsilon)
        t_wait, t_delay = T_WAIT_GRID[a_s // n_delay], grid[a_s % n_delay]
        ep.wait(t_wait)
        if pending is not None:
            ep.close(pending)
            pending = None
        if ep.done:
            break
        step = StepRecord(ep.loop.scan_index, ep.loop.scan_index, a_s, 0, t_wait, t_delay, False, False, 0,
                          obs_sched=o_s)
        o_d = np.append(ep.observe(), t_delay / config.delay_cap)
        a_d, explored, p = disturber.act(o_d, rng, ep.epsilon)
        triggered = explored or should_trigger(float(p.max() - p.min()), config.mu, ep.used, config.Gamma)
        accepted = ep.hold(t_delay, subsets[a_d], triggered)
        executed = a_d if accepted else 0  # rejected or empty: recorded as no-op
        if triggered:
            step.triggered, step.explored = True, explored
            step.dist_records.append((o_d, executed))
        if accepted:
            step.strikes, step.accepted_tags, step.dist_action = 1, accepted, executed
        pending = step
    if pending is not None:
        ep.close(pending)
    flagged = ep.finish()
    if learn and ep.steps:
        td_s = _learn(scheduler, [(s.obs_sched, s.sched_action, s.R) for s in ep.steps], config.clip_norm)
        for s, td in zip(ep.steps, td_s):
            s.td_sched = td
        recs = [(o, a, s.R, s) for s in ep.steps for o, a in s.dist_records]
        if recs:
            td_d = _learn(disturber, [(o, a, r) for o, a, r, _ in recs], config.clip_norm)
            for (_, _, _, s), td in zip(recs, td_d):
                s.td_dist = td
    return EpisodeTrace(seed, ep.steps, ep.loop, ep.scorer, env.warmup_scans, ep.epsilon, flagged)


def single_action_space(config: AdversaryConfig) -> int:
    return len(T_WAIT_GRID) * len(config.delay_grid) * len(config.subsets)


def decode_single(a: int, config: AdversaryConfig) -> tuple[int, float, tuple[Tag, ...]]:
    n_d, n_s = len(config.delay_grid), len(config.subsets)
    return T_WAIT_GRID[a // (n_d * n_s)], config.delay_grid[(a // n_s) % n_d], config.subsets[a % n_s]


def single_agent_baseline(env: EpisodeEnv, agent: Agent, config: AdversaryConfig, rng: np.random.Generator,
                          seed: int = 0, learn: bool = True) -> EpisodeTrace:
    """One actor-critic pair over the product (t_wait, t_delay, targets) grid."""
    ep = _Episode(env, config, seed, rng)
    n_s = len(config.subsets)
    pending: StepRecord | None = None
    while not ep.done:
        o = ep.observe()
        a, explored, p = agent.act(o, rng, ep.epsilon)
        t_wait, t_delay, subset = decode_single(a, config)
        ep.wait(t_wait)
        if pending is not None:
            ep.close(pending)
            pending = None
        if ep.done:
            break
        triggered = explored or should_trigger(float(p.max() - p.min()), config.mu, ep.used, config.Gamma)
        step = StepRecord(ep.loop.scan_index, ep.loop.scan_index, a, 0, t_wait, t_delay, triggered, explored, 0,
                          obs_sched=o)
        accepted = ep.hold(t_delay, subset, triggered)
        if accepted:
            step.strikes, step.accepted_tags = 1, accepted
        if not step.strikes:
            step.sched_action = a - a % n_s  # same timing, empty target set
        step.dist_action = step.sched_action % n_s
        pending = step
    if pending is not None:
        ep.close(pending)
    flagged = ep.finish()
    if learn and ep.steps:
        tds = _learn(agent, [(s.obs_sched, s.sched_action, s.R) for s in ep.steps], config.clip_norm)
        for s, td in zip(ep.steps, tds):
            s.td_sched = td
    return EpisodeTrace(seed, ep.steps, ep.loop, ep.scorer, env.warmup_scans, ep.epsilon, flagged)


# --- training ---------------------------------------------------------------


@dataclass
class AgentSet:
    """Trained attacker: either a scheduler/disturber pair or one unified agent."""

    config: AdversaryConfig
    scheduler: Agent | None = None
    disturber: Agent | None = None
    unified: Agent | None = None

    @property
    def dual(self) -> bool:
        return self.unified is None

    def episode(self, env: EpisodeEnv, rng: np.random.Generator, seed: int, learn: bool = True) -> EpisodeTrace:
        if self.dual:
            return run_episode(env, self.scheduler, self.disturber, self.config, rng, seed, learn)
        return single_agent_baseline(env, self.unified, self.config, rng, seed, learn)


def make_agents(config: AdversaryConfig, n_detectors: int, seed: int = 0, dual: bool = True) -> AgentSet:
    rng = np.random.default_rng(seed)
    n_obs = observation_size(config, n_detectors)
    if dual:
        sched = Agent.create(n_obs, len(T_WAIT_GRID) * len(config.delay_grid), config, config.gamma_sched, rng,
                             "scheduler")
        dist = Agent.create(n_obs + 1, len(config.subsets), config, config.gamma_dist, rng, "disturber")
        return AgentSet(config, sched, dist)
    return AgentSet(config, unified=Agent.create(n_obs, single_action_space(config), config, config.gamma_sched,
                                                   rng, "unified"))


@dataclass
class TrainingCurve:
    rewards: list[float] = field(default_factory=list)
    flagged: list[bool] = field(default_factory=list)
    delays: list[int] = field(default_factory=list)

    def episodes_to_fraction(self, fraction: float = 0.95, tail: float = 0.1) -> int:
        """First episode whose running mean reaches ``fraction`` of the final mean.

        The final mean is the mean over the trailing ``tail`` share of
        episodes. Returns the 1-based episode count.
        """
        r = np.asarray(self.rewards, dtype=float)
        if r.size == 0:
            raise ValueError("empty training curve")
        n_tail = max(1, int(round(tail * r.size)))
        final = r[-n_tail:].mean()
        running = np.cumsum(r) / np.arange(1, r.size + 1)
        hit = np.flatnonzero(running >= fraction * final)
        return int(hit[0] + 1) if hit.size else int(r.size)


def train(agents: AgentSet, env: EpisodeEnv, n_episodes: int, seed: int = 0,
          seed_offset: int = 1_000_000) -> TrainingCurve:
    """Train in place for ``n_episodes``; plant seeds run seed_offset*seed + i."""
    rng = np.random.default_rng(seed)
    curve = TrainingCurve()
    for i in range(n_episodes):
        tr = agents.episode(env, rng, seed_offset * (seed + 1) + i, learn=True)
        if not math.isfinite(tr.mean_reward):
            raise FloatingPointError(f"non-finite reward in episode {i}")
        curve.rewards.append(tr.mean_reward)
        curve.flagged.append(tr.flagged)
        curve.delays.append(tr.delays_used)
    return curve
