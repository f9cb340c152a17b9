"""Experiment orchestration: scenarios, the three evaluation phases and min-max hardening.

A scenario is a versioned JSON document. Every phase is a pure function of
the scenario and a seed, so reruns with the same inputs write byte-identical
report files. Seeds are independent and may run in worker processes; the
per-seed results are merged in seed order.
"""

from __future__ import annotations

import copy
import dataclasses
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .adversary import (
    AdversaryConfig, AgentSet, EpisodeEnv, EpisodeTrace, Knowledge, Strategy, TrainingCurve, make_agents, train,
)
from .baselines import BaselineSpec, extreme_attack, make_baseline
from .channel import ALL_TAGS, ChannelConfig, Tag
from .detectors import (
    DetectorSuite, StreamingScorer, WindowSpec, extract_windows, fit_autoencoder, fit_statistical, harden,
    window_labels,
)
from .evaluation import (
    DRIFT_TIERS, DriftSpec, MetricsReport, SweepRow, TraceScores, apply_drift, bootstrap_stealth, detection_metrics,
    impact_deltas, pareto_sweep, plant_metrics, score_trace, table_csv, trace_stealth,
)
from .loop import FEATURE_NAMES, ClosedLoop
from .plant import PlantConfig

log = logging.getLogger(__name__)

SCENARIO_FORMAT = "timingsim-scenario"
SCENARIO_VERSION = 1
OUT_ENV = "TIMINGSIM_OUT"
EVAL_SEED_BASE = 900_000
TRACE_SEED_BASE = 10_000
DEFENDER_SEED_BASE = 3_000_000


class HarnessError(RuntimeError):
    """A failure with a stable, machine-readable code."""

    def __init__(self, code: str, message: str, **details):
        super().__init__(message)
        self.code = code
        self.details = details

    def to_dict(self) -> dict:
        return {"error": self.code, "message": str(self), **self.details}


# --- scenario ---------------------------------------------------------------


@dataclass
class DetectorSettings:
    window: int = 32
    stride: int = 8
    architectures: tuple[str, ...] = ("statistical", "dense", "conv")
    epochs: dict = field(default_factory=lambda: {"dense": 60, "conv": 30})
    target_fpr: float = 0.01
    n_hysteresis: int = 3
    benign_traces: int = 6
    attack_traces: int = 3
    trace_scans: int = 1000
    ooc_drop_features: tuple[str, ...] = ("level_age",)

    def __post_init__(self):
        self.architectures = tuple(self.architectures)
        self.ooc_drop_features = tuple(self.ooc_drop_features)
        if self.benign_traces < 3:
            raise ValueError("need >= 3 benign traces (fit, train, held out)")
        unknown = set(self.ooc_drop_features) - set(FEATURE_NAMES)
        if unknown:
            raise ValueError(f"unknown features {sorted(unknown)}")


@dataclass
class EpisodeCounts:
    train: int = 300
    eval: int = 30
    episode_scans: int = 200
    warmup_scans: int = 32

    def __post_init__(self):
        if self.train < 1 or self.eval < 1 or self.episode_scans < 1:
            raise ValueError("episode counts must be >= 1")


@dataclass
class MinMaxConfig:
    rounds: int = 3
    attacker_episodes: int = 100
    defender_epochs: int = 10
    attacker_frozen: bool = True
    eval_episodes: int = 20
    # extra benign traces for hardening: a 1% threshold refit on a few hundred windows rests on one or two samples
    defender_benign_traces: int = 12

    def __post_init__(self):
        # zero rounds is the degenerate "detectors unchanged" case
        if self.rounds < 0 or self.defender_benign_traces < 0:
            raise ValueError("rounds and defender_benign_traces must be >= 0")
        if self.attacker_episodes < 1 or self.defender_epochs < 1 or self.eval_episodes < 1:
            raise ValueError("attacker episodes, defender epochs and eval episodes must be >= 1")


@dataclass
class Scenario:
    plant: PlantConfig = field(default_factory=PlantConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    adversary: AdversaryConfig = field(default_factory=AdversaryConfig)
    detectors: DetectorSettings = field(default_factory=DetectorSettings)
    baseline: BaselineSpec | None = None
    drift: DriftSpec | None = None
    seeds: list[int] = field(default_factory=lambda: [0])
    episodes: EpisodeCounts = field(default_factory=EpisodeCounts)
    minmax: MinMaxConfig = field(default_factory=MinMaxConfig)
    out_dir: str = "runs"

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("seeds must be nonempty")
        self.seeds = [int(s) for s in self.seeds]

    @property
    def output_dir(self) -> Path:
        return Path(os.environ.get(OUT_ENV) or self.out_dir)

    def env(self, suite: DetectorSuite | None, plant: PlantConfig | None = None, **kw) -> EpisodeEnv:
        return EpisodeEnv(plant or self.plant, suite, self.episodes.episode_scans, self.episodes.warmup_scans, **kw)

    def to_dict(self) -> dict:
        ch = asdict(self.channel)
        ch["delayable_tags"] = sorted(t.value for t in self.channel.delayable_tags)
        return {
            "format": SCENARIO_FORMAT, "version": SCENARIO_VERSION,
            "plant": asdict(self.plant), "channel": ch, "adversary": self.adversary.to_dict(),
            "detectors": asdict(self.detectors), "baseline": self.baseline.to_dict() if self.baseline else None,
            "drift": asdict(self.drift) if self.drift else None, "seeds": list(self.seeds),
            "episodes": asdict(self.episodes), "minmax": asdict(self.minmax), "out_dir": self.out_dir,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Scenario":
        if d.get("format") != SCENARIO_FORMAT:
            raise HarnessError("config_invalid", f"format must be {SCENARIO_FORMAT!r}")
        if d.get("version") != SCENARIO_VERSION:
            raise HarnessError("config_version", f"unsupported scenario version {d.get('version')!r}")
        known = {f.name for f in fields(cls)} | {"format", "version"}
        extra = set(d) - known
        if extra:
            raise HarnessError("config_invalid", f"unknown scenario keys {sorted(extra)}")
        try:
            kw = {
                "plant": _build(PlantConfig, d.get("plant")),
                "channel": _build(ChannelConfig, d.get("channel")),
                "adversary": _build(AdversaryConfig, d.get("adversary")),
                "detectors": _build(DetectorSettings, d.get("detectors")),
                "episodes": _build(EpisodeCounts, d.get("episodes")),
                "minmax": _build(MinMaxConfig, d.get("minmax")),
            }
            if d.get("baseline") is not None:
                kw["baseline"] = BaselineSpec(**d["baseline"])
            if d.get("drift") is not None:
                drift = d["drift"]
                kw["drift"] = DRIFT_TIERS[drift] if isinstance(drift, str) else DriftSpec(**drift)
            if "seeds" in d:
                kw["seeds"] = list(d["seeds"])
            if "out_dir" in d:
                kw["out_dir"] = str(d["out_dir"])
            return cls(**kw)
        except HarnessError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise HarnessError("config_invalid", str(exc)) from exc


def _build(cls, d: Mapping | None):
    if d is None:
        return cls()
    names = {f.name for f in fields(cls)}
    extra = set(d) - names
    if extra:
        raise HarnessError("config_invalid", f"unknown {cls.__name__} keys {sorted(extra)}")
    kw = {k: tuple(v) if isinstance(v, list) and k in ("hidden", "epsilon", "d_weights") else v for k, v in d.items()}
    if cls is ChannelConfig and "delayable_tags" in kw:
        kw["delayable_tags"] = frozenset(Tag(t) for t in kw["delayable_tags"])
    return cls(**kw)


def load_scenario(path) -> Scenario:
    p = Path(path)
    if not p.is_file():
        raise HarnessError("config_missing", f"no scenario file at {p}", path=str(p))
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise HarnessError("config_invalid", f"not valid JSON: {exc}", path=str(p)) from exc
    return Scenario.from_dict(data)


def save_scenario(scenario: Scenario, path) -> None:
    Path(path).write_text(dumps(scenario.to_dict()))


def dumps(obj) -> str:
    """Canonical JSON: sorted keys, repr floats, trailing newline."""
    return json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n"


def _default(o):
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (Strategy, Knowledge, Tag)):
        return o.value
    if dataclasses.is_dataclass(o):
        return asdict(o)
    raise TypeError(f"not JSON serialisable: {type(o)}")


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


# --- seeds ------------------------------------------------------------------


def trace_seeds(seed: int, n: int, attack: bool = False) -> list[int]:
    base = TRACE_SEED_BASE * (seed + 1) + (5_000 if attack else 0)
    return [base + i for i in range(n)]


def defender_seeds(seed: int, n: int) -> list[int]:
    """Plant seeds of the defender's extra benign traces for hardening."""
    return [DEFENDER_SEED_BASE + 1_000 * seed + i for i in range(n)]


def eval_seeds(seed: int, n: int) -> list[int]:
    """Plant seeds of evaluation episodes, disjoint from the training seeds."""
    return [EVAL_SEED_BASE + 1_000 * seed + i for i in range(n)]


def run_seeds(fn: Callable[[int], object], seeds: Sequence[int], workers: int = 1) -> dict[int, object]:
    """Run ``fn`` per seed, in worker processes when ``workers`` > 1; merged in seed order."""
    seeds = sorted(set(seeds))
    if workers <= 1 or len(seeds) == 1:
        return {s: fn(s) for s in seeds}
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return dict(zip(seeds, pool.map(fn, seeds)))


# --- phase 1: detectors -----------------------------------------------------


def benign_traces(scenario: Scenario, seed: int, plant: PlantConfig | None = None) -> list[np.ndarray]:
    s = scenario.detectors
    return [ClosedLoop(plant or scenario.plant, scenario.channel, seed=k).run(s.trace_scans).feature_matrix()
            for k in trace_seeds(seed, s.benign_traces)]


def extreme_loops(scenario: Scenario, seed: int, n: int | None = None) -> list[ClosedLoop]:
    s = scenario.detectors
    n = s.attack_traces if n is None else n
    return [ClosedLoop(scenario.plant, scenario.channel, seed=k)
            .run(s.trace_scans, extreme_attack(k, scenario.channel.delay_cap))
            for k in trace_seeds(seed, n, attack=True)]


def fit_suite(traces: Sequence[np.ndarray], settings: DetectorSettings, seed: int = 0,
              drop_features: Sequence[str] = (), window: int | None = None) -> DetectorSuite:
    """Fit the window statistics and every configured detector on benign traces.

    The last trace is held out; the one before it only feeds training
    windows, so normalisation statistics come from the rest.
    """
    length = window or settings.window
    stride = settings.stride if window is None else max(1, length // 4)
    spec = WindowSpec(length, stride).fit(np.vstack(traces[:-2]))
    for name in drop_features:
        spec.retained[FEATURE_NAMES.index(name)] = False
    if not spec.retained.any():
        raise HarnessError("calibration_failed", "no feature left after dropping")
    windows = np.concatenate([extract_windows(t, spec)[0] for t in traces[:-1]])
    dets = []
    for i, arch in enumerate(settings.architectures):
        if arch == "statistical":
            dets.append(fit_statistical(windows, spec, settings.target_fpr, n_hysteresis=settings.n_hysteresis))
        else:
            dets.append(fit_autoencoder(windows, spec, arch, epochs=settings.epochs.get(arch, 30),
                                        seed=1_000 * seed + i, target_fpr=settings.target_fpr,
                                        n_hysteresis=settings.n_hysteresis))
    for d in dets:
        if not math.isfinite(d.tau):
            raise HarnessError("calibration_failed", f"{d.name} threshold is not finite")
    return DetectorSuite(spec, dets)


def suite_benign_windows(suite: DetectorSuite, traces: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate([suite.windows(t)[0] for t in traces[:-1]])


def detection_table(suite: DetectorSuite, attack: Sequence[tuple[np.ndarray, np.ndarray]], benign: np.ndarray,
                    start: int = 0) -> list[dict]:
    """Per-detector precision/recall/F1 on attack traces and FPR on a held-out benign trace."""
    if not attack:
        raise HarnessError("no_attack_traces", "evaluation needs at least one attack trace")
    att = [score_trace(suite, f, lab, start) for f, lab in attack]
    ben = score_trace(suite, benign, np.zeros(len(benign), dtype=bool))
    rows = []
    for d, m_att, m_ben in zip(suite.detectors, detection_metrics(att), detection_metrics([ben])):
        rows.append({"detector": d.name, "kind": d.kind, "tau": d.tau, "precision": m_att.precision,
                     "recall": m_att.recall, "f1": m_att.f1, "benign_fpr": m_ben.fpr})
    return rows


@dataclass
class Phase1Result:
    suite: DetectorSuite
    report: list[dict]
    benign_windows: np.ndarray
    seed: int

    def table(self) -> str:
        lines = [f"{'detector':<10} {'precision':>9} {'recall':>7} {'f1':>7} {'benign FPR':>10}"]
        for r in self.report:
            lines.append(f"{r['detector']:<10} {_fmt(r['precision']):>9} {_fmt(r['recall']):>7} {_fmt(r['f1']):>7} "
                         f"{_fmt(r['benign_fpr']):>10}")
        return "\n".join(lines)


def phase1_train_detectors(scenario: Scenario, seed: int | None = None, out_dir: Path | None = None) -> Phase1Result:
    """Benign and extreme-attack traces, fitted and calibrated detectors, and their report."""
    seed = scenario.seeds[0] if seed is None else seed
    s = scenario.detectors
    if s.attack_traces < 1:
        raise HarnessError("no_attack_traces", "phase 1 needs at least one extreme-attack trace")
    benign = benign_traces(scenario, seed)
    suite = fit_suite(benign, s, seed)
    attack = [(L.feature_matrix(), L.labels()) for L in extreme_loops(scenario, seed)]
    report = detection_table(suite, attack, benign[-1])
    result = Phase1Result(suite, report, suite_benign_windows(suite, benign), seed)
    if out_dir is not None:
        _write(out_dir / "phase1_report.json", dumps(report))
        _write(out_dir / "detectors.json", dumps(suite.to_dict()))
        _write(out_dir / "phase1_table.txt", result.table() + "\n")
    return result


# --- evaluation runs --------------------------------------------------------


@dataclass
class RunSet:
    """Evaluation episodes of one policy: loops scored by one suite, plus the benign twins."""

    loops: list[ClosedLoop]
    scorers: list[StreamingScorer]
    benign: list[ClosedLoop]
    start: int
    traces: list[EpisodeTrace] = field(default_factory=list)

    def scored(self, suite: DetectorSuite) -> list[TraceScores]:
        if suite is self.scorers[0].suite:
            return [score_trace(suite, L.feature_matrix(), L.labels(), self.start, sc)
                    for L, sc in zip(self.loops, self.scorers)]
        return [score_trace(suite, L.feature_matrix(), L.labels(), self.start) for L in self.loops]


def _span_report(loops: Sequence[ClosedLoop], start: int) -> MetricsReport:
    progress = cycles = duration = 0.0
    quals: list[float] = []
    for L in loops:
        before = L.plant_rows[start - 1] if start > 0 else None
        progress += L.progress[-1] - (L.progress[start - 1] if start > 0 else 0.0)
        cycles += L.cycles - (before[5] + before[6] if before is not None else 0)
        duration += (L.scan_index - start) * L.plant_config.scan_period
        quals.extend(L.qualities)
    m = plant_metrics([0.0, progress], cycles, quals, duration)
    return MetricsReport(m["throughput"], m["quality_inaccuracy"], m["cycles_per_min"])


def benign_loops(env: EpisodeEnv, seeds: Sequence[int]) -> list[ClosedLoop]:
    return [ClosedLoop(env.plant, seed=s).run(env.total_scans) for s in seeds]


def metrics_report(runs: RunSet, suite: DetectorSuite, ci_seed: int = 0) -> MetricsReport:
    """Recall per detector, stealth with a bootstrap CI, impact deltas and flag rates."""
    scored = runs.scored(suite)
    rep = _span_report(runs.loops, runs.start)
    base = _span_report(runs.benign, runs.start)
    rep.delta_throughput, rep.delta_quality, rep.delta_cycles = impact_deltas(rep, base)
    rep.recall = {d.name: m.recall for d, m in zip(suite.detectors, detection_metrics(scored))}
    rep.stealth = trace_stealth(scored, suite.weights)
    _, lo, hi = bootstrap_stealth(scored, suite.weights, seed=ci_seed)
    rep.stealth_ci = (lo, hi)
    alarms = np.concatenate([t.alarms for t in scored], axis=1)
    rep.flag_rates = {d.name: float(a.mean()) if a.size else 0.0 for d, a in zip(suite.detectors, alarms)}
    rep.flag_rate = max(rep.flag_rates.values()) if rep.flag_rates else 0.0
    return rep


def run_agents(agents: AgentSet, env: EpisodeEnv, seeds: Sequence[int], rng_seed: int = 0) -> RunSet:
    """Frozen evaluation episodes (no learning) on the given plant seeds."""
    rng = np.random.default_rng(rng_seed)
    traces = [agents.episode(env, rng, s, learn=False) for s in seeds]
    return RunSet([t.loop for t in traces], [t.scorer for t in traces], benign_loops(env, seeds),
                  env.warmup_scans, traces)


def run_policy(policy_factory: Callable[[int], Callable], env: EpisodeEnv, channel: ChannelConfig,
               seeds: Sequence[int]) -> RunSet:
    """Run a non-learning delay policy after the warmup on each plant seed."""
    loops, scorers = [], []
    for s in seeds:
        L = ClosedLoop(env.plant, channel, seed=s).run(env.warmup_scans)
        L.run(env.episode_scans, policy_factory(s))
        sc = StreamingScorer(env.suite)
        sc.update(L.features)
        loops.append(L)
        scorers.append(sc)
    return RunSet(loops, scorers, benign_loops(env, seeds), env.warmup_scans)


def bench_baseline(scenario: Scenario, suite: DetectorSuite, spec: BaselineSpec | None = None,
                   seed: int | None = None, channel: ChannelConfig | None = None) -> MetricsReport:
    spec = spec or scenario.baseline
    if spec is None:
        raise HarnessError("config_invalid", "the scenario names no baseline")
    seed = scenario.seeds[0] if seed is None else seed
    channel = channel or scenario.channel
    env = scenario.env(suite)
    runs = run_policy(lambda s: make_baseline(spec, s, suite, channel.delay_cap), env, channel,
                      eval_seeds(seed, scenario.episodes.eval))
    return metrics_report(runs, suite, seed)


# --- phase 2: adversary -----------------------------------------------------


@dataclass
class Phase2Result:
    agents: AgentSet
    curve: TrainingCurve
    seed: int


def write_curve(curve: TrainingCurve, path: Path) -> None:
    rows = [{"episode": i + 1, "reward": repr(r), "flagged": int(f), "delays": d}
            for i, (r, f, d) in enumerate(zip(curve.rewards, curve.flagged, curve.delays))]
    path.parent.mkdir(parents=True, exist_ok=True)
    table_csv(rows, path)


def phase2_train_adversary(scenario: Scenario, suite: DetectorSuite, seed: int | None = None,
                           config: AdversaryConfig | None = None, dual: bool = True,
                           episodes: int | None = None, out_dir: Path | None = None) -> Phase2Result:
    """Train a scheduler/disturber pair (or the single-agent baseline) against a frozen suite."""
    seed = scenario.seeds[0] if seed is None else seed
    config = config or scenario.adversary
    n = scenario.episodes.train if episodes is None else episodes
    agents = make_agents(config, len(suite.detectors), seed=seed, dual=dual)
    frozen = copy.deepcopy(suite)  # sandboxed: training cannot touch the caller's detectors
    try:
        curve = train(agents, scenario.env(frozen), n, seed=seed)
    except FloatingPointError as exc:
        raise HarnessError("nan_reward", str(exc), seed=seed, strategy=config.strategy.value,
                           knowledge=config.knowledge.value) from exc
    if out_dir is not None:
        tag = f"{config.strategy.value}_{config.knowledge.value}_{'dual' if dual else 'single'}"
        write_curve(curve, out_dir / f"curve_{tag}.csv")
    return Phase2Result(agents, curve, seed)


def evaluate_agents(scenario: Scenario, agents: AgentSet, suite: DetectorSuite, seed: int | None = None,
                    env: EpisodeEnv | None = None) -> MetricsReport:
    seed = scenario.seeds[0] if seed is None else seed
    env = env or scenario.env(suite)
    return metrics_report(run_agents(agents, env, eval_seeds(seed, scenario.episodes.eval), seed), suite, seed)


# --- phase 3: out of context ------------------------------------------------


REMAP_PAIRS = ((Tag.LEVEL_REPORT, Tag.FILL_CMD), (Tag.SETPOINT_REPORT, Tag.DISCHARGE_CMD))


def tag_remap(pairs: int) -> dict[Tag, Tag] | None:
    """The attacker's tag labels after drift: each pair is swapped."""
    if pairs <= 0:
        return None
    m = {t: t for t in ALL_TAGS}
    for a, b in REMAP_PAIRS[:pairs]:
        m[a], m[b] = b, a
    return m


def fresh_suite(scenario: Scenario, drift: DriftSpec, seed: int | None = None) -> DetectorSuite:
    """Detectors for the out-of-context phase.

    A retuned suite is fit on drifted benign data over a reduced feature
    subset and a possibly shorter window; otherwise the phase-1 recipe is
    rerun on nominal data, which reproduces the phase-1 suite.
    """
    seed = scenario.seeds[0] if seed is None else seed
    s = scenario.detectors
    if not drift.detector_retune:
        return fit_suite(benign_traces(scenario, seed), s, seed)
    window = max(4, int(round(s.window * (1.0 - drift.window_shrink))))
    traces = benign_traces(scenario, seed, apply_drift(scenario.plant, drift))
    return fit_suite(traces, s, seed, s.ooc_drop_features, window)


def phase3_ooc_eval(scenario: Scenario, agents: Mapping[tuple[Strategy, Knowledge], AgentSet],
                    suite: DetectorSuite, drift: DriftSpec | None = None,
                    seed: int | None = None) -> dict[str, MetricsReport]:
    """Frozen agents against drifted plant dynamics and a fresh suite; keyed "strategy/knowledge"."""
    seed = scenario.seeds[0] if seed is None else seed
    drift = drift or scenario.drift or DriftSpec()
    env = scenario.env(suite, apply_drift(scenario.plant, drift), tag_map=tag_remap(drift.tag_remap_pairs))
    out = {}
    for (strategy, knowledge), ag in sorted(agents.items(), key=lambda kv: (kv[0][0].value, kv[0][1].value)):
        out[f"{Strategy(strategy).value}/{Knowledge(knowledge).value}"] = evaluate_agents(scenario, ag, suite, seed, env)
    return out


# --- min-max hardening ------------------------------------------------------


@dataclass
class RoundLog:
    round: int
    episode_rewards: list[float]
    recalls: dict[str, float]
    attack_windows: int

    @property
    def R_attack(self) -> float:
        return float(np.mean(self.episode_rewards))

    @property
    def R_detect(self) -> float:
        return float(np.mean(list(self.recalls.values())))

    @property
    def L(self) -> float:
        return self.R_attack - self.R_detect

    def to_dict(self) -> dict:
        return {"round": self.round, "R_attack": self.R_attack, "R_detect": self.R_detect, "L": self.L,
                "recalls": self.recalls, "episode_rewards": self.episode_rewards,
                "attack_windows": self.attack_windows}


@dataclass
class MinMaxResult:
    suite: DetectorSuite
    agents: AgentSet
    rounds: list[RoundLog]


def attack_windows(suite: DetectorSuite, traces: Sequence[EpisodeTrace]) -> np.ndarray:
    """Windows of the episodes that contain at least one delayed packet."""
    out = []
    for tr in traces:
        w, ends = suite.windows(tr.loop.feature_matrix())
        keep = (ends >= tr.warmup) & window_labels(tr.loop.labels(), ends, suite.spec.length)
        out.append(w[keep])
    return np.concatenate(out) if out else np.zeros((0, suite.spec.length, suite.spec.n_features))


def suite_recalls(suite: DetectorSuite, traces: Sequence[EpisodeTrace]) -> dict[str, float]:
    """Window recall per detector over the episodes, each rescored end to end by ``suite``."""
    scored = [score_trace(suite, t.loop.feature_matrix(), t.loop.labels(), t.warmup) for t in traces]
    return {d.name: (m.recall or 0.0) for d, m in zip(suite.detectors, detection_metrics(scored))}


def minmax_train(scenario: Scenario, config: MinMaxConfig | None = None, suite: DetectorSuite | None = None,
                 agents: AgentSet | None = None, benign_windows: np.ndarray | None = None,
                 seed: int | None = None) -> MinMaxResult:
    """Alternate attacker and defender updates.

    Each round the attacker trains (unless frozen), plays evaluation episodes
    that yield R_attack and the attack windows, the pre-update recall on
    those windows gives R_detect, and each trainable detector is then
    hardened on them. The defender adds ``defender_benign_traces`` fresh
    benign traces to ``benign_windows`` before the first round. Missing
    inputs are produced by phases 1 and 2.
    """
    seed = scenario.seeds[0] if seed is None else seed
    config = config or scenario.minmax
    if suite is None or benign_windows is None:
        p1 = phase1_train_detectors(scenario, seed)
        suite = suite or p1.suite
        benign_windows = p1.benign_windows if benign_windows is None else benign_windows
    suite = copy.deepcopy(suite)
    if config.rounds and config.defender_benign_traces:
        s = scenario.detectors
        extra = [suite.windows(ClosedLoop(scenario.plant, scenario.channel, seed=k).run(s.trace_scans)
                               .feature_matrix())[0] for k in defender_seeds(seed, config.defender_benign_traces)]
        benign_windows = np.concatenate([benign_windows] + extra)
    if agents is None:
        agents = phase2_train_adversary(scenario, suite, seed).agents
    agents = copy.deepcopy(agents)
    env = scenario.env(suite)
    rounds = []
    for r in range(config.rounds):
        if not config.attacker_frozen:
            train(agents, env, config.attacker_episodes, seed=seed + 7_000 + r)
        rng = np.random.default_rng(seed + 31 * r)
        base = 500_000 + 10_000 * seed + 1_000 * r
        traces = [agents.episode(env, rng, base + i, learn=False) for i in range(config.eval_episodes)]
        recalls = suite_recalls(suite, traces)
        windows = attack_windows(suite, traces)
        rounds.append(RoundLog(r, [t.mean_reward for t in traces], recalls, len(windows)))
        if len(windows):
            for i, det in enumerate(suite.detectors):
                harden(det, benign_windows, windows, epochs=config.defender_epochs, seed=seed + 100 * r + i)
    return MinMaxResult(suite, agents, rounds)


# --- alpha / beta sweep -----------------------------------------------------


def sweep(scenario: Scenario, suite: DetectorSuite, grid: Sequence[tuple[float, float]] | None = None,
          seed: int | None = None, episodes: int | None = None) -> list[SweepRow]:
    """Train and evaluate one attacker per (alpha, beta); rows ranked best first."""
    grid = grid or [(0.7, 0.3), (0.55, 0.45), (0.5, 0.5), (0.3, 0.7)]
    rows = []
    for a, b in grid:
        cfg = replace(scenario.adversary, alpha=a, beta=b)
        p2 = phase2_train_adversary(scenario, suite, seed, cfg, episodes=episodes)
        rep = evaluate_agents(scenario, p2.agents, suite, seed)
        rows.append(SweepRow(a, b, rep.stealth, rep.delta_throughput, rep.delta_cycles))
    return pareto_sweep(rows)


# --- reporting --------------------------------------------------------------


def _fmt(v, spec: str = ".3f") -> str:
    return "-" if v is None or (isinstance(v, float) and math.isnan(v)) else format(v, spec)


def summary_table(reports: Mapping[str, MetricsReport]) -> str:
    """Plain-text table: one row per setting, recall per detector, stealth and impact."""
    if not reports:
        return "(no results)\n"
    names = list(next(iter(reports.values())).recall)
    w = max(20, max(len(k) for k in reports) + 2)
    head = f"{'setting':<{w}}" + "".join(f"{n:>10}" for n in names) + \
        f"{'stealth':>9}{'dThru%':>9}{'dQual':>8}{'dCyc%':>8}{'flag':>8}"
    lines = [head, "-" * len(head)]
    for key, r in reports.items():
        lines.append(f"{key:<{w}}" + "".join(f"{_fmt(r.recall.get(n)):>10}" for n in names)
                     + f"{_fmt(r.stealth):>9}{_fmt(r.delta_throughput, '.1f'):>9}{_fmt(r.delta_quality, '.2f'):>8}"
                     + f"{_fmt(r.delta_cycles, '.1f'):>8}{_fmt(r.flag_rate, '.4f'):>8}")
    return "\n".join(lines) + "\n"


def report_from_dict(d: Mapping) -> MetricsReport:
    d = dict(d)
    if d.get("stealth_ci") is not None:
        d["stealth_ci"] = tuple(d["stealth_ci"])
    return MetricsReport(**d)


def write_reports(reports: Mapping[str, MetricsReport], out_dir: Path, name: str) -> None:
    _write(out_dir / f"{name}.json", dumps({k: v.to_dict() for k, v in reports.items()}))
    _write(out_dir / f"{name}_summary.txt", summary_table(reports))


def collect_reports(out_dir: Path) -> dict[str, MetricsReport]:
    """Merge every metrics JSON under ``out_dir``; keys are prefixed with the file's relative stem."""
    merged = {}
    for p in sorted(Path(out_dir).rglob("*.json")):
        if p.name in ("phase1_report.json", "detectors.json", "scenario.json") or p.name.startswith("minmax"):
            continue
        data = json.loads(p.read_text())
        if not isinstance(data, dict):
            continue
        stem = p.relative_to(out_dir).with_suffix("").as_posix()
        for k, v in sorted(data.items()):
            if isinstance(v, dict) and "throughput" in v:
                merged[f"{stem}:{k}"] = report_from_dict(v)
    return merged
