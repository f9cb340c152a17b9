"""Metrics and experiment analytics.

Two window regimes coexist. Detector recall (precision/recall/F1 tables)
uses the overlapping scoring windows. The stealth score uses
non-overlapping blocks of W scans: a block counts as detected when any alarm
of the detector ends inside it.
"""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.optimize import curve_fit

from .detectors import DetectionMetrics, DetectorSuite, StreamingScorer, evaluate, window_labels
from .plant import PlantConfig

log = logging.getLogger(__name__)


# --- stealth ----------------------------------------------------------------


def stealth(tp: np.ndarray, fn: np.ndarray, weights: Sequence[float]) -> float:
    """1 - sum_d w_d * mean_t R_{d,t} with R_{d,t} = TP / (TP + FN).

    ``tp`` and ``fn`` have shape (n_detectors, n_windows). Windows without
    attack samples are skipped; a detector with no attack window at all is
    dropped and the remaining weights renormalised.
    """
    tp = np.asarray(tp, dtype=float)
    fn = np.asarray(fn, dtype=float)
    w = np.asarray(weights, dtype=float)
    if not math.isclose(w.sum(), 1.0, rel_tol=0, abs_tol=1e-9):
        raise ValueError("detector weights must sum to 1")
    pos = tp + fn
    means = []
    keep = []
    for d in range(tp.shape[0]):
        sel = pos[d] > 0
        if not sel.any():
            log.info("detector %d saw no attack window; excluded from stealth", d)
            continue
        means.append(float(np.mean(tp[d, sel] / pos[d, sel])))
        keep.append(d)
    if not keep:
        return 1.0
    wk = w[keep] / w[keep].sum()
    return float(1.0 - np.dot(wk, means))


def stealth_from_recalls(recalls: Sequence[float], weights: Sequence[float]) -> float:
    r = np.asarray(recalls, dtype=float)
    return stealth(r[:, None], (1.0 - r)[:, None], weights)


def bootstrap_ci(values: Sequence[float], n_resamples: int = 1000, level: float = 0.95,
                 seed: int = 0) -> tuple[float, float, float]:
    """Mean and percentile-bootstrap confidence interval."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("no values to bootstrap")
    rng = np.random.default_rng(seed)
    means = v[rng.integers(v.size, size=(n_resamples, v.size))].mean(axis=1)
    a = (1.0 - level) / 2.0
    return float(v.mean()), float(np.quantile(means, a)), float(np.quantile(means, 1.0 - a))


def bootstrap_stealth(traces: Sequence["TraceScores"], weights: Sequence[float], n_resamples: int = 1000,
                      level: float = 0.95, seed: int = 0) -> tuple[float, float, float]:
    """Pooled stealth with a percentile CI from resampling whole episodes."""
    if not traces:
        raise ValueError("no traces to bootstrap")
    rng = np.random.default_rng(seed)
    stats = [trace_stealth([traces[i] for i in rng.integers(len(traces), size=len(traces))], weights)
             for _ in range(n_resamples)]
    a = (1.0 - level) / 2.0
    return trace_stealth(traces, weights), float(np.quantile(stats, a)), float(np.quantile(stats, 1.0 - a))


# --- detection over traces ---------------------------------------------------


@dataclass
class TraceScores:
    """Per-detector alarm streams and labels of one trace."""

    alarms: np.ndarray  # (n_det, n_windows) bool
    window_labels: np.ndarray  # (n_windows,) bool
    ends: np.ndarray
    block_tp: np.ndarray  # (n_det, n_blocks)
    block_fn: np.ndarray
    block_flagged: np.ndarray  # (n_det, n_blocks) bool
    block_labels: np.ndarray


def score_trace(suite: DetectorSuite, features: np.ndarray, labels: np.ndarray, start: int = 0,
                scorer: StreamingScorer | None = None) -> TraceScores:
    """Score a full trace; windows and blocks begin at row ``start``."""
    if scorer is None:
        scorer = StreamingScorer(suite, start)
        scorer.update(features)
    ends = np.asarray(scorer.ends, dtype=int)
    alarms = scorer.alarm_array()
    sel = ends >= start + suite.spec.length - 1
    ends, alarms = ends[sel], alarms[:, sel]
    W = suite.spec.length
    labels = np.asarray(labels, dtype=bool)
    wl = window_labels(labels, ends, W) if ends.size else np.zeros(0, dtype=bool)
    n_blocks = (len(labels) - start) // W
    blk_lab = np.array([labels[start + b * W:start + (b + 1) * W].any() for b in range(n_blocks)], dtype=bool)
    blk_of_end = (ends - start) // W
    flagged = np.zeros((alarms.shape[0], n_blocks), dtype=bool)
    for d in range(alarms.shape[0]):
        hit = blk_of_end[alarms[d] & (blk_of_end < n_blocks)]
        flagged[d, hit] = True
    tp = (flagged & blk_lab).astype(int)
    fn = (~flagged & blk_lab).astype(int)
    return TraceScores(alarms, wl, ends, tp, fn, flagged, blk_lab)


def detection_metrics(traces: Sequence[TraceScores]) -> list[DetectionMetrics]:
    """Window-level confusion metrics per detector over several traces."""
    if not traces:
        raise ValueError("no traces to evaluate")
    alarms = np.concatenate([t.alarms for t in traces], axis=1)
    labels = np.concatenate([t.window_labels for t in traces])
    return [evaluate(a, labels) for a in alarms]


def trace_stealth(traces: Sequence[TraceScores], weights: Sequence[float]) -> float:
    tp = np.concatenate([t.block_tp for t in traces], axis=1)
    fn = np.concatenate([t.block_fn for t in traces], axis=1)
    return stealth(tp, fn, weights)


# --- impact -----------------------------------------------------------------


@dataclass
class MetricsReport:
    throughput: float  # batches per simulated hour
    quality_inaccuracy: float  # percent
    cycles_per_min: float
    recall: dict[str, float | None] = field(default_factory=dict)
    stealth: float | None = None
    stealth_ci: tuple[float, float] | None = None
    delta_throughput: float | None = None  # percent
    delta_quality: float | None = None  # percentage points
    delta_cycles: float | None = None  # percent
    flag_rate: float | None = None  # alarms per scored window, worst detector
    flag_rates: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def plant_metrics(progress: Sequence[float], cycles: float, qualities: Sequence[float], duration_ms: float) -> dict:
    """Throughput, quality and cycle rate of one span of operation."""
    hours = duration_ms / 3.6e6
    minutes = duration_ms / 6e4
    prog = np.asarray(progress, dtype=float)
    return {
        "throughput": float((prog[-1] - prog[0]) / hours) if prog.size else 0.0,
        "quality_inaccuracy": float(np.mean(qualities)) if len(qualities) else float("nan"),
        "cycles_per_min": float(cycles / minutes),
    }


def impact_deltas(attack: MetricsReport, benign: MetricsReport) -> tuple[float, float, float]:
    """(dThroughput %, dQuality pp, dCycles %) of an attack run against its benign baseline."""
    if benign.throughput == 0:
        raise ZeroDivisionError("benign throughput is zero")
    d_thru = 100.0 * (attack.throughput - benign.throughput) / benign.throughput
    d_qual = attack.quality_inaccuracy - benign.quality_inaccuracy
    d_cyc = 100.0 * (attack.cycles_per_min - benign.cycles_per_min) / benign.cycles_per_min \
        if benign.cycles_per_min else float("nan")
    return d_thru, d_qual, d_cyc


def recall_reduction(r_extreme: float, r_attack: float) -> float | None:
    """Percent drop of recall from the extreme-attack era; None when undefined."""
    if r_extreme == 0:
        return None
    return 100.0 * (r_extreme - r_attack) / r_extreme


# --- alpha / beta sweep -----------------------------------------------------


@dataclass
class SweepRow:
    alpha: float
    beta: float
    stealth: float
    delta_throughput: float  # percent
    delta_cycles: float  # percent

    def objective(self, lam: float = 0.5) -> float:
        # |dThroughput| as a fraction, so degradation of either sign is penalised
        return self.stealth - lam * abs(self.delta_throughput) / 100.0


def pareto_sweep(rows: Sequence[SweepRow], lam: float = 0.5, cycle_cap: float = 18.0) -> list[SweepRow]:
    """Drop settings above the cycle cap, rank the rest by the objective (best first)."""
    feasible = [r for r in rows if r.delta_cycles <= cycle_cap]
    if not feasible:
        raise ValueError("no (alpha, beta) setting satisfies the cycle cap")
    return sorted(feasible, key=lambda r: -r.objective(lam))


# --- drift ------------------------------------------------------------------


@dataclass(frozen=True)
class DriftSpec:
    sensor_noise_multiplier: float = 1.0
    scan_jitter_p2p: float = 0.0  # ms, +/- amplitude
    gain_multiplier: float = 1.0
    arrival_rate_multiplier: float = 1.0
    tag_remap_pairs: int = 0
    detector_retune: bool = False  # hold the FPR on drifted benign data
    window_shrink: float = 0.0  # fraction

    @property
    def identity(self) -> bool:
        return self == DriftSpec()


DRIFT_TIERS = {
    "none": DriftSpec(),
    "small": DriftSpec(1.10, 3.0, 1.05, 1.05, 0, False, 0.0),
    "medium": DriftSpec(1.20, 6.0, 1.10, 1.12, 1, True, 0.10),
    "large": DriftSpec(1.35, 10.0, 1.15, 1.20, 2, True, 0.20),
}


def apply_drift(plant: PlantConfig, drift: DriftSpec) -> PlantConfig:
    """Perturb the plant; detector-side knobs are applied by the harness.

    Arrival-rate drift raises the remote I/O refresh rate, which shortens
    the report skip probability by the same factor.
    """
    if drift.identity:
        return plant
    return replace(
        plant,
        sensor_noise_sigma=plant.sensor_noise_sigma * drift.sensor_noise_multiplier,
        scan_jitter=min(drift.scan_jitter_p2p, plant.scan_period * 0.99) if drift.scan_jitter_p2p else plant.scan_jitter,
        fill_gain=plant.fill_gain * drift.gain_multiplier,
        discharge_gain=plant.discharge_gain * drift.gain_multiplier,
        io_skip_prob=min(0.99, plant.io_skip_prob / drift.arrival_rate_multiplier),
    )


def remap_features(rows: np.ndarray, pairs: int) -> np.ndarray:
    """Swap the columns of ``pairs`` tag pairs (the tap mislabels channels)."""
    from .loop import FEATURE_NAMES

    out = np.array(rows, dtype=float, copy=True)
    swaps = [("since_fill", "since_level"), ("latency_fill", "level_age")][:pairs]
    for a, b in swaps:
        i, j = FEATURE_NAMES.index(a), FEATURE_NAMES.index(b)
        out[:, [i, j]] = out[:, [j, i]]
    return out


# --- adaptation -------------------------------------------------------------


@dataclass
class AdaptationFit:
    kappa: float
    residual: float
    status: str  # "ok", "saturated" or "undefined"


def _model(t, kappa):
    return 1.0 - np.exp(-kappa * t)


def fit_adaptation_rate(t: Sequence[float], success: Sequence[float]) -> AdaptationFit:
    """Least-squares fit of P(t) = 1 - exp(-kappa t)."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(success, dtype=float)
    if t.size < 10:
        raise ValueError("need >= 10 points")
    if np.all(y == 0):
        return AdaptationFit(0.0, 0.0, "undefined")
    if np.all(y == 1):
        return AdaptationFit(math.inf, 0.0, "saturated")
    (kappa,), _ = curve_fit(_model, t, y, p0=[1.0 / max(t.mean(), 1e-9)], bounds=(0.0, np.inf))
    resid = float(np.sqrt(np.mean((_model(t, kappa) - y) ** 2)))
    return AdaptationFit(float(kappa), resid, "ok")


# --- reports ----------------------------------------------------------------


def metrics_json(reports: dict[str, MetricsReport]) -> str:
    return json.dumps({k: v.to_dict() for k, v in reports.items()}, indent=2, default=_json_default)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o)}")


def table_csv(rows: Sequence[dict], path) -> None:
    import csv

    if not rows:
        raise ValueError("empty table")
    keys = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, keys)
        w.writeheader()
        w.writerows(rows)


def clone(obj):
    return copy.deepcopy(obj)
