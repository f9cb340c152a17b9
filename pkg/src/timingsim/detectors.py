"""Windowed anomaly detectors over the per-scan tap features.

Three detectors share one window pipeline: a dense autoencoder, a 1-D
convolutional autoencoder and a statistical z-test detector. Scores are
turned into alarms by a threshold plus an N-consecutive hysteresis.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .approximator import Conv1D, backward, forward_cache, init_params, params_from_dict, params_to_dict

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """The reconstruction loss never improved on its first epoch."""


# --- windows ----------------------------------------------------------------


@dataclass
class WindowSpec:
    """Window geometry plus the z-score statistics of the training block.

    ``retained`` marks features with nonzero training variance; the others
    are dropped before scoring.
    """

    length: int = 256
    stride: int | None = None
    clip: float = 5.0
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    retained: np.ndarray | None = None

    def __post_init__(self):
        if self.length < 1:
            raise ValueError("window length must be >= 1")
        if self.stride is None:
            self.stride = max(1, int(math.floor(0.25 * self.length)))
        if self.stride < 1:
            raise ValueError("stride must be >= 1")

    @property
    def fitted(self) -> bool:
        return self.mean is not None

    @property
    def n_features(self) -> int:
        return int(self.retained.sum())

    def fit(self, rows: np.ndarray) -> "WindowSpec":
        """Fit z-score statistics on a training block of per-scan rows."""
        rows = np.asarray(rows, dtype=float)
        std = rows.std(axis=0)
        retained = std > 1e-12
        if not retained.any():
            raise ValueError("every feature is constant in the training block")
        return WindowSpec(self.length, self.stride, self.clip, rows.mean(axis=0), std, retained)

    def normalize(self, rows: np.ndarray) -> np.ndarray:
        if not self.fitted:
            raise ValueError("WindowSpec has no training statistics; call fit() first")
        rows = np.asarray(rows, dtype=float)
        r = self.retained
        z = (rows[:, r] - self.mean[r]) / self.std[r]
        return np.clip(z, -self.clip, self.clip)

    def to_dict(self) -> dict:
        return {
            "length": self.length, "stride": self.stride, "clip": self.clip,
            "mean": None if self.mean is None else self.mean.tolist(),
            "std": None if self.std is None else self.std.tolist(),
            "retained": None if self.retained is None else self.retained.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WindowSpec":
        arr = lambda k, dt=float: None if d.get(k) is None else np.asarray(d[k], dtype=dt)  # noqa: E731
        return cls(d["length"], d["stride"], d["clip"], arr("mean"), arr("std"), arr("retained", bool))


def window_ends(n_rows: int, spec: WindowSpec) -> np.ndarray:
    """Row index of the last scan of every full window."""
    if n_rows < spec.length:
        return np.zeros(0, dtype=int)
    return np.arange(spec.length - 1, n_rows, spec.stride)


def read_feature_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        return np.array([[float(v) for v in row] for row in reader])


def write_feature_csv(path, rows: np.ndarray, names: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        writer.writerows(np.asarray(rows).tolist())


def extract_windows(trace, spec: WindowSpec) -> tuple[np.ndarray, np.ndarray]:
    """Cut z-scored, clipped windows out of a per-scan feature trace.

    ``trace`` is an (n_scans, n_features) array or the path of a feature
    CSV. Returns ``(windows, ends)`` with windows of shape
    (n_windows, length, n_retained). Too short a trace gives an empty result
    and a logged warning.
    """
    rows = read_feature_csv(trace) if isinstance(trace, (str, bytes)) or hasattr(trace, "__fspath__") else trace
    rows = np.asarray(rows, dtype=float)
    ends = window_ends(len(rows), spec)
    if ends.size == 0:
        log.warning("trace has %d rows, fewer than the window length %d", len(rows), spec.length)
        return np.zeros((0, spec.length, spec.n_features)), ends
    z = spec.normalize(rows)
    idx = ends[:, None] - spec.length + 1 + np.arange(spec.length)[None, :]
    return z[idx], ends


def window_labels(labels: np.ndarray, ends: np.ndarray, length: int) -> np.ndarray:
    """A window is an attack window when any scan inside it carries the label."""
    c = np.concatenate([[0], np.cumsum(np.asarray(labels, dtype=int))])
    return (c[ends + 1] - c[ends + 1 - length]) > 0


# --- detectors --------------------------------------------------------------


@dataclass
class Calibration:
    tau: float = math.inf
    median: float = 0.0  # benign validation median, anchors the calibrated score
    score_std: float = 1.0  # benign validation spread, for dynamic thresholds
    target_fpr: float = 0.01


class Detector:
    """Base class: subclasses implement ``score_windows``."""

    name = "detector"
    kind = "base"

    def __init__(self, spec: WindowSpec, n_hysteresis: int = 3):
        self.spec = spec
        self.n_hysteresis = n_hysteresis
        self.cal = Calibration()
        self.loss_history: list[float] = []

    @property
    def tau(self) -> float:
        return self.cal.tau

    def _check(self, windows: np.ndarray) -> np.ndarray:
        windows = np.asarray(windows, dtype=float)
        if windows.ndim == 2:
            windows = windows[None]
        if windows.shape[1:] != (self.spec.length, self.spec.n_features):
            raise ValueError(f"window shape {windows.shape[1:]} != {(self.spec.length, self.spec.n_features)}")
        return windows

    def score_windows(self, windows: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def calibrate(self, benign_scores: np.ndarray, target_fpr: float = 0.01) -> None:
        benign_scores = np.asarray(benign_scores, dtype=float)
        tau = float(np.quantile(benign_scores, 1.0 - target_fpr, method="higher"))
        self.cal = Calibration(tau, float(np.median(benign_scores)), float(benign_scores.std()) or 1.0, target_fpr)

    def calibrated_score(self, scores) -> np.ndarray:
        """Map scores to [0, 1]: 0 at the benign median, 1 at the threshold."""
        span = max(self.cal.tau - self.cal.median, 1e-12)
        return np.clip((np.asarray(scores) - self.cal.median) / span, 0.0, 1.0)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "name": self.name, "n_hysteresis": self.n_hysteresis,
                "spec": self.spec.to_dict(), "calibration": vars(self.cal).copy()}


def score(detector: Detector, window: np.ndarray) -> float:
    """Anomaly score of a single window."""
    return float(detector.score_windows(window)[0])


class StatisticalDetector(Detector):
    """Per-feature z-test on the window mean; the score is the largest |z|.

    Inputs are already z-scored, so the statistic of feature j is
    mean_t(z_tj) * sqrt(W).
    """

    name = "stat"
    kind = "statistical"

    def score_windows(self, windows):
        w = self._check(windows)
        return np.abs(w.mean(axis=1)).max(axis=1) * math.sqrt(self.spec.length)


class DenseAutoencoder(Detector):
    """Two dense layers in the encoder, two in the decoder."""

    name = "dense_ae"
    kind = "dense"

    def __init__(self, spec: WindowSpec, hidden: int = 64, code: int = 16, n_hysteresis: int = 3,
                 rng: np.random.Generator | None = None):
        super().__init__(spec, n_hysteresis)
        d = spec.length * spec.n_features
        self.params = init_params([d, hidden, code, hidden, d], head="linear", rng=rng)

    def reconstruct(self, windows):
        w = self._check(windows)
        flat = w.reshape(len(w), -1)
        return forward_cache(self.params, flat)[1].reshape(w.shape)

    def score_windows(self, windows):
        w = self._check(windows)
        return ((self.reconstruct(w) - w) ** 2).mean(axis=(1, 2))

    def _param_arrays(self):
        return self.params.weights + self.params.biases

    def _loss_grad(self, x_in, target, sample_weight):
        # sample_weight: d(loss)/d(per-sample mse), shape (m,)
        flat_in = x_in.reshape(len(x_in), -1)
        acts, y = forward_cache(self.params, flat_in)
        t = target.reshape(len(target), -1)
        d = t.shape[1]
        err = ((y - t) ** 2).mean(axis=1)
        dy = (2.0 / d) * (y - t) * sample_weight[:, None]
        g = backward(self.params, acts, dy)
        return err, g.weights + g.biases

    def to_dict(self):
        d = super().to_dict()
        d["params"] = params_to_dict(self.params)
        return d


class ConvAutoencoder(Detector):
    """Two 1-D convolution layers in the encoder, two in the decoder."""

    name = "conv_ae"
    kind = "conv"

    def __init__(self, spec: WindowSpec, channels: int = 16, code: int = 4, kernel: int = 5,
                 n_hysteresis: int = 3, rng: np.random.Generator | None = None):
        super().__init__(spec, n_hysteresis)
        rng = rng if rng is not None else np.random.default_rng(0)
        f = spec.n_features
        self.layers = [Conv1D.init(kernel, f, channels, rng), Conv1D.init(kernel, channels, code, rng),
                       Conv1D.init(kernel, code, channels, rng), Conv1D.init(kernel, channels, f, rng)]

    def _forward(self, x):
        cache = []
        h = x
        for i, layer in enumerate(self.layers):
            z, cols = layer.forward(h)
            cache.append(cols)
            h = np.maximum(z, 0.0) if i < len(self.layers) - 1 else z
            if i < len(self.layers) - 1:
                cache.append(h)
        return h, cache

    def reconstruct(self, windows):
        return self._forward(self._check(windows))[0]

    def score_windows(self, windows):
        w = self._check(windows)
        return ((self.reconstruct(w) - w) ** 2).mean(axis=(1, 2))

    def _param_arrays(self):
        return [l.weight for l in self.layers] + [l.bias for l in self.layers]

    def _loss_grad(self, x_in, target, sample_weight):
        y, cache = self._forward(x_in)
        d = target.shape[1] * target.shape[2]
        err = ((y - target) ** 2).mean(axis=(1, 2))
        delta = (2.0 / d) * (y - target) * sample_weight[:, None, None]
        n = len(self.layers)
        gws, gbs = [None] * n, [None] * n
        for i in range(n - 1, -1, -1):
            cols = cache[2 * i]
            gw, gb, dx = self.layers[i].backward(cols, delta, need_input_grad=i > 0)
            gws[i], gbs[i] = gw, gb
            if i > 0:
                delta = dx * (cache[2 * i - 1] > 0)
        return err, gws + gbs

    def to_dict(self):
        d = super().to_dict()
        d["layers"] = [{"weight": l.weight.tolist(), "bias": l.bias.tolist()} for l in self.layers]
        return d


# --- training ---------------------------------------------------------------


class _Adam:
    def __init__(self, arrays, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
        self.arrays, self.lr, self.b1, self.b2, self.eps = arrays, lr, b1, b2, eps
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for a, g, m, v in zip(self.arrays, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            a -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _train(det, x_benign, epochs, rng, lr, batch, jitter, x_attack=None, margin=None, hinge_weight=1.0):
    opt = _Adam(det._param_arrays(), lr)
    history = []
    n = len(x_benign)
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            target = x_benign[idx]
            noisy = target + rng.normal(0.0, jitter, target.shape) if jitter > 0 else target
            err, grads = det._loss_grad(noisy, target, np.full(len(idx), 1.0 / len(idx)))
            total += float(err.sum())
            if x_attack is not None and len(x_attack):
                a_idx = rng.integers(len(x_attack), size=min(batch, len(x_attack)))
                xa = x_attack[a_idx]
                err_a = det.score_windows(xa)
                w = np.where(err_a < margin, -hinge_weight / len(a_idx), 0.0)
                if w.any():
                    _, g_a = det._loss_grad(xa, xa, w)
                    grads = [g + h for g, h in zip(grads, g_a)]
            opt.step(grads)
        history.append(total / n)
    return history


def fit_autoencoder(benign_windows: np.ndarray, spec: WindowSpec, architecture: str = "dense",
                    epochs: int = 60, seed: int = 0, target_fpr: float = 0.01, val_fraction: float = 0.25,
                    lr: float = 1e-3, batch: int = 32, jitter: float = 0.05,
                    n_hysteresis: int = 3) -> Detector:
    """Fit an autoencoder on benign windows and calibrate its threshold.

    Windows are split by time block: the first part trains, the trailing
    ``val_fraction`` calibrates tau at the (1 - target_fpr) quantile.
    Gaussian jitter of std ``jitter`` is added to training inputs.
    """
    benign_windows = np.asarray(benign_windows, dtype=float)
    if len(benign_windows) < 100:
        raise ValueError(f"need >= 100 benign windows, got {len(benign_windows)}")
    rng = np.random.default_rng(seed)
    if architecture == "dense":
        det: Detector = DenseAutoencoder(spec, n_hysteresis=n_hysteresis, rng=rng)
    elif architecture == "conv":
        det = ConvAutoencoder(spec, n_hysteresis=n_hysteresis, rng=rng)
    else:
        raise ValueError(f"unknown architecture {architecture!r}")
    n_val = max(1, int(round(val_fraction * len(benign_windows))))
    train, val = benign_windows[:-n_val], benign_windows[-n_val:]
    history = _train(det, train, epochs, rng, lr, batch, jitter)
    if len(history) > 1 and min(history[1:]) >= history[0]:
        raise TrainingDiverged(f"loss never fell below its first epoch value {history[0]:.4g}")
    det.loss_history = history
    det.calibrate(det.score_windows(val), target_fpr)
    return det


def fit_statistical(benign_windows: np.ndarray, spec: WindowSpec, target_fpr: float = 0.01,
                    val_fraction: float = 0.25, n_hysteresis: int = 3) -> StatisticalDetector:
    det = StatisticalDetector(spec, n_hysteresis)
    n_val = max(1, int(round(val_fraction * len(benign_windows))))
    det.calibrate(det.score_windows(benign_windows[-n_val:]), target_fpr)
    return det


def harden(detector: Detector, benign_windows: np.ndarray, attack_windows: np.ndarray, epochs: int = 10,
           seed: int = 0, lr: float = 1e-3, batch: int = 32, hinge_weight: float = 1.0,
           val_fraction: float = 0.25) -> Detector:
    """Adversarial fine-tuning: keep benign reconstruction low, push attack error above tau.

    The hinge margin is the current threshold. The threshold is then
    recalibrated on the benign validation block to hold the target FPR.
    """
    if not hasattr(detector, "_loss_grad"):
        return detector
    rng = np.random.default_rng(seed)
    n_val = max(1, int(round(val_fraction * len(benign_windows))))
    train, val = benign_windows[:-n_val], benign_windows[-n_val:]
    margin = 2.0 * detector.tau if math.isfinite(detector.tau) else 1.0
    hist = _train(detector, train, epochs, rng, lr, batch, 0.0, attack_windows, margin, hinge_weight)
    detector.loss_history = detector.loss_history + hist
    detector.calibrate(detector.score_windows(val), detector.cal.target_fpr)
    return detector


# --- alarms and metrics -----------------------------------------------------


def classify(scores: np.ndarray, tau: float, n: int = 3) -> np.ndarray:
    """Alarm at t iff the last ``n`` scores up to t are all >= tau."""
    over = np.asarray(scores) >= tau
    if n <= 1:
        return over
    run = np.zeros(len(over), dtype=int)
    count = 0
    for i, o in enumerate(over):
        count = count + 1 if o else 0
        run[i] = count
    return run >= n


@dataclass
class DetectionMetrics:
    """Confusion-matrix metrics; ``None`` marks an undefined ratio."""

    tp: int
    fp: int
    tn: int
    fn: int

    @staticmethod
    def _ratio(a, b):
        return a / b if b else None

    @property
    def precision(self):
        return self._ratio(self.tp, self.tp + self.fp)

    @property
    def recall(self):
        return self._ratio(self.tp, self.tp + self.fn)

    @property
    def fpr(self):
        return self._ratio(self.fp, self.fp + self.tn)

    @property
    def f1(self):
        p, r = self.precision, self.recall
        if p is None or r is None or p + r == 0:
            return None
        return 2 * p * r / (p + r)


def evaluate(alarms: np.ndarray, labels: np.ndarray) -> DetectionMetrics:
    alarms = np.asarray(alarms, dtype=bool)
    labels = np.asarray(labels, dtype=bool)
    if alarms.shape != labels.shape:
        raise ValueError("alarms and labels differ in shape")
    return DetectionMetrics(int((alarms & labels).sum()), int((alarms & ~labels).sum()),
                            int((~alarms & ~labels).sum()), int((~alarms & labels).sum()))


def report_json(rows: Sequence[tuple[str, DetectionMetrics, float]]) -> str:
    """JSON report, one object per detector; undefined metrics are null."""
    return json.dumps([
        {"detector": name, "precision": m.precision, "recall": m.recall, "f1": m.f1, "fpr": m.fpr, "tau": tau}
        for name, m, tau in rows
    ], indent=2)


# --- defenses ---------------------------------------------------------------


@dataclass
class EnsembleState:
    weights: np.ndarray
    tau_base: np.ndarray
    tau: np.ndarray
    train_std: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if (w < 0).any() or w.sum() <= 0:
            raise ValueError("ensemble weights must be nonnegative with a positive sum")
        self.weights = w / w.sum()


def dynamic_threshold_update(state: EnsembleState, recent_scores: Sequence[np.ndarray]) -> EnsembleState:
    """Scale each base threshold by recent / training score spread, clamped to [0.5, 2]."""
    tau = state.tau.copy()
    for d, scores in enumerate(recent_scores):
        scores = np.asarray(scores, dtype=float)
        if len(scores) < 10:
            raise ValueError("dynamic threshold update needs >= 10 recent scores")
        sd = scores.std()
        if sd == 0:
            continue
        ratio = sd / state.train_std[d]
        tau[d] = state.tau_base[d] * min(2.0, max(0.5, ratio))
    return EnsembleState(state.weights, state.tau_base, tau, state.train_std)


def purify(window: np.ndarray, width: int = 5) -> np.ndarray:
    """Centred moving average over time, per feature, with edge replication."""
    w = np.asarray(window, dtype=float)
    squeeze = w.ndim == 2
    if squeeze:
        w = w[None]
    half = width // 2
    padded = np.pad(w, ((0, 0), (half, width - 1 - half), (0, 0)), mode="edge")
    c = np.cumsum(np.concatenate([np.zeros_like(padded[:, :1]), padded], axis=1), axis=1)
    out = (c[:, width:] - c[:, :-width]) / width
    return out[0] if squeeze else out


@dataclass
class TripwireConfig:
    max_phase_lag: float = 200.0  # ms
    max_rate: float = 15.0  # L/s

    def __post_init__(self):
        if self.max_phase_lag <= 0 or self.max_rate <= 0:
            raise ValueError("tripwire limits must be positive")


@dataclass
class Violation:
    kind: str
    time: float
    value: float


def tripwire_check(actuations: Sequence[tuple[float, float]], pv_times: Sequence[float],
                   pv_values: Sequence[float], config: TripwireConfig) -> list[Violation]:
    """Flag actuations applied later than the phase-lag limit and PV slopes above the rate limit.

    ``actuations`` holds (emit_time, apply_time) pairs in ms.
    """
    out = [Violation("phase_lag", float(a), float(a - e)) for e, a in actuations if a - e > config.max_phase_lag]
    t = np.asarray(pv_times, dtype=float)
    v = np.asarray(pv_values, dtype=float)
    if len(t) > 1:
        rate = np.abs(np.diff(v) / (np.diff(t) / 1000.0))
        out.extend(Violation("rate", float(t[i + 1]), float(rate[i])) for i in np.flatnonzero(rate > config.max_rate))
    return sorted(out, key=lambda x: x.time)


# --- suite ------------------------------------------------------------------


@dataclass
class DetectorSuite:
    """The blue team: detectors sharing one window spec, with ensemble weights."""

    spec: WindowSpec
    detectors: list[Detector]
    weights: np.ndarray = field(default=None)  # type: ignore[assignment]
    purify_inputs: bool = False

    def __post_init__(self):
        if self.weights is None:
            self.weights = np.full(len(self.detectors), 1.0 / len(self.detectors))

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.detectors]

    def windows(self, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        w, ends = extract_windows(rows, self.spec)
        if self.purify_inputs and len(w):
            w = purify(w)
        return w, ends

    def score(self, windows: np.ndarray) -> np.ndarray:
        if len(windows) == 0:
            return np.zeros((len(self.detectors), 0))
        return np.stack([d.score_windows(windows) for d in self.detectors])

    def alarms(self, scores: np.ndarray) -> np.ndarray:
        return np.stack([classify(s, d.tau, d.n_hysteresis) for d, s in zip(self.detectors, scores)]) \
            if len(self.detectors) else np.zeros((0, scores.shape[1]), dtype=bool)

    def calibrated(self, scores: np.ndarray) -> np.ndarray:
        return np.stack([d.calibrated_score(s) for d, s in zip(self.detectors, scores)])

    def ensemble_state(self) -> EnsembleState:
        taus = np.array([d.tau for d in self.detectors])
        return EnsembleState(self.weights, taus, taus.copy(), np.array([d.cal.score_std for d in self.detectors]))

    def apply_thresholds(self, state: EnsembleState) -> None:
        for d, t in zip(self.detectors, state.tau):
            d.cal.tau = float(t)

    def to_dict(self) -> dict:
        return {"spec": self.spec.to_dict(), "weights": self.weights.tolist(),
                "detectors": [d.to_dict() for d in self.detectors]}


def load_detector(d: dict) -> Detector:
    spec = WindowSpec.from_dict(d["spec"])
    kind = d["kind"]
    if kind == "statistical":
        det: Detector = StatisticalDetector(spec, d["n_hysteresis"])
    elif kind == "dense":
        det = DenseAutoencoder(spec, n_hysteresis=d["n_hysteresis"])
        det.params = params_from_dict(d["params"])
    elif kind == "conv":
        det = ConvAutoencoder(spec, n_hysteresis=d["n_hysteresis"])
        for layer, ld in zip(det.layers, d["layers"]):
            layer.weight = np.asarray(ld["weight"])
            layer.bias = np.asarray(ld["bias"])
    else:
        raise ValueError(f"unknown detector kind {kind!r}")
    det.cal = Calibration(**d["calibration"])
    return det


class StreamingScorer:
    """Scores windows of a growing feature trace as they complete.

    Keeps per-detector score and alarm streams, with the hysteresis run
    carried across updates, so repeated calls cost only the new windows.
    """

    def __init__(self, suite: DetectorSuite, start: int = 0):
        self.suite = suite
        self.start = start  # first row that may begin a window
        n = len(suite.detectors)
        self.ends: list[int] = []
        self.scores: list[list[float]] = [[] for _ in range(n)]
        self.alarms: list[list[bool]] = [[] for _ in range(n)]
        self._runs = [0] * n
        self._next_end = start + suite.spec.length - 1

    def update(self, rows: Sequence[np.ndarray]) -> int:
        """Score every window that ends before ``len(rows)``; returns how many were new."""
        spec = self.suite.spec
        last = len(rows) - 1
        if self._next_end > last:
            return 0
        new_ends = np.arange(self._next_end, last + 1, spec.stride)
        first = new_ends[0] - spec.length + 1
        z = spec.normalize(np.asarray(rows[first:last + 1]))
        idx = (new_ends - first)[:, None] - spec.length + 1 + np.arange(spec.length)[None, :]
        windows = z[idx]
        if self.suite.purify_inputs:
            windows = purify(windows)
        for d, det in enumerate(self.suite.detectors):
            sc = det.score_windows(windows)
            for s in sc:
                self._runs[d] = self._runs[d] + 1 if s >= det.tau else 0
                self.scores[d].append(float(s))
                self.alarms[d].append(self._runs[d] >= det.n_hysteresis)
        self.ends.extend(int(e) for e in new_ends)
        self._next_end = int(new_ends[-1] + spec.stride)
        return len(new_ends)

    def score_array(self) -> np.ndarray:
        return np.asarray(self.scores, dtype=float).reshape(len(self.scores), -1)

    def alarm_array(self) -> np.ndarray:
        return np.asarray(self.alarms, dtype=bool).reshape(len(self.alarms), -1)
