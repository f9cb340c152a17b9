"""Non-learning timing attacks used as reference points for the learned adversary.

Every baseline is a delay policy: called once per scan with the closed loop
(before the scan runs), it returns a mapping from tag to hold time in ms for
the packets that scan will emit. The channel enforces its caps regardless.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .channel import ALL_TAGS, Tag
from .detectors import DetectorSuite
from .loop import ClosedLoop


class BaselineKind(str, enum.Enum):
    RANDOM_DELAY = "random_delay"
    PERIODIC_JITTER = "periodic_jitter"
    POISSON_JITTER = "poisson_jitter"
    GREEDY_WEAR = "greedy_wear"
    EXTREME = "extreme"


@dataclass
class BaselineSpec:
    kind: BaselineKind
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kind = BaselineKind(self.kind)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d


class RandomDelay:
    """Each delayable event is held with probability ``p`` for U[low, high] ms."""

    def __init__(self, p: float = 0.10, low: float = 0.0, high: float = 120.0, seed: int = 0,
                 tags: Sequence[Tag] = ALL_TAGS):
        if not 0 <= p <= 1:
            raise ValueError("p must lie in [0, 1]")
        if not 0 <= low <= high:
            raise ValueError("need 0 <= low <= high")
        self.p, self.low, self.high = p, low, high
        self.tags = tuple(tags)
        self.rng = np.random.default_rng(seed)

    def draw(self) -> dict[Tag, float]:
        # two draws per tag per scan keep the stream aligned whatever the outcome
        u = self.rng.random(len(self.tags))
        d = self.rng.uniform(self.low, self.high, len(self.tags))
        return {t: float(x) for t, hit, x in zip(self.tags, u < self.p, d) if hit}

    def __call__(self, loop: ClosedLoop) -> Mapping[Tag, float]:
        return self.draw()


def random_delay(seed: int = 0, p: float = 0.10, high: float = 120.0) -> RandomDelay:
    return RandomDelay(p, 0.0, high, seed)


def extreme_attack(seed: int = 0, delay_cap: float = 150.0, p: float = 0.5) -> RandomDelay:
    """The easy-to-detect foil used to train the detectors."""
    return RandomDelay(p, 0.0, delay_cap, seed)


class PeriodicJitter:
    """``delay`` ms on every delayable event of one scan, once per ``period`` ms.

    Bursts fall at ``phase + k * period`` for k >= 1, so with phase 0 the
    first burst is at ``period``. A burst fires on the first scan whose start
    time reaches its tick.
    """

    def __init__(self, period: float = 1200.0, delay: float = 40.0, phase: float = 0.0,
                 tags: Sequence[Tag] = ALL_TAGS):
        if period <= 0:
            raise ValueError("period must be positive")
        self.period, self.delay, self.phase = period, delay, phase
        self.tags = tuple(tags)
        self._next = phase + period
        self.burst_scans: list[int] = []

    def __call__(self, loop: ClosedLoop) -> Mapping[Tag, float]:
        now = loop.state.sim_time
        if now + 1e-9 < self._next:
            return {}
        while self._next <= now + 1e-9:
            self._next += self.period
        self.burst_scans.append(loop.scan_index)
        return {t: self.delay for t in self.tags}


def periodic_jitter(period: float = 1200.0, delay: float = 40.0, phase: float = 0.0) -> PeriodicJitter:
    return PeriodicJitter(period, delay, phase)


def burst_times(duration: float, period: float = 1200.0, phase: float = 0.0) -> list[float]:
    """Burst instants in (0, duration] ms."""
    n = math.floor((duration - phase) / period + 1e-9)
    return [phase + k * period for k in range(1, n + 1)]


class PoissonJitter:
    """Jitter events arrive as a Poisson process; each holds one scan's events.

    The hold time is exponential with mean ``mean_delay`` ms, clamped to the
    channel cap. Several arrivals inside one scan merge into one event.
    """

    def __init__(self, rate: float = 0.8, mean_delay: float = 60.0, delay_cap: float = 150.0, seed: int = 0,
                 tags: Sequence[Tag] = ALL_TAGS):
        if rate < 0 or mean_delay <= 0:
            raise ValueError("rate must be >= 0 and mean_delay > 0")
        self.rate, self.mean_delay, self.delay_cap = rate, mean_delay, delay_cap
        self.tags = tuple(tags)
        self.rng = np.random.default_rng(seed)
        self.raw_delays: list[float] = []

    def arrivals(self, span_ms: float) -> int:
        return int(self.rng.poisson(self.rate * span_ms / 1000.0))

    def draw_delay(self) -> float:
        d = float(self.rng.exponential(self.mean_delay))
        self.raw_delays.append(d)
        return min(d, self.delay_cap)

    def __call__(self, loop: ClosedLoop) -> Mapping[Tag, float]:
        if self.arrivals(loop.plant_config.scan_period) == 0:
            return {}
        d = self.draw_delay()
        return {t: d for t in self.tags}


def poisson_jitter(seed: int = 0, rate: float = 0.8, mean_delay: float = 60.0,
                   delay_cap: float = 150.0) -> PoissonJitter:
    return PoissonJitter(rate, mean_delay, delay_cap, seed)


class InfeasibleCeiling(ValueError):
    """The stealth ceiling is below what the benign loop already scores."""


def _wear(loop: ClosedLoop, before) -> tuple[int, float]:
    # (cycles, valve travel) accrued since ``before`` = (cycles, fill, discharge)
    s = loop.state
    travel = abs(s.fill_valve_frac - before[1]) + abs(s.discharge_valve_frac - before[2])
    return loop.cycles - before[0], travel


class GreedyWear:
    """Per scan, hold the one tag whose delay most increases predicted wear.

    For each tag the largest delay on the grid whose predicted score stays
    below ``ceiling`` is kept. The lookahead covers one decision: the fork
    applies the choice, runs through the hold and ``horizon`` scans past its
    release, and is compared with an attack-free fork over the same span.
    Wear compares cycle count first and valve travel second. ``ceiling``
    bounds the predicted max over detectors of score / tau for one window
    (1 sits at the threshold; alarms additionally need consecutive windows).
    A ceiling of 0 admits nothing, so the schedule stays benign.
    """

    def __init__(self, suite: DetectorSuite | None, ceiling: float, delay_grid: Sequence[float] = (150, 80, 40, 10),
                 tags: Sequence[Tag] = ALL_TAGS, horizon: int = 20):
        if math.isnan(ceiling):
            raise InfeasibleCeiling("ceiling must be a number")
        if ceiling < 0:
            raise InfeasibleCeiling(f"negative ceiling {ceiling}")
        if suite is None and math.isfinite(ceiling) and ceiling > 0:
            raise ValueError("a finite ceiling needs a detector suite")
        if suite is not None and 0 < ceiling < math.inf:
            floor = max(d.cal.median / d.tau for d in suite.detectors)
            if ceiling <= floor:
                raise InfeasibleCeiling(f"ceiling {ceiling:.3g} is at or below the benign median ratio {floor:.3g}")
        self.suite, self.ceiling = suite, ceiling
        self.delay_grid = tuple(sorted(delay_grid, reverse=True))
        self.tags, self.horizon = tuple(tags), horizon
        self.choices: list[tuple[Tag, float] | None] = []

    def span(self, loop: ClosedLoop, delay: float) -> int:
        return math.ceil(delay / loop.plant_config.scan_period) + self.horizon

    def predicted_score(self, loop: ClosedLoop) -> float:
        """Max over detectors of score / tau for the window ending at the last row."""
        rows = np.asarray(loop.features[-self.suite.spec.length:])
        if len(rows) < self.suite.spec.length:
            return 0.0
        w, _ = self.suite.windows(rows)
        taus = np.array([d.tau for d in self.suite.detectors])
        return float((self.suite.score(w[-1:])[:, 0] / taus).max())

    def lookahead(self, loop: ClosedLoop, choice: tuple[Tag, float] | None, span: int) -> tuple[tuple[int, float], float]:
        """Predicted (wear, score) of ``choice`` after ``span`` further scans."""
        f = loop.fork(self.suite.spec.length if self.suite is not None else 0)
        before = (f.cycles, f.state.fill_valve_frac, f.state.discharge_valve_frac)
        f.step({choice[0]: choice[1]} if choice else None)
        for _ in range(span):
            f.step()
        score = self.predicted_score(f) if self.suite is not None else 0.0
        return _wear(f, before), score

    def choose(self, loop: ClosedLoop) -> tuple[Tag, float] | None:
        if self.ceiling <= 0:
            return None
        benign: dict[int, tuple[int, float]] = {}
        best, best_gain = None, (0, 0.0)
        for tag in self.tags:
            for d in self.delay_grid:
                n = self.span(loop, d)
                wear, score = self.lookahead(loop, (tag, d), n)
                if score >= self.ceiling:
                    continue
                if n not in benign:
                    benign[n] = self.lookahead(loop, None, n)[0]
                gain = (wear[0] - benign[n][0], wear[1] - benign[n][1])
                if gain > best_gain:
                    best, best_gain = (tag, d), gain
                break  # largest admissible delay for this tag
        return best

    def __call__(self, loop: ClosedLoop) -> Mapping[Tag, float]:
        c = self.choose(loop)
        self.choices.append(c)
        return {c[0]: c[1]} if c else {}


def greedy_wear(suite: DetectorSuite | None, ceiling: float, delay_cap: float = 150.0) -> GreedyWear:
    grid = tuple(d for d in (150, 80, 40, 10) if d <= delay_cap) or (delay_cap,)
    return GreedyWear(suite, ceiling, grid)


def make_baseline(spec: BaselineSpec, seed: int = 0, suite: DetectorSuite | None = None,
                  delay_cap: float = 150.0):
    """Instantiate a baseline policy from its spec."""
    p = dict(spec.params)
    if spec.kind is BaselineKind.RANDOM_DELAY:
        return RandomDelay(p.get("p", 0.10), p.get("low", 0.0), p.get("high", 120.0), seed)
    if spec.kind is BaselineKind.EXTREME:
        return extreme_attack(seed, p.get("delay_cap", delay_cap), p.get("p", 0.5))
    if spec.kind is BaselineKind.PERIODIC_JITTER:
        return PeriodicJitter(p.get("period", 1200.0), p.get("delay", 40.0), p.get("phase", 0.0))
    if spec.kind is BaselineKind.POISSON_JITTER:
        return PoissonJitter(p.get("rate", 0.8), p.get("mean_delay", 60.0), delay_cap, seed)
    return GreedyWear(suite, p.get("ceiling", 0.5),
                      tuple(d for d in p.get("delay_grid", (150, 80, 40, 10)) if d <= delay_cap))
