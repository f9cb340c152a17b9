"""Timing-delay attacks on a simulated PLC mixing line.

A cascade mixing plant runs behind a field channel that an on-path adversary
can delay. Learned detectors watch the network tap; a scheduler/disturber
pair of A2C agents learns when and what to hold back.
"""

from .adversary import (
    AdversaryConfig, AgentSet, EpisodeEnv, EpisodeTrace, Knowledge, Strategy, make_agents, run_episode,
    single_agent_baseline, train,
)
from .baselines import (
    BaselineKind, BaselineSpec, GreedyWear, PeriodicJitter, PoissonJitter, RandomDelay, extreme_attack,
    greedy_wear, make_baseline, periodic_jitter, poisson_jitter, random_delay,
)
from .channel import ChannelConfig, FieldChannel, FieldPacket, Tag
from .detectors import DetectorSuite, StreamingScorer, WindowSpec, fit_autoencoder, fit_statistical
from .evaluation import MetricsReport, bootstrap_ci, pareto_sweep, stealth
from .loop import FEATURE_NAMES, ClosedLoop
from .plant import Phase, PlantConfig, PlantState, step_scan_cycle

__version__ = "0.1.0"

__all__ = [
    "AdversaryConfig", "AgentSet", "BaselineKind", "BaselineSpec", "ChannelConfig", "ClosedLoop", "DetectorSuite",
    "EpisodeEnv", "EpisodeTrace", "FEATURE_NAMES", "FieldChannel", "FieldPacket", "GreedyWear", "Knowledge",
    "MetricsReport", "PeriodicJitter", "Phase", "PlantConfig", "PlantState", "PoissonJitter", "RandomDelay",
    "Strategy", "StreamingScorer", "Tag", "WindowSpec", "bootstrap_ci", "extreme_attack", "fit_autoencoder",
    "fit_statistical", "greedy_wear", "make_agents", "make_baseline", "pareto_sweep", "periodic_jitter",
    "poisson_jitter", "random_delay", "run_episode", "single_agent_baseline", "stealth", "step_scan_cycle",
    "train",
]
