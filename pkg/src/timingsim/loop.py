"""Closed loop of plant, field channel and an optional delay policy.

Every scan the channel releases due packets, the PLC scans, the emitted
packets are queued and the attacker may then hold some of them. The loop
records a per-scan feature row (what a network tap beside the PLC can see),
the plant trace and a per-scan attack label.
"""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .channel import ALL_TAGS, ChannelConfig, FieldChannel, FieldPacket, Tag
from .plant import Phase, PlantConfig, PlantState, batch_quality, initial_state, step_scan_cycle, trace_row

FEATURE_NAMES = (
    "s0", "s1", "s2", "s3",
    "since_fill", "since_discharge", "since_level", "since_setpoint",
    "latency_fill", "latency_discharge", "level_age",
)
N_FEATURES = len(FEATURE_NAMES)
MAX_AGE = 1000.0  # ms; caps the "time since" features


DelayPolicy = Callable[["ClosedLoop"], Mapping[Tag, float]]


class ClosedLoop:
    """One simulated mixing line behind one field channel.

    The plant rng is seeded once and consumed at a fixed rate per scan, so a
    run with delays stays aligned with its benign twin of the same seed.
    """

    def __init__(self, plant_config: PlantConfig | None = None, channel_config: ChannelConfig | None = None,
                 seed: int = 0):
        self.plant_config = plant_config or PlantConfig()
        self.channel = FieldChannel(channel_config)
        self.rng = np.random.default_rng(seed)
        self.state: PlantState = initial_state(self.plant_config)
        self._last_delivery = {t: 0.0 for t in ALL_TAGS}
        self._in_flight: dict[int, FieldPacket] = {}
        self.features: list[np.ndarray] = []
        self.attack_label: list[bool] = []
        self.plant_rows: list[tuple] = []
        self.progress: list[float] = []  # cumulative batches, fractional
        self.qualities: list[float] = []
        self.delayed_scans = 0
        self.last_seen = {t: 0.0 for t in ALL_TAGS}  # latest payload on the wire per tag
        self.prev_seen = {t: 0.0 for t in ALL_TAGS}  # the payload before that

    @property
    def scan_index(self) -> int:
        return self.state.scan_index

    @property
    def cycles(self) -> int:
        return sum(self.state.cycle_count_per_actuator)

    def step(self, delays: Mapping[Tag, float] | None = None) -> int:
        """Run one scan; ``delays`` maps tags to a hold time for this scan's packets.

        Returns the number of distinct tags whose delay the channel accepted.
        """
        cfg = self.plant_config
        now = self.state.sim_time
        delivered = self.channel.deliver_due(now)
        for p in delivered:
            self._last_delivery[p.tag] = p.delivered_time
            self._in_flight.pop(p.packet_id, None)
        self.attack_label.append(bool(self._in_flight))

        prev_phase = self.state.phase
        self.state, emitted = step_scan_cycle(self.state, cfg, delivered, self.rng)
        if prev_phase is Phase.FILL_B and self.state.phase is Phase.DISCHARGE:
            self.qualities.append(batch_quality(self.state, cfg))
        self.channel.enqueue_all(emitted)
        for p in emitted:
            self.prev_seen[p.tag] = self.last_seen[p.tag]
            self.last_seen[p.tag] = p.payload_value

        accepted = 0
        if delays:
            scan = self.state.scan_index - 1
            for p in emitted:
                d = delays.get(p.tag, 0.0)
                if d > 0 and self.channel.apply_delay(p.packet_id, d, scan):
                    self._in_flight[p.packet_id] = p
            accepted = self.channel.budget_used(scan)
            if accepted:
                self.delayed_scans += 1

        self.features.append(self._feature_row(now))
        self.plant_rows.append(trace_row(self.state, cfg))
        self.progress.append(self.state.batch_index + self.state.batch_progress(cfg))
        return accepted

    def _feature_row(self, now: float) -> np.ndarray:
        s = self.state
        cap3 = self.plant_config.tank_capacity_ve3
        since = [min(MAX_AGE, now - self._last_delivery[t]) for t in ALL_TAGS]
        return np.array([
            s.fill_valve_frac, s.discharge_valve_frac, s.image_level / cap3, s.image_setpoint / cap3,
            *since,
            min(MAX_AGE, now - s.fill_cmd_time), min(MAX_AGE, now - s.discharge_cmd_time),
            min(MAX_AGE, now - s.image_level_time),
        ])

    def fork(self, keep_rows: int = 0) -> "ClosedLoop":
        """Cheap lookahead copy: live plant, channel and rng state, the last ``keep_rows`` feature rows."""
        new = ClosedLoop.__new__(ClosedLoop)
        new.plant_config = self.plant_config
        new.channel = self.channel.fork()
        new.rng = np.random.Generator(type(self.rng.bit_generator)())
        new.rng.bit_generator.state = self.rng.bit_generator.state
        new.state = self.state  # step_scan_cycle never mutates its input
        new._last_delivery = dict(self._last_delivery)
        pending = new.channel._pending
        new._in_flight = {pid: pending[pid] for pid in self._in_flight if pid in pending}
        new.features = self.features[-keep_rows:] if keep_rows else []
        new.attack_label, new.plant_rows, new.progress, new.qualities = [], [], [], []
        new.delayed_scans = 0
        new.last_seen = dict(self.last_seen)
        new.prev_seen = dict(self.prev_seen)
        return new

    def run(self, n_scans: int, policy: DelayPolicy | None = None) -> "ClosedLoop":
        for _ in range(n_scans):
            self.step(policy(self) if policy else None)
        return self

    def feature_matrix(self) -> np.ndarray:
        return np.asarray(self.features).reshape(-1, N_FEATURES)

    def labels(self) -> np.ndarray:
        return np.asarray(self.attack_label, dtype=bool)
