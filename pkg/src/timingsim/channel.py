"""L0 field network between the PLC and remote I/O.

Packets are queued per tag and delivered in FIFO order. An attack policy may
postpone a pending packet through :meth:`FieldChannel.apply_delay`; the
channel enforces the per-event delay cap and the per-scan budget of distinct
tags itself, so a misbehaving policy can never exceed them. Payloads are never
touched.
"""

from __future__ import annotations

import copy
import csv
import enum
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class Tag(str, enum.Enum):
    FILL_CMD = "FillCmd"
    DISCHARGE_CMD = "DischargeCmd"
    LEVEL_REPORT = "LevelReport"
    SETPOINT_REPORT = "SetpointReport"


ALL_TAGS: tuple[Tag, ...] = (Tag.FILL_CMD, Tag.DISCHARGE_CMD, Tag.LEVEL_REPORT, Tag.SETPOINT_REPORT)
COMMAND_TAGS = (Tag.FILL_CMD, Tag.DISCHARGE_CMD)
REPORT_TAGS = (Tag.LEVEL_REPORT, Tag.SETPOINT_REPORT)


class ChannelError(ValueError):
    """Raised on misuse of the channel (time travel, duplicate ids)."""


class FieldPacket:
    """One tagged frame. ``payload_value`` is read-only once created."""

    __slots__ = ("packet_id", "tag", "_payload", "scheduled_time", "applied_delay", "delivered_time", "attacked")

    def __init__(self, packet_id: int, tag: Tag, payload_value: float, scheduled_time: float):
        self.packet_id = packet_id
        self.tag = tag
        self._payload = float(payload_value)
        self.scheduled_time = float(scheduled_time)
        self.applied_delay = 0.0
        self.delivered_time: float | None = None
        # set when an adversarial delay > 0 was accepted for this packet
        self.attacked = False

    @property
    def payload_value(self) -> float:
        return self._payload

    @property
    def pending(self) -> bool:
        return self.delivered_time is None

    def __repr__(self) -> str:
        return (
            f"FieldPacket(id={self.packet_id}, tag={self.tag.value}, value={self._payload:.4g}, "
            f"t={self.scheduled_time:g}, delay={self.applied_delay:g}, delivered={self.delivered_time})"
        )


@dataclass
class ChannelConfig:
    delay_cap: float = 150.0
    budget: int = 3
    delayable_tags: frozenset[Tag] = field(default_factory=lambda: frozenset(ALL_TAGS))

    def __post_init__(self):
        self.delayable_tags = frozenset(Tag(t) for t in self.delayable_tags)
        if not self.delay_cap > 0:
            raise ValueError("delay_cap must be positive")
        if self.budget < 1:
            raise ValueError("budget K must be >= 1")


class FieldChannel:
    """Per-tag FIFO packet queue with budgeted, capped delay injection.

    The channel clock only moves forward, through :meth:`deliver_due`.
    """

    def __init__(self, config: ChannelConfig | None = None):
        self.config = config or ChannelConfig()
        self.clock = 0.0
        self._queues: dict[Tag, deque[FieldPacket]] = {t: deque() for t in ALL_TAGS}
        self._pending: dict[int, FieldPacket] = {}
        self._last_delivery: dict[Tag, float] = {t: -math.inf for t in ALL_TAGS}
        self._last_id = -1
        self._budget_scan: int | None = None
        self._budget_tags: set[Tag] = set()
        self.trace: list[FieldPacket] = []
        self.rejections = 0

    def enqueue(self, packet: FieldPacket) -> None:
        if packet.scheduled_time < self.clock:
            raise ChannelError(
                f"packet {packet.packet_id} scheduled at {packet.scheduled_time} before channel clock {self.clock}"
            )
        if packet.packet_id <= self._last_id:
            raise ChannelError(f"packet ids must increase (got {packet.packet_id} after {self._last_id})")
        self._last_id = packet.packet_id
        self._queues[packet.tag].append(packet)
        self._pending[packet.packet_id] = packet

    def enqueue_all(self, packets: Iterable[FieldPacket]) -> None:
        for p in packets:
            self.enqueue(p)

    def pending_packets(self, tag: Tag | None = None) -> list[FieldPacket]:
        if tag is None:
            return sorted(self._pending.values(), key=lambda p: p.packet_id)
        return list(self._queues[tag])

    def apply_delay(self, packet_id: int, delay: float, scan_index: int) -> bool:
        """Request that a pending packet be held for ``delay`` ms.

        Returns True when accepted. A rejection is an ordinary outcome: the
        delay exceeds the cap, the tag is not delayable, the packet is no
        longer pending, or a new tag would exceed the per-scan budget K.
        """
        packet = self._pending.get(packet_id)
        if packet is None or not math.isfinite(delay) or delay < 0:
            self.rejections += 1
            return False
        cfg = self.config
        if delay > cfg.delay_cap or packet.tag not in cfg.delayable_tags:
            self.rejections += 1
            return False
        if scan_index != self._budget_scan:
            self._budget_scan = scan_index
            self._budget_tags = set()
        if delay == 0:
            packet.applied_delay = 0.0
            return True
        if packet.tag not in self._budget_tags and len(self._budget_tags) >= cfg.budget:
            self.rejections += 1
            return False
        self._budget_tags.add(packet.tag)
        packet.applied_delay = float(delay)
        packet.attacked = True
        return True

    def budget_used(self, scan_index: int) -> int:
        return len(self._budget_tags) if scan_index == self._budget_scan else 0

    def deliver_due(self, now: float) -> list[FieldPacket]:
        """Release every packet whose effective time is <= ``now``.

        A packet never overtakes an earlier packet of the same tag: its
        delivery is clamped to the previous same-tag delivery, and the
        recorded ``applied_delay`` is the resulting total hold time.
        """
        if now < self.clock:
            raise ChannelError(f"deliver_due({now}) would move the clock back from {self.clock}")
        self.clock = now
        out: list[FieldPacket] = []
        for tag, queue in self._queues.items():
            last = self._last_delivery[tag]
            while queue:
                head = queue[0]
                due = max(head.scheduled_time + head.applied_delay, last)
                if due > now:
                    break
                queue.popleft()
                head.delivered_time = due
                head.applied_delay = due - head.scheduled_time
                del self._pending[head.packet_id]
                last = due
                out.append(head)
            self._last_delivery[tag] = last
        out.sort(key=lambda p: (p.delivered_time, p.packet_id))
        self.trace.extend(out)
        return out

    def fork(self) -> "FieldChannel":
        """Independent copy of the queues and budget; the delivery trace starts empty."""
        new = FieldChannel(self.config)
        new.clock = self.clock
        for tag, queue in self._queues.items():
            for p in queue:
                q = copy.copy(p)
                new._queues[tag].append(q)
                new._pending[q.packet_id] = q
        new._last_delivery = dict(self._last_delivery)
        new._last_id = self._last_id
        new._budget_scan = self._budget_scan
        new._budget_tags = set(self._budget_tags)
        return new

    def export_trace(self, path) -> None:
        write_packet_csv(path, self.trace)


TRACE_COLUMNS = ("packet_id", "tag", "scheduled_time", "applied_delay", "delivered_time", "payload_value")


def write_packet_csv(path, packets: Sequence[FieldPacket]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for p in packets:
            writer.writerow([p.packet_id, p.tag.value, repr(p.scheduled_time), repr(p.applied_delay),
                             repr(p.delivered_time), repr(p.payload_value)])


def read_packet_csv(path) -> list[FieldPacket]:
    packets = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            p = FieldPacket(int(row["packet_id"]), Tag(row["tag"]), float(row["payload_value"]),
                            float(row["scheduled_time"]))
            p.applied_delay = float(row["applied_delay"])
            p.delivered_time = float(row["delivered_time"])
            packets.append(p)
    return packets


@dataclass
class TimingFeatures:
    """Order statistics of inter-arrival times per tag, plus latency and jitter.

    Tags with fewer than two deliveries in the window are absent from
    ``inter_arrival``.
    """

    inter_arrival: dict[Tag, dict[str, float]]
    actuation_latency: float
    jitter: float
    window: int

    STATS = ("min", "median", "p90", "max")

    def as_vector(self, tags: Sequence[Tag] = ALL_TAGS, scale: float = 100.0) -> np.ndarray:
        """Flatten to a fixed-length vector; absent tags contribute zeros."""
        out = []
        for tag in tags:
            stats = self.inter_arrival.get(tag)
            out.extend((stats[k] / scale if stats else 0.0) for k in self.STATS)
        out.append(self.actuation_latency / scale)
        out.append(self.jitter / scale)
        return np.asarray(out, dtype=float)


def extract_timing_features(trace: Sequence[FieldPacket], window: int = 32,
                            tags: Sequence[Tag] = ALL_TAGS, scan_period: float | None = None) -> TimingFeatures:
    """Timing features over the trailing ``window`` deliveries of each tag.

    Actuation latency is the largest emit-to-apply time among the command
    packets in the window; a command is applied at the first scan boundary at
    or after its delivery when ``scan_period`` is given.
    """
    by_tag: dict[Tag, list[FieldPacket]] = {t: [] for t in tags}
    for p in reversed(trace):
        bucket = by_tag.get(p.tag)
        if bucket is not None and len(bucket) < window:
            bucket.append(p)
    inter: dict[Tag, dict[str, float]] = {}
    jitters = []
    latency = 0.0
    for tag, pkts in by_tag.items():
        pkts.reverse()
        if tag in COMMAND_TAGS:
            for p in pkts:
                applied = p.delivered_time
                if scan_period:
                    applied = math.ceil(applied / scan_period - 1e-9) * scan_period
                latency = max(latency, applied - p.scheduled_time)
        if len(pkts) < 2:
            continue
        gaps = np.diff([p.delivered_time for p in pkts])
        inter[tag] = {
            "min": float(gaps.min()),
            "median": float(np.median(gaps)),
            "p90": float(np.percentile(gaps, 90)),
            "max": float(gaps.max()),
        }
        jitters.append(float(gaps.std()))
    return TimingFeatures(inter, latency, float(np.mean(jitters)) if jitters else 0.0, window)
