"""Cascade mixing line: reservoirs VE-1 and VE-2 feed main tank VE-3.

The PLC runs a fixed scan cycle. Each scan it routes the packets the field
channel delivered (sensor reports into the process image, commands onto the
actuators), runs the batch sequence and PID, emits command packets, then the
physics integrates one scan with single-integrator tank dynamics (explicit
Euler). Controller inputs are normalised by the VE-3 capacity.

Batch sequence: fill from VE-1 to the recipe share of the setpoint, top up
from VE-2 to the setpoint, then discharge to empty. During the fill phases
the PID output is split into a fill command (positive part) and a trim
discharge command (negative part), so overshoot is corrected by draining.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field, replace
from statistics import NormalDist
from typing import Sequence

import numpy as np

from .channel import FieldPacket, Tag


class CorruptSensorValue(ValueError):
    """A non-finite process value reached the controller."""


class Phase(enum.IntEnum):
    FILL_A = 0
    FILL_B = 1
    DISCHARGE = 2


@dataclass
class PlantConfig:
    tank_capacity_ve1: float = 20.0  # L
    tank_capacity_ve2: float = 20.0
    tank_capacity_ve3: float = 10.0
    fill_gain: float = 12.0  # L/s at valve fraction 1
    discharge_gain: float = 12.0
    scan_period: float = 10.0  # ms
    sensor_noise_sigma: float = 0.001  # fraction of VE-3 full scale
    recipe_ratio: float = 1.0  # VE-1 : VE-2
    setpoint_level: float = 6.0  # L
    batch_timeout: int = 400  # scans per fill phase
    kp: float = 16.0
    ki: float = 0.5
    kd: float = 0.0
    integral_limit: float = 0.02
    valve_threshold: float = 0.1  # on/off boundary of a valve fraction
    hysteresis_band: float = 0.05
    settle_tolerance: float = 0.005  # fraction of SP
    settle_scans: int = 10
    empty_fraction: float = 0.02  # of VE-3 capacity
    initial_reservoir_fraction: float = 0.8
    io_skip_prob: float = 0.2  # remote I/O input refresh skipped this scan
    io_max_skips: int = 3
    cmd_skip_prob: float = 0.1  # PLC output refresh skipped this scan
    cmd_max_skips: int = 2
    scan_jitter: float = 0.0  # ms, uniform +/- amplitude
    watchdog: float = 200.0  # ms without a frame before fail-safe outputs (inf disables)

    def __post_init__(self):
        if not 1 <= self.scan_period <= 50:
            raise ValueError("scan_period must lie in [1, 50] ms")
        if not 0 < self.setpoint_level <= self.tank_capacity_ve3:
            raise ValueError("setpoint_level must lie in (0, tank_capacity_ve3]")
        if self.sensor_noise_sigma < 0:
            raise ValueError("sensor_noise_sigma must be >= 0")
        if self.recipe_ratio <= 0:
            raise ValueError("recipe_ratio must be positive")
        if self.scan_jitter < 0 or self.scan_jitter >= self.scan_period:
            raise ValueError("scan_jitter must lie in [0, scan_period)")
        if not 0 <= self.io_skip_prob < 1 or not 0 <= self.cmd_skip_prob < 1:
            raise ValueError("skip probabilities must lie in [0, 1)")
        if not self.watchdog > 0:
            raise ValueError("watchdog must be positive")

    @property
    def share_a(self) -> float:
        """Fraction of the setpoint volume drawn from VE-1."""
        return self.recipe_ratio / (1.0 + self.recipe_ratio)


@dataclass
class PidState:
    kp: float
    ki: float
    kd: float
    integral_accum: float = 0.0
    last_error: float = 0.0
    integral_limit: float = math.inf


def pid_output(pid: PidState, pv: float, sp: float, dt: float) -> tuple[float, PidState]:
    """Unclamped PID law; returns the raw output and the advanced state."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if not (math.isfinite(pv) and math.isfinite(sp)):
        raise CorruptSensorValue(f"non-finite process value pv={pv} sp={sp}")
    error = sp - pv
    lim = pid.integral_limit
    integral = min(lim, max(-lim, pid.integral_accum + error * dt))
    derivative = (error - pid.last_error) / dt
    raw = pid.kp * error + pid.ki * integral + pid.kd * derivative
    return raw, replace(pid, integral_accum=integral, last_error=error)


def pid_update(pid: PidState, pv: float, sp: float, dt: float) -> tuple[float, PidState]:
    """PID command clamped to a valve fraction in [0, 1]."""
    raw, new = pid_output(pid, pv, sp, dt)
    return min(1.0, max(0.0, raw)), new


@dataclass
class PlantState:
    level_ve1: float
    level_ve2: float
    level_ve3: float
    fill_valve_frac: float = 0.0
    discharge_valve_frac: float = 0.0
    pid: PidState = field(default_factory=lambda: PidState(16.0, 0.5, 0.0, integral_limit=0.02))
    cycle_count_per_actuator: tuple[int, int] = (0, 0)  # (fill, discharge)
    valve_open: tuple[bool, bool] = (False, False)
    sim_time: float = 0.0  # ms
    scan_index: int = 0
    batch_index: int = 0
    batch_ratio_achieved: float = float("nan")
    batch_level_achieved: float = float("nan")
    phase: Phase = Phase.FILL_A
    phase_scans: int = 0
    settle_count: int = 0
    content_a: float = 0.0  # litres of VE-1 liquid inside VE-3
    content_b: float = 0.0
    image_level: float = 0.0  # controller's process image of s2 (L)
    image_level_time: float = 0.0
    image_setpoint: float = 0.0
    fill_cmd_time: float = 0.0  # emit time of the command on the actuator
    discharge_cmd_time: float = 0.0
    last_fill_cmd: float = 0.0  # s0 as emitted by the PLC this scan
    last_discharge_cmd: float = 0.0  # s1
    fill_rx_time: float = 0.0  # arrival of the last frame per tag (watchdog clocks)
    discharge_rx_time: float = 0.0
    level_rx_time: float = 0.0
    cumulative_inflow: float = 0.0  # external refills (L)
    cumulative_outflow: float = 0.0  # discharged product (L)
    skip_run: int = 0
    cmd_skip_run: int = 0
    next_packet_id: int = 0

    @property
    def pump_on(self) -> bool:
        return self.discharge_valve_frac > 0.0

    @property
    def total_volume(self) -> float:
        return self.level_ve1 + self.level_ve2 + self.level_ve3

    def batch_progress(self, config: PlantConfig) -> float:
        """Fraction of the current batch completed, by volume moved."""
        sp = config.setpoint_level
        if self.phase is Phase.DISCHARGE:
            return 0.5 + 0.5 * min(1.0, max(0.0, 1.0 - self.level_ve3 / sp))
        return 0.5 * min(1.0, self.level_ve3 / sp)


def initial_state(config: PlantConfig) -> PlantState:
    f = config.initial_reservoir_fraction
    return PlantState(
        level_ve1=f * config.tank_capacity_ve1,
        level_ve2=f * config.tank_capacity_ve2,
        level_ve3=0.0,
        pid=PidState(config.kp, config.ki, config.kd, integral_limit=config.integral_limit),
        image_setpoint=config.setpoint_level,
    )


def _count_cycle(opened: bool, frac: float, config: PlantConfig) -> tuple[bool, int]:
    hi = config.valve_threshold + config.hysteresis_band
    lo = config.valve_threshold - config.hysteresis_band
    if not opened and frac >= hi:
        return True, 1
    if opened and frac <= lo:
        return False, 1
    return opened, 0


def step_scan_cycle(state: PlantState, config: PlantConfig, delivered_inputs: Sequence[FieldPacket],
                    rng: np.random.Generator | None = None) -> tuple[PlantState, list[FieldPacket]]:
    """Advance one PLC scan. Returns the new state and the packets emitted.

    ``rng`` drives sensor noise, remote I/O refresh skips, output refresh
    skips and scan jitter. It is consumed at a fixed rate of four draws per scan so that trajectories
    with different delay schedules stay aligned on the same noise sequence.
    """
    s = replace(state)
    if rng is not None:
        noise_draw, skip_draw, jitter_draw, cmd_draw = rng.random(4)
    else:
        noise_draw, skip_draw, jitter_draw, cmd_draw = 0.5, 1.0, 0.5, 1.0
    dt_ms = config.scan_period + config.scan_jitter * (2.0 * jitter_draw - 1.0)
    dt = dt_ms / 1000.0
    cap3 = config.tank_capacity_ve3

    # (1) route deliveries: reports into the process image, commands onto actuators
    fill_frac, dis_frac = s.fill_valve_frac, s.discharge_valve_frac
    for p in delivered_inputs:
        if p.tag is Tag.LEVEL_REPORT:
            s.image_level = p.payload_value
            s.image_level_time = p.scheduled_time
            s.level_rx_time = s.sim_time
        elif p.tag is Tag.SETPOINT_REPORT:
            s.image_setpoint = p.payload_value
        elif p.tag is Tag.FILL_CMD:
            fill_frac = p.payload_value
            s.fill_cmd_time = p.scheduled_time
            s.fill_rx_time = s.sim_time
        elif p.tag is Tag.DISCHARGE_CMD:
            dis_frac = p.payload_value
            s.discharge_cmd_time = p.scheduled_time
            s.discharge_rx_time = s.sim_time
    # remote I/O watchdog: without a command frame for too long the output drops to its substitute value 0
    if s.sim_time - s.fill_rx_time > config.watchdog:
        fill_frac = 0.0
    if s.sim_time - s.discharge_rx_time > config.watchdog:
        dis_frac = 0.0
    fill_frac = min(1.0, max(0.0, fill_frac))
    dis_frac = min(1.0, max(0.0, dis_frac))
    s.fill_valve_frac, s.discharge_valve_frac = fill_frac, dis_frac
    (open_f, c_f) = _count_cycle(s.valve_open[0], fill_frac, config)
    (open_d, c_d) = _count_cycle(s.valve_open[1], dis_frac, config)
    s.valve_open = (open_f, open_d)
    if c_f or c_d:
        s.cycle_count_per_actuator = (s.cycle_count_per_actuator[0] + c_f, s.cycle_count_per_actuator[1] + c_d)

    # (2) sequence + PID on the (possibly stale) process image
    pv = s.image_level / cap3
    sp = s.image_setpoint / cap3
    if not (math.isfinite(pv) and math.isfinite(sp)):
        raise CorruptSensorValue(f"non-finite process image pv={s.image_level} sp={s.image_setpoint}")
    s.phase_scans += 1
    if s.sim_time - s.level_rx_time > config.watchdog:
        # stale input: the program holds both valves shut until the level report returns
        fill_cmd, dis_cmd = 0.0, 0.0
    elif s.phase is Phase.DISCHARGE:
        fill_cmd, dis_cmd = 0.0, 1.0
        if pv <= config.empty_fraction:
            _complete_batch(s, config)
    else:
        target = sp * config.share_a if s.phase is Phase.FILL_A else sp
        raw, s.pid = pid_output(s.pid, pv, target, dt)
        fill_cmd = min(1.0, max(0.0, raw))
        dis_cmd = min(1.0, max(0.0, -raw))
        if abs(pv - target) * cap3 <= config.settle_tolerance * config.setpoint_level:
            s.settle_count += 1
        else:
            s.settle_count = 0
        if s.settle_count >= config.settle_scans or s.phase_scans >= config.batch_timeout:
            if s.phase is Phase.FILL_B:
                s.batch_level_achieved = s.level_ve3
                s.batch_ratio_achieved = s.content_a / s.content_b if s.content_b > 0 else math.inf
            s.phase = Phase(s.phase + 1)
            s.phase_scans = 0
            s.settle_count = 0
            s.pid = replace(s.pid, integral_accum=0.0, last_error=0.0)

    # (3) emit actuator commands stamped with the current scan time, unless
    # the output refresh is skipped (actuators then hold their last value)
    emitted = []
    if cmd_draw < config.cmd_skip_prob and s.cmd_skip_run < config.cmd_max_skips:
        s.cmd_skip_run += 1
    else:
        s.cmd_skip_run = 0
        emitted.append(FieldPacket(s.next_packet_id, Tag.FILL_CMD, fill_cmd, s.sim_time))
        emitted.append(FieldPacket(s.next_packet_id + 1, Tag.DISCHARGE_CMD, dis_cmd, s.sim_time))
        s.next_packet_id += 2
    s.last_fill_cmd, s.last_discharge_cmd = fill_cmd, dis_cmd

    # (4) physics over one scan, actuators as applied at the start of the scan
    out = min(config.discharge_gain * dis_frac * dt, s.level_ve3)
    if out > 0 and s.level_ve3 > 0:
        keep = 1.0 - out / s.level_ve3
        s.content_a *= keep
        s.content_b *= keep
    s.level_ve3 -= out
    from_a = s.phase is Phase.FILL_A
    source = s.level_ve1 if from_a else s.level_ve2
    inflow = min(config.fill_gain * fill_frac * dt, source, cap3 - s.level_ve3)
    inflow = max(0.0, inflow)
    s.level_ve3 += inflow
    if from_a:
        s.level_ve1 -= inflow
        s.content_a += inflow
    else:
        s.level_ve2 -= inflow
        s.content_b += inflow
    s.cumulative_outflow += out
    s.sim_time += dt_ms
    s.scan_index += 1

    # (5) remote I/O samples the level at the end of the scan
    skip = skip_draw < config.io_skip_prob and s.skip_run < config.io_max_skips
    if skip:
        s.skip_run += 1
    else:
        s.skip_run = 0
        noise = _gauss(noise_draw) * config.sensor_noise_sigma * cap3
        measured = min(cap3, max(0.0, s.level_ve3 + noise))
        emitted.append(FieldPacket(s.next_packet_id, Tag.LEVEL_REPORT, measured, s.sim_time))
        emitted.append(FieldPacket(s.next_packet_id + 1, Tag.SETPOINT_REPORT, config.setpoint_level, s.sim_time))
        s.next_packet_id += 2
    return s, emitted


_NORMAL = NormalDist()


def _gauss(u: float) -> float:
    # inverse-CDF draw keeps the rng consumption fixed per scan
    return _NORMAL.inv_cdf(min(max(u, 1e-12), 1 - 1e-12))


def _complete_batch(s: PlantState, config: PlantConfig) -> None:
    f = config.initial_reservoir_fraction
    top1 = f * config.tank_capacity_ve1 - s.level_ve1
    top2 = f * config.tank_capacity_ve2 - s.level_ve2
    s.level_ve1 += top1
    s.level_ve2 += top2
    s.cumulative_inflow += top1 + top2
    s.batch_index += 1
    s.phase = Phase.FILL_A
    s.phase_scans = 0
    s.settle_count = 0


def batch_quality(state: PlantState, config: PlantConfig) -> float:
    """Inaccuracy (%) of the last completed fill: mean of level and ratio error."""
    level = state.batch_level_achieved
    ratio = state.batch_ratio_achieved
    if math.isnan(level):
        raise ValueError("no batch has completed its fill yet")
    sp = config.setpoint_level
    level_err = 100.0 * abs(level - sp) / sp
    ratio_err = 100.0 * abs(ratio - config.recipe_ratio) / config.recipe_ratio
    return 0.5 * (level_err + ratio_err)


class Plant:
    """Stateful convenience wrapper around :func:`step_scan_cycle`."""

    def __init__(self, config: PlantConfig | None = None, seed: int | None = 0):
        self.config = config or PlantConfig()
        self.rng = np.random.default_rng(seed) if seed is not None else None
        self.state = initial_state(self.config)
        self.qualities: list[float] = []

    def step(self, delivered: Sequence[FieldPacket]) -> list[FieldPacket]:
        prev_fill = self.state.phase
        self.state, emitted = step_scan_cycle(self.state, self.config, delivered, self.rng)
        if prev_fill is Phase.FILL_B and self.state.phase is Phase.DISCHARGE:
            self.qualities.append(batch_quality(self.state, self.config))
        return emitted


TRACE_COLUMNS = ("sim_time", "s0", "s1", "s2", "s3", "cycles_fill", "cycles_discharge")


def trace_row(state: PlantState, config: PlantConfig) -> tuple:
    return (state.sim_time, state.last_fill_cmd, state.last_discharge_cmd, state.level_ve3,
            config.setpoint_level, *state.cycle_count_per_actuator)


def write_plant_csv(path, rows: Sequence[tuple]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        writer.writerows(rows)


def step_response(config: PlantConfig, n_scans: int = 600) -> np.ndarray:
    """Closed-loop fill of VE-3 from empty to the setpoint, no network.

    The fill command computed in scan k is applied in scan k+1 and the
    controller sees the level sampled at the end of the previous scan, as in
    the full loop. Returns the level after each scan (L).
    """
    cap3 = config.tank_capacity_ve3
    pid = PidState(config.kp, config.ki, config.kd, integral_limit=config.integral_limit)
    dt = config.scan_period / 1000.0
    level, applied = 0.0, 0.0
    sp = config.setpoint_level / cap3
    out = np.empty(n_scans)
    for k in range(n_scans):
        cmd, pid = pid_update(pid, level / cap3, sp, dt)
        level = min(cap3, level + config.fill_gain * applied * dt)
        applied = cmd
        out[k] = level
    return out


def settling_scan(levels: np.ndarray, setpoint: float, tol: float = 0.01) -> int:
    """First scan index after which |PV - SP| / SP stays within ``tol``."""
    inside = np.abs(levels - setpoint) / setpoint <= tol
    if not inside[-1]:
        return -1
    outside = np.flatnonzero(~inside)
    return 0 if outside.size == 0 else int(outside[-1] + 1)
