"""Seeded synthetic four-leg intersection traffic.

Each vehicle follows a lane-level path (straight approach, optional turn arc,
straight exit) under a speed profile integrated at sub-frame resolution.
Speed and heading are derived from the clean frame-to-frame displacement;
position noise is added afterwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import FPS, MPH_TO_FPS
from .data import Trajectory
from .errors import ConfigError
from .geometry import normalize_heading

MANEUVERS = ("through", "left", "right", "uturn")
PROFILES = ("accelerate_from_stop", "cruise", "brake")
APPROACH_HEADINGS = {"EB": 0.0, "NB": 90.0, "WB": 180.0, "SB": 270.0}

_SUBSTEPS = 8
_STOP_EPS_FPS = 0.05


@dataclass
class IntersectionSpec:
    rotation_deg: float = 30.0
    median_ft: float = 4.0
    lane_width_ft: float = 12.0
    stop_line_ft: float = 50.0
    approach_ft: float = 250.0
    exit_ft: float = 250.0
    uturn_offset_ft: float = 10.0
    approaches: tuple[str, ...] = ("EB", "NB", "WB", "SB")
    maneuver_mix: dict[str, float] = field(
        default_factory=lambda: {"through": 0.4, "left": 0.3, "right": 0.2, "uturn": 0.1}
    )
    profile_mix: dict[str, float] = field(
        default_factory=lambda: {"accelerate_from_stop": 0.4, "cruise": 0.4, "brake": 0.2}
    )
    cruise_mph: tuple[float, float] = (25.0, 40.0)
    turn_mph: dict[str, tuple[float, float]] = field(
        default_factory=lambda: {"left": (12.0, 20.0), "right": (8.0, 14.0), "uturn": (6.0, 10.0)}
    )
    accel_fps2: tuple[float, float] = (4.0, 9.0)
    decel_fps2: tuple[float, float] = (6.0, 12.0)
    dwell_s: tuple[float, float] = (0.5, 4.0)
    queue_spacing_ft: float = 25.0
    max_queue: int = 3
    length_ft: tuple[float, float] = (14.0, 19.0)
    width_ft: tuple[float, float] = (5.6, 6.6)
    mean_headway_s: float = 1.5
    min_lane_headway_s: float = 2.0
    min_gap_ft: float = 3.0

    @classmethod
    def from_dict(cls, d: dict | None) -> "IntersectionSpec":
        d = dict(d or {})
        for key in ("cruise_mph", "accel_fps2", "decel_fps2", "dwell_s", "length_ft", "width_ft", "approaches"):
            if key in d:
                d[key] = tuple(d[key])
        if "turn_mph" in d:
            d["turn_mph"] = {k: tuple(v) for k, v in d["turn_mph"].items()}
        return cls(**d)

    def validate(self):
        mix = {k: v for k, v in self.maneuver_mix.items() if v > 0}
        if not mix:
            raise ConfigError("maneuver mix is empty")
        unknown = set(self.maneuver_mix) - set(MANEUVERS)
        if unknown:
            raise ConfigError(f"unknown maneuvers {sorted(unknown)}")
        if not any(v > 0 for v in self.profile_mix.values()):
            raise ConfigError("speed profile mix is empty")
        unknown = set(self.profile_mix) - set(PROFILES)
        if unknown:
            raise ConfigError(f"unknown speed profiles {sorted(unknown)}")
        unknown = set(self.approaches) - set(APPROACH_HEADINGS)
        if unknown or not self.approaches:
            raise ConfigError(f"bad approaches {self.approaches}")


class Path:
    """Arc-length parameterized polyline of straight and circular segments."""

    def __init__(self, start, heading_deg):
        self.segments = []  # (kind, s0, length, data)
        self.length = 0.0
        self._pos = np.asarray(start, dtype=float)
        self._heading = math.radians(heading_deg)
        self.arc_spans: list[tuple[float, float]] = []

    def line(self, length):
        self.segments.append(("line", self.length, length, (self._pos.copy(), self._heading)))
        self._pos = self._pos + length * np.array([math.cos(self._heading), math.sin(self._heading)])
        self.length += length
        return self

    def arc(self, radius, sweep_deg):
        """Positive sweep turns left (counterclockwise)."""
        turn = 1.0 if sweep_deg > 0 else -1.0
        normal = self._heading + turn * math.pi / 2
        center = self._pos + radius * np.array([math.cos(normal), math.sin(normal)])
        start_angle = normal + math.pi
        sweep = math.radians(sweep_deg)
        length = radius * abs(sweep)
        self.segments.append(("arc", self.length, length, (center, radius, start_angle, turn, self._heading)))
        self.arc_spans.append((self.length, self.length + length))
        self._heading += sweep
        self._pos = center + radius * np.array([math.cos(start_angle + sweep), math.sin(start_angle + sweep)])
        self.length += length
        return self

    def locate(self, s):
        """Positions (n, 2) and tangent headings (deg) at arc lengths ``s``."""
        s = np.clip(np.asarray(s, dtype=float), 0.0, self.length)
        pos = np.zeros(s.shape + (2,))
        hdg = np.zeros(s.shape)
        for i, (kind, s0, length, data) in enumerate(self.segments):
            last = i == len(self.segments) - 1
            m = (s >= s0) & ((s < s0 + length) | last)
            if not m.any():
                continue
            u = s[m] - s0
            if kind == "line":
                p0, h = data
                pos[m] = p0 + u[:, None] * np.array([math.cos(h), math.sin(h)])
                hdg[m] = h
            else:
                center, radius, a0, turn, h0 = data
                ang = a0 + turn * u / radius
                pos[m] = center + radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
                hdg[m] = h0 + turn * u / radius
        return pos, np.degrees(hdg)


def _lane_offsets(spec: IntersectionSpec):
    inner = spec.median_ft + 0.5 * spec.lane_width_ft
    return inner, inner + spec.lane_width_ft, inner + 2 * spec.lane_width_ft


def build_path(spec: IntersectionSpec, maneuver: str) -> Path:
    """Path in the local frame of an eastbound approach (heading 0)."""
    inner, middle, outer = _lane_offsets(spec)
    S, A, E = spec.stop_line_ft, spec.approach_ft, spec.exit_ft
    if maneuver == "through":
        return Path((-S - A, -middle), 0.0).line(A + 2 * S + E)
    if maneuver == "left":
        return Path((-S - A, -inner), 0.0).line(A).arc(S + inner, 90.0).line(E)
    if maneuver == "right":
        return Path((-S - A, -outer), 0.0).line(A).arc(S - outer, -90.0).line(E)
    if maneuver == "uturn":
        u = spec.uturn_offset_ft
        return Path((-S - A, -inner), 0.0).line(A + u).arc(inner, 180.0).line(u + E)
    raise ConfigError(f"unknown maneuver {maneuver!r}")


def _simulate_speed(path: Path, v_cruise, v_turn, accel, decel, s_start, v_start, stop_at, dwell, limit=None):
    """Integrate (s, v) along the path; returns arc length per frame.

    ``limit`` optionally caps the arc length per frame (car following): the
    vehicle brakes towards it like a stop line and never passes it.
    """
    dt = 1.0 / (FPS * _SUBSTEPS)
    s, v = s_start, v_start
    stopped_for = None if stop_at is not None else -1.0
    if v_start == 0.0 and stop_at is None:
        stopped_for = 0.0  # queued at start, dwell before moving
    frames = [s]
    step = 0
    max_steps = int(600 * FPS * _SUBSTEPS)
    while s < path.length and step < max_steps:
        step += 1
        env = v_cruise
        for a0, a1 in path.arc_spans:
            if s < a0:
                env = min(env, math.sqrt(v_turn**2 + 2 * decel * (a0 - s)))
            elif s <= a1:
                env = min(env, v_turn)
        cap = math.inf
        if limit is not None:
            k = (step - 1) // _SUBSTEPS + 1
            cap = limit[k] if k < len(limit) else math.inf
            env = min(env, math.sqrt(2 * decel * max(0.0, cap - s)))
        if stopped_for is None:  # still braking for the stop line
            env = min(env, math.sqrt(2 * decel * max(0.0, stop_at - s)))
            if env < _STOP_EPS_FPS:
                v, stopped_for = 0.0, 0.0
        if stopped_for is not None and 0.0 <= stopped_for < dwell:
            v_new = 0.0
            stopped_for += dt
            if stopped_for >= dwell:
                stopped_for = -1.0
        else:
            v_new = min(v + accel * dt, env)
            v_new = max(v_new, 0.0)
        s_new = s + 0.5 * (v + v_new) * dt
        if s_new > cap:
            s_new = max(s, cap)
            v_new = min(v_new, (s_new - s) / dt)
        s, v = s_new, v_new
        if step % _SUBSTEPS == 0:
            frames.append(min(s, path.length))
    return np.asarray(frames)


def trajectory_from_positions(vehicle_id, frames, x, y, length_ft, width_ft, fallback_heading_deg=0.0, fps=FPS):
    """Derive speed (mph) and heading (deg) from clean frame-to-frame displacement.

    Waypoints with zero displacement keep the last known heading (the
    fallback for leading stationary waypoints).
    """
    frames = np.asarray(frames, dtype=np.int64)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(frames)
    dx = np.empty(n)
    dy = np.empty(n)
    if n > 1:
        dx[1:] = np.diff(x) / np.diff(frames)
        dy[1:] = np.diff(y) / np.diff(frames)
        dx[0], dy[0] = dx[1], dy[1]
    else:
        dx[:] = dy[:] = 0.0
    step = np.hypot(dx, dy)
    speed = step * fps / MPH_TO_FPS
    raw = np.degrees(np.arctan2(dy, dx))
    heading = np.empty(n)
    fallback = np.asarray(fallback_heading_deg, dtype=float) * np.ones(n)
    last = None
    for i in range(n):
        if step[i] > 1e-12:
            last = raw[i]
        heading[i] = last if last is not None else fallback[i]
    # leading stationary waypoints take the first moving heading
    first_moving = np.flatnonzero(step > 1e-12)
    if len(first_moving):
        heading[: first_moving[0]] = raw[first_moving[0]]
    speed = np.where(step > 1e-12, speed, 0.0)
    return Trajectory(
        vehicle_id=vehicle_id,
        frame=frames,
        x_ft=x,
        y_ft=y,
        speed_mph=speed,
        heading_deg=normalize_heading(heading),
        length_ft=np.full(n, float(length_ft)),
        width_ft=np.full(n, float(width_ft)),
    )


def _choice(rng, mix: dict[str, float]):
    keys = [k for k in mix if mix[k] > 0]
    p = np.array([mix[k] for k in keys], dtype=float)
    return keys[int(rng.choice(len(keys), p=p / p.sum()))]


def _rotation(deg):
    th = math.radians(deg)
    return np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])


def _follow_limit(spec: IntersectionSpec, leader, start_frame: int, length_ft: float, maneuver: str, n: int = 60 * FPS):
    """Per-frame arc-length cap behind a same-lane leader, from ``start_frame``.

    ``leader`` is (start_frame, arc lengths, length_ft, maneuver).  The cap
    applies over the whole path when both take the same maneuver, otherwise
    while the leader is still on the shared approach and intersection stretch.
    """
    lead_start, lead_s, lead_len, lead_maneuver = leader
    gap = 0.5 * (lead_len + length_ft) + spec.min_gap_ft
    shared = math.inf if lead_maneuver == maneuver else spec.approach_ft + spec.stop_line_ft
    idx = start_frame - lead_start + np.arange(n)
    limit = np.full(n, math.inf)
    inside = (idx >= 0) & (idx < len(lead_s))
    ls = lead_s[np.clip(idx, 0, len(lead_s) - 1)]
    active = inside & (ls < shared)
    limit[active] = ls[active] - gap
    limit[(idx < 0)] = -gap  # leader not yet entered (cannot happen with entry headways)
    return limit


def _generate(spec, rng, vehicle_id, start_frame, approach, maneuver, profile, leader=None):
    path = build_path(spec, maneuver)
    u = lambda lo_hi: float(rng.uniform(*lo_hi))
    v_cruise = u(spec.cruise_mph) * MPH_TO_FPS
    v_turn = u(spec.turn_mph[maneuver]) * MPH_TO_FPS if maneuver in spec.turn_mph else v_cruise
    v_turn = min(v_turn, v_cruise)
    accel, decel = u(spec.accel_fps2), u(spec.decel_fps2)
    length, width = u(spec.length_ft), u(spec.width_ft)
    stop_line_s = spec.approach_ft - 0.5 * length
    dwell = u(spec.dwell_s)

    if profile == "accelerate_from_stop":
        queue = int(rng.integers(0, spec.max_queue + 1))
        s0, v0, stop_at = max(0.0, stop_line_s - queue * spec.queue_spacing_ft), 0.0, None
    elif profile == "cruise":
        s0, v0, stop_at, dwell = 0.0, v_cruise, None, 0.0
    elif profile == "brake":
        s0, v0, stop_at = 0.0, v_cruise, stop_line_s
    else:
        raise ConfigError(f"unknown speed profile {profile!r}")

    limit = None
    if leader is not None:
        # wait at the entry until the leader has left room
        while True:
            limit = _follow_limit(spec, leader, start_frame, length, maneuver)
            if limit[0] >= 0.0:
                break
            start_frame += FPS // 2
        if s0 > limit[0]:
            s0 = max(0.0, limit[0])
        v0 = min(v0, math.sqrt(2 * decel * max(0.0, limit[0] - s0)))
        if v0 == 0.0 and profile != "accelerate_from_stop":
            stop_at = None
            dwell = 0.0
    s = _simulate_speed(path, v_cruise, v_turn, accel, decel, s0, v0, stop_at, dwell, limit)

    pos, tangent = path.locate(s)
    rot = spec.rotation_deg + APPROACH_HEADINGS[approach]
    pos = pos @ _rotation(rot).T
    frames = start_frame + np.arange(len(s))
    traj = trajectory_from_positions(
        vehicle_id, frames, pos[:, 0], pos[:, 1], length, width, fallback_heading_deg=tangent + rot
    )
    return traj, (start_frame, s, length, maneuver)


def generate_vehicle(
    spec: IntersectionSpec,
    rng: np.random.Generator,
    vehicle_id: str,
    start_frame: int,
    approach: str,
    maneuver: str,
    profile: str,
    leader=None,
) -> Trajectory:
    """One vehicle with clean kinematics (no noise).

    ``leader`` is an optional (start_frame, arc lengths, length_ft, maneuver) record of
    the previous vehicle in the same lane; the new vehicle never closes to
    within ``min_gap_ft`` bumper-to-bumper of it (entry may be delayed).
    """
    return _generate(spec, rng, vehicle_id, start_frame, approach, maneuver, profile, leader)[0]


def generate_synthetic(
    spec: IntersectionSpec | None = None,
    n_vehicles: int = 100,
    noise_std: float = 0.2,
    seed: int = 0,
    maneuvers: list[str] | None = None,
) -> list[Trajectory]:
    """Seeded corpus of ``n_vehicles`` trajectories at 30 fps.

    Entry times follow exponential headways, delayed so that vehicles in the
    same lane enter at least ``min_lane_headway_s`` apart and never close
    to within ``min_gap_ft`` of the vehicle ahead.  ``maneuvers``
    optionally fixes each vehicle's maneuver instead of sampling the mix.
    """
    spec = spec or IntersectionSpec()
    spec.validate()
    # separate streams: the noise level never changes the kinematics
    rng, noise_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    lane_free: dict[tuple[str, str], float] = {}
    leaders: dict[tuple[str, str], tuple] = {}
    t = 0.0
    out = []
    for i in range(n_vehicles):
        t += float(rng.exponential(spec.mean_headway_s))
        approach = spec.approaches[int(rng.integers(len(spec.approaches)))]
        maneuver = maneuvers[i] if maneuvers is not None else _choice(rng, spec.maneuver_mix)
        profile = _choice(rng, spec.profile_mix)
        lane = {"through": "middle", "right": "outer"}.get(maneuver, "inner")
        start = max(t, lane_free.get((approach, lane), 0.0))
        lane_free[(approach, lane)] = start + spec.min_lane_headway_s
        traj, record = _generate(
            spec, rng, f"v{i:05d}", int(round(start * FPS)), approach, maneuver, profile, leaders.get((approach, lane))
        )
        leaders[(approach, lane)] = record
        lane_free[(approach, lane)] = max(lane_free[(approach, lane)], record[0] / FPS + spec.min_lane_headway_s)
        if noise_std > 0:
            traj.x_ft = traj.x_ft + noise_rng.normal(0.0, noise_std, len(traj))
            traj.y_ft = traj.y_ft + noise_rng.normal(0.0, noise_std, len(traj))
        out.append(traj)
    return out
