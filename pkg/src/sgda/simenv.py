"""Deterministic 2-D four-way intersection.

World frame: intersection centre at the origin, right-hand traffic, the ego
approaches from the south heading north in the lane at ``x = +lane_width/2``.
Vehicles are discs; lateral motion is exact path following by arc length and
only the ego's longitudinal command is controlled.

One call to :func:`rollout` is the map ``(policy, env, seed) -> trajectory``.
Observation noise comes from a Philox stream keyed on the rollout seed and
indexed by step, so two policies rolled out under the same ``(env, seed)``
see the same noise at every step.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np

from .errors import ConfigError, InputError

SIDES = ("opposite", "left", "right")
MANEUVERS = ("straight", "left", "right")

# Travel direction of a vehicle arriving from each side, relative to an ego
# that heads north.
_ARRIVAL_HEADING = {
    "ego": (0.0, 1.0),
    "opposite": (0.0, -1.0),
    "left": (1.0, 0.0),
    "right": (-1.0, 0.0),
}

SIGNAL_NAMES = ("ego_ado_distance", "ego_speed", "brake_intensity")


@dataclass(frozen=True)
class EnvCondition:
    ego_init_distance: float
    ado_side: str
    ado_maneuver: str
    ado_init_distance: float
    ado_min_speed: float
    ado_max_speed: float

    def as_dict(self) -> dict:
        return {
            "ego_init_distance": self.ego_init_distance,
            "ado_side": self.ado_side,
            "ado_maneuver": self.ado_maneuver,
            "ado_init_distance": self.ado_init_distance,
            "ado_min_speed": self.ado_min_speed,
            "ado_max_speed": self.ado_max_speed,
        }


@dataclass(frozen=True)
class ParamRanges:
    """Uniform-prior ranges for the continuous scenario parameters.

    The two ado speed ranges are disjoint so that ``min <= max`` holds for
    every independent draw.
    """

    ego_init_distance: tuple[float, float] = (15.0, 45.0)
    ado_init_distance: tuple[float, float] = (10.0, 50.0)
    ado_min_speed: tuple[float, float] = (3.0, 9.0)
    ado_max_speed: tuple[float, float] = (9.0, 15.0)

    def __post_init__(self):
        for name in ("ego_init_distance", "ado_init_distance", "ado_min_speed", "ado_max_speed"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ConfigError(f"range {name} must satisfy lo < hi, got {(lo, hi)}")
        if self.ado_min_speed[1] > self.ado_max_speed[0]:
            raise ConfigError("ado_min_speed range must lie below ado_max_speed range")
        if self.ado_min_speed[0] < 0:
            raise ConfigError("ado speeds must be non-negative")


@dataclass(frozen=True)
class ScenarioGeometry:
    lane_width: float = 3.5
    ego_radius: float = 1.0
    ado_radius: float = 1.0
    # (xmin, ymin, xmax, ymax); default sits in the south-west corner, between
    # the ego approach and the approach of an ado arriving from the left.
    occluder: tuple[float, float, float, float] = (-30.0, -30.0, -4.5, -6.0)
    dt: float = 0.1
    max_steps: int = 300
    max_accel: float = 3.0
    max_decel: float = 8.0
    ado_accel: float = 2.5
    ado_rush_distance: float = 5.0  # m before the box where the ado starts accelerating
    ego_init_speed: float = 4.0
    ego_maneuver: str = "straight"
    goal_past_center: float = 20.0
    obs_pos_var: float = 2.0
    obs_speed_var: float = 1.0
    ranges: ParamRanges = field(default_factory=ParamRanges)
    ado_enabled: bool = True  # test hook: False parks the ado far away

    def __post_init__(self):
        if self.dt <= 0 or self.max_steps < 1:
            raise ConfigError("dt must be positive and max_steps >= 1")
        if self.ego_maneuver not in MANEUVERS:
            raise ConfigError(f"unknown ego maneuver {self.ego_maneuver!r}")
        x0, y0, x1, y1 = self.occluder
        if not (x0 < x1 and y0 < y1):
            raise ConfigError("occluder must be (xmin, ymin, xmax, ymax) with positive extent")

    @property
    def half_box(self) -> float:
        return self.lane_width

    @property
    def radius_sum(self) -> float:
        return self.ego_radius + self.ado_radius

    def validate_env(self, e: EnvCondition) -> None:
        r = self.ranges
        if e.ado_side not in SIDES:
            raise InputError(f"unknown ado side {e.ado_side!r}")
        if e.ado_maneuver not in MANEUVERS:
            raise InputError(f"unknown ado maneuver {e.ado_maneuver!r}")
        for name in ("ego_init_distance", "ado_init_distance", "ado_min_speed", "ado_max_speed"):
            lo, hi = getattr(r, name)
            v = getattr(e, name)
            if not (lo - 1e-9 <= v <= hi + 1e-9) or not math.isfinite(v):
                raise InputError(f"{name}={v} outside [{lo}, {hi}]")
        if e.ado_min_speed > e.ado_max_speed:
            raise InputError("ado_min_speed must not exceed ado_max_speed")


# --- paths -------------------------------------------------------------------


class Path:
    """Arc-length parameterised polyline."""

    def __init__(self, points: np.ndarray):
        pts = np.asarray(points, dtype=float)
        seg = np.diff(pts, axis=0)
        lengths = np.hypot(seg[:, 0], seg[:, 1])
        keep = np.concatenate([[True], lengths > 1e-12])
        self.points = pts[keep]
        seg = np.diff(self.points, axis=0)
        self.seg_len = np.hypot(seg[:, 0], seg[:, 1])
        self.cum = np.concatenate([[0.0], np.cumsum(self.seg_len)])
        self.headings = np.arctan2(seg[:, 1], seg[:, 0])
        self.length = float(self.cum[-1])

    def pose(self, s: float) -> tuple[float, float, float]:
        """``(x, y, heading)`` at arc length ``s`` (clamped to the path)."""
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self.cum, s, side="right")) - 1
        i = min(max(i, 0), len(self.seg_len) - 1)
        u = (s - self.cum[i]) / self.seg_len[i]
        p0, p1 = self.points[i], self.points[i + 1]
        return (float(p0[0] + u * (p1[0] - p0[0])), float(p0[1] + u * (p1[1] - p0[1])),
                float(self.headings[i]))


def maneuver_path(side: str, maneuver: str, start_distance: float, lane_width: float,
                  exit_length: float = 200.0, arc_points: int = 24) -> tuple[Path, float]:
    """Path for a vehicle arriving from ``side`` and performing ``maneuver``.

    Returns the path and the arc length at which the vehicle leaves the
    intersection box.
    """
    d = np.array(_ARRIVAL_HEADING[side])
    r = np.array([d[1], -d[0]])  # right-hand normal
    half = lane_width
    off = lane_width / 2.0
    start = -start_distance * d + off * r
    entry = -half * d + off * r
    pts = [start, entry]
    if maneuver == "straight":
        exit_pt = half * d + off * r
        pts.append(exit_pt)
        out_dir = d
    else:
        if maneuver == "right":
            radius = half - off
            center = entry + radius * r
            theta = np.linspace(0.0, math.pi / 2, arc_points)
            arc = center + radius * (-np.outer(np.cos(theta), r) + np.outer(np.sin(theta), d))
            out_dir = r
        else:
            radius = half + off
            center = entry - radius * r
            theta = np.linspace(0.0, math.pi / 2, arc_points)
            arc = center + radius * (np.outer(np.cos(theta), r) + np.outer(np.sin(theta), d))
            out_dir = -r
        pts.extend(arc[1:])
    pts = np.array(pts)
    box_exit = Path(pts).length
    pts = np.vstack([pts, pts[-1] + exit_length * out_dir])
    return Path(pts), box_exit


# --- visibility ----------------------------------------------------------------


def segment_hits_rect(p: Sequence[float], q: Sequence[float],
                      rect: Sequence[float]) -> bool:
    """Liang-Barsky test: does segment ``p -> q`` touch the rectangle?"""
    x0, y0, x1, y1 = rect
    dx, dy = q[0] - p[0], q[1] - p[1]
    t0, t1 = 0.0, 1.0
    for pk, qk in ((-dx, p[0] - x0), (dx, x1 - p[0]), (-dy, p[1] - y0), (dy, y1 - p[1])):
        if pk == 0.0:
            if qk < 0.0:
                return False
            continue
        t = qk / pk
        if pk < 0.0:
            if t > t1:
                return False
            t0 = max(t0, t)
        else:
            if t < t0:
                return False
            t1 = min(t1, t)
    return t0 <= t1


# --- state, trajectory ---------------------------------------------------------


@dataclass(frozen=True)
class State:
    t: float
    ego_x: float
    ego_y: float
    ego_heading: float
    ego_speed: float
    ego_accel: float
    ado_x: float
    ado_y: float
    ado_heading: float
    ado_speed: float
    ado_visible: bool
    ado_obs: Optional[tuple[float, float, float]]
    # consecutive steps the ado has been in view (0 when hidden); lets a
    # scripted controller model reaction latency without hidden memory
    ado_seen_steps: int = 0
    ego_progress: float = 0.0


TERMINATIONS = ("goal_reached", "collision", "timeout")


@dataclass
class Trajectory:
    states: list[State]
    actions: np.ndarray
    termination: str
    env: Optional[EnvCondition] = None
    seed: Optional[int] = None

    def __len__(self) -> int:
        return len(self.states)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(s, name) for s in self.states], dtype=float)

    def features(self, names: Sequence[str] = ("ego_x", "ego_y", "ego_speed")) -> np.ndarray:
        """Per-step feature matrix (used for DTW)."""
        return np.array([[getattr(s, n) for n in names] for s in self.states], dtype=float)

    def to_jsonl(self) -> str:
        """Header record (env, seed, termination) then one line per step."""
        head = {"env": self.env.as_dict() if self.env is not None else None,
                "seed": self.seed, "termination": self.termination, "steps": len(self)}
        lines = [json.dumps(head, sort_keys=True)]
        for st, a in zip(self.states, self.actions):
            row = dataclasses.asdict(st)
            row["action"] = float(a)
            lines.append(json.dumps(row, sort_keys=True))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "Trajectory":
        try:
            rows = [json.loads(line) for line in text.splitlines() if line.strip()]
            head, steps = rows[0], rows[1:]
            actions = np.array([r.pop("action") for r in steps], dtype=float)
            states = [State(**{**r, "ado_obs": tuple(r["ado_obs"]) if r["ado_obs"] else None})
                      for r in steps]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise InputError(f"malformed trajectory record: {exc}") from None
        env = EnvCondition(**head["env"]) if head.get("env") else None
        return cls(states, actions, head["termination"], env, head.get("seed"))


# --- dynamics ------------------------------------------------------------------


def ado_speed_command(speed: float, e: EnvCondition, geom: ScenarioGeometry,
                      to_box: float = 0.0) -> float:
    """Next ado speed.

    The ado approaches at its minimum speed and, from ``ado_rush_distance``
    before the box onward, accelerates at ``ado_accel`` up to its maximum.
    """
    if to_box > geom.ado_rush_distance:
        return max(e.ado_min_speed, min(speed, e.ado_max_speed))
    return min(e.ado_max_speed, max(e.ado_min_speed, speed + geom.ado_accel * geom.dt))


def noise_stream(seed: int, steps: int) -> np.ndarray:
    """Standard-normal draws, one row of 3 per step, keyed on ``seed``."""
    gen = np.random.Generator(np.random.Philox(key=int(seed) & (2**64 - 1)))
    return gen.standard_normal((steps, 3))


Policy = Any  # anything with ``act(state) -> float``


def rollout(policy: Policy, e: EnvCondition, geom: ScenarioGeometry, seed: int) -> Trajectory:
    """Run one episode; deterministic in ``(policy, e, geom, seed)``."""
    geom.validate_env(e)
    dt = geom.dt
    ego_path, _ = maneuver_path("ego", geom.ego_maneuver, e.ego_init_distance, geom.lane_width)
    goal = e.ego_init_distance + geom.goal_past_center
    ado_path, _ = maneuver_path(e.ado_side, e.ado_maneuver, e.ado_init_distance, geom.lane_width)
    ado_entry = e.ado_init_distance - geom.half_box
    noise = noise_stream(seed, geom.max_steps + 1)
    pos_sd = math.sqrt(geom.obs_pos_var)
    spd_sd = math.sqrt(geom.obs_speed_var)
    radius_sum = geom.radius_sum

    ego_s, ego_v, ego_a = 0.0, geom.ego_init_speed, 0.0
    ado_s, ado_v = 0.0, e.ado_min_speed
    seen = 0
    states: list[State] = []
    actions: list[float] = []
    termination = "timeout"
    for k in range(geom.max_steps + 1):
        ex, ey, eh = ego_path.pose(ego_s)
        if geom.ado_enabled:
            ax, ay, ah = ado_path.pose(ado_s)
        else:
            ax, ay, ah = 1e4, 1e4, 0.0
        visible = not segment_hits_rect((ex, ey), (ax, ay), geom.occluder)
        seen = seen + 1 if visible else 0
        obs = None
        if visible:
            n = noise[k]
            obs = (ax + pos_sd * n[0], ay + pos_sd * n[1], max(0.0, ado_v + spd_sd * n[2]))
        state = State(k * dt, ex, ey, eh, ego_v, ego_a, ax, ay, ah, ado_v, visible, obs,
                      seen, ego_s)
        action = min(1.0, max(-1.0, float(policy.act(state))))
        states.append(state)
        actions.append(action)

        gap = math.hypot(ex - ax, ey - ay) - radius_sum
        if gap <= 0.0:
            termination = "collision"
            break
        if ego_s >= goal:
            termination = "goal_reached"
            break
        if k == geom.max_steps:
            break

        # semi-implicit Euler: speed first, then position with the new speed
        ego_a = action * (geom.max_accel if action >= 0 else geom.max_decel)
        ego_v = max(0.0, ego_v + ego_a * dt)
        ego_s += ego_v * dt
        ado_v_next = ado_speed_command(ado_v, e, geom, ado_entry - ado_s)
        ado_s += ado_v_next * dt
        ado_v = ado_v_next
    return Trajectory(states, np.array(actions), termination, e, seed)


def extract_signals(traj: Trajectory, geom: ScenarioGeometry) -> dict[str, np.ndarray]:
    """Signal table for the driving properties."""
    if not isinstance(geom, ScenarioGeometry):
        raise ConfigError("extract_signals needs a ScenarioGeometry")
    if len(traj) == 0:
        raise InputError("empty trajectory")
    ex = traj.column("ego_x")
    ey = traj.column("ego_y")
    ax = traj.column("ado_x")
    ay = traj.column("ado_y")
    return {
        "ego_ado_distance": np.hypot(ex - ax, ey - ay) - geom.radius_sum,
        "ego_speed": traj.column("ego_speed"),
        "brake_intensity": np.clip(-np.asarray(traj.actions, dtype=float), 0.0, 1.0),
    }


# --- scripted expert ----------------------------------------------------------


@dataclass(frozen=True)
class ExpertParams:
    target_speed: float = 8.0
    cruise_gain: float = 0.5
    reaction_steps: int = 12      # steps an ado must be in view before it is reacted to
    gap: float = 3.0              # s; safety margin around the ado's box occupancy
    hysteresis: float = 0.5       # s; extra margin while already braking
    rest_gap: float = 2.0         # s; lead over the ado needed to pull away from a stop
    stop_margin: float = 0.0      # m before the box edge the ego aims to stop
    brake_gain: float = 1.0       # > 1 stops short of the target, < 1 overshoots
    panic_time: float = 1.2       # s; both vehicles this close to the box -> full brake
    min_speed_est: float = 1.0
    go_speed: float = 4.0         # m/s; speed assumed when estimating ego arrival
    fov_deg: float = 85.0         # ados further off the heading are not attended
    oncoming_range: float = 30.0  # m from the box within which oncoming traffic is attended


class ScriptedExpert:
    """Fallible rule-based driver.

    Cruises toward a target speed.  Once an ado has been in view for more
    than ``reaction_steps`` steps, lies inside the attended field of view
    and is on a lane heading into the intersection (or already inside it),
    the expert compares the time intervals both vehicles would occupy the
    intersection box; the ado's comes from straight-line extrapolation of
    the noisy observation.  Overlapping intervals trigger a comfort stop
    aimed at the stop line, and an imminent overlap a full brake.  A stopped
    expert pulls away once it expects to enter the box well ahead of the
    ado.  Occlusion, observation noise, latency, the limited field of view,
    late attention to oncoming traffic and an ado that speeds up near the
    box make it collide, halt or brake hard depending on the scenario.
    """

    def __init__(self, params: ExpertParams = ExpertParams(),
                 geom: ScenarioGeometry = ScenarioGeometry()):
        self.params = params
        self.geom = geom

    def __repr__(self) -> str:
        return f"ScriptedExpert({self.params!r})"

    def _cruise(self, v: float) -> float:
        p = self.params
        return min(1.0, max(0.0, p.cruise_gain * (p.target_speed - v)))

    def _approaching(self, x: float, y: float, heading: float) -> bool:
        """Ado ahead of the ego's lane and facing toward it."""
        half = self.geom.half_box
        if abs(y) > abs(x) and y > half + self.params.oncoming_range:
            return False  # oncoming arm beyond the attended range
        cx = self.geom.lane_width / 2.0
        return math.cos(heading) * (cx - x) + math.sin(heading) * (0.0 - y) > 0.0

    def act(self, state: State) -> float:
        p = self.params
        g = self.geom
        v = state.ego_speed
        cruise = self._cruise(v)
        if not state.ado_visible or state.ado_seen_steps <= p.reaction_steps:
            return cruise
        if state.ego_y >= 0.0:  # past the centre: commit
            return cruise
        ox, oy, ov = state.ado_obs
        bearing = math.atan2(oy - state.ego_y, ox - state.ego_x) - state.ego_heading
        bearing = abs((bearing + math.pi) % (2.0 * math.pi) - math.pi)
        if math.degrees(bearing) > p.fov_deg or not self._approaching(ox, oy, state.ado_heading):
            return cruise

        half = g.half_box
        clear = 2.0 * half + g.radius_sum
        to_center = -state.ego_y
        ego_v = max(v, p.go_speed)
        ego_in = max(to_center - half, 0.0) / ego_v
        ego_out = (to_center - half + clear) / ego_v
        ado_v = max(ov, p.min_speed_est)
        ado_d = math.hypot(ox, oy)
        ado_in = max(ado_d - half, 0.0) / ado_v
        ado_out = (max(ado_d - half, 0.0) + clear) / ado_v
        margin = p.gap + (p.hysteresis if state.ego_accel < 0.0 else 0.0)
        if ego_out < ado_in - margin or ego_in > ado_out + margin:
            return cruise
        if v < 0.05:  # waiting at the line: pull out if entering first
            return cruise if ego_in < ado_in - p.rest_gap else 0.0
        if v >= p.go_speed and max(ego_in, ado_in) <= p.panic_time:
            return -1.0
        to_stop = to_center - half - p.stop_margin
        if to_stop <= 0.0:  # over the stop line: clear the box
            return cruise
        need = v * v / (2.0 * to_stop)
        return -min(1.0, p.brake_gain * need / g.max_decel)
