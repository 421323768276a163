"""Motion descriptions: contact plans, motion patterns, swing references.

All times are snapped to the plan's ``dt`` grid.  A phase owns the half-open
interval ``[t_start, t_end)``; the final phase of every effector additionally
owns the end time ``T``.  A foot's force acts on the step interval
``[t_k, t_k+1)`` iff the foot is in stance at ``t_k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from quadplan.model import N_LEGS, RobotModel, com_of, nominal_state

DT = 0.01
WALK_ORDER = (0, 3, 1, 2)  # FL, HR, FR, HL
WALK_RADIUS = 0.08
JUMP_RADIUS = 0.15


@dataclass
class ContactPhase:
    effector: int
    t_start: float
    t_end: float
    in_stance: bool
    # stance position, or the touchdown target for swing phases
    stance_pos: np.ndarray


@dataclass
class MotionPattern:
    index: int
    t_start: float
    t_end: float
    frame: tuple  # (x, y, yaw) of the ground-plane local frame
    is_last: bool


@dataclass
class WalkTiming:
    stance: float = 0.15
    swing: float = 0.2
    initial_stance: float = 0.0
    final_stance: float = 0.1

    @property
    def cycle(self) -> float:
        return 4.0 * (self.stance + self.swing)


@dataclass
class JumpTiming:
    push: float = 0.8
    flight: float = 0.2
    initial_stance: float = 0.5
    final_stance: float = 0.5


@dataclass(eq=False)
class MotionDescription:
    plan: list  # 4 lists of ContactPhase, FL FR HL HR
    patterns: list
    com_via_points: list = field(default_factory=list)  # [(t, xyz)]
    dt: float = DT
    horizon: int = 0
    swing_height: float = 0.05
    kind: str = "custom"
    start: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        self._cache = None

    @property
    def duration(self) -> float:
        return self.horizon * self.dt

    def step_of(self, t: float) -> int:
        return int(round(t / self.dt))

    def _tables(self):
        if self._cache is not None:
            return self._cache
        n = self.horizon + 1
        stance = np.zeros((n, N_LEGS), dtype=bool)
        location = np.zeros((n, N_LEGS, 3))
        touchdown = np.zeros((n, N_LEGS))
        phase_idx = np.zeros((n, N_LEGS), dtype=int)
        for e, phases in enumerate(self.plan):
            for j, ph in enumerate(phases):
                k0 = self.step_of(ph.t_start)
                k1 = self.step_of(ph.t_end)
                if j == len(phases) - 1:
                    k1 = n
                stance[k0:k1, e] = ph.in_stance
                location[k0:k1, e] = ph.stance_pos
                phase_idx[k0:k1, e] = j
                if not ph.in_stance:
                    end = self.step_of(ph.t_end)
                    touchdown[k0:k1, e] = (end - np.arange(k0, k1)) * self.dt
        pattern_idx = np.zeros(n, dtype=int)
        for j, pat in enumerate(self.patterns):
            k0 = self.step_of(pat.t_start)
            k1 = n if j == len(self.patterns) - 1 else self.step_of(pat.t_end)
            pattern_idx[k0:k1] = j
        self._cache = dict(stance=stance, location=location, touchdown=touchdown,
                           phase_idx=phase_idx, pattern_idx=pattern_idx)
        return self._cache

    def stance_table(self) -> np.ndarray:
        """(horizon+1, 4) stance flags at each grid time."""
        return self._tables()["stance"]

    def location_table(self) -> np.ndarray:
        """(horizon+1, 4, 3) stance position or upcoming touchdown target."""
        return self._tables()["location"]

    def touchdown_table(self) -> np.ndarray:
        """(horizon+1, 4) seconds until the next touchdown, 0 in stance."""
        return self._tables()["touchdown"]

    def pattern_at_step(self, k: int) -> MotionPattern:
        return self.patterns[self._tables()["pattern_idx"][k]]

    def foot_reference(self, e: int, t: float):
        """Planned position and velocity of effector ``e`` at time ``t``."""
        k = min(max(self.step_of(t), 0), self.horizon)
        phases = self.plan[e]
        j = self._tables()["phase_idx"][k, e]
        ph = phases[j]
        if ph.in_stance:
            return ph.stance_pos.copy(), np.zeros(3)
        prev = phases[j - 1].stance_pos if j > 0 else ph.stance_pos
        return swing_position(prev, ph.stance_pos, ph.t_start, ph.t_end, t, self.swing_height)

    def via_point_steps(self):
        return [(self.step_of(t), np.asarray(p, dtype=float)) for t, p in self.com_via_points]


def swing_position(start_pos, end_pos, t_start, t_end, t, apex=0.05):
    """Raised-cosine swing from ``start_pos`` to ``end_pos`` with apex height.

    Horizontal motion and the baseline height follow ``(1 - cos(pi s)) / 2``;
    the apex bump is ``apex * (1 - cos(2 pi s)) / 2``.  Both have zero rate at
    the ends, so position and velocity are continuous with the stances.
    """
    p0 = np.asarray(start_pos, dtype=float)
    p1 = np.asarray(end_pos, dtype=float)
    dur = t_end - t_start
    s = min(max((t - t_start) / dur, 0.0), 1.0)
    blend = 0.5 * (1.0 - math.cos(math.pi * s))
    dblend = 0.5 * math.pi * math.sin(math.pi * s) / dur
    bump = 0.5 * apex * (1.0 - math.cos(2.0 * math.pi * s))
    dbump = apex * math.pi * math.sin(2.0 * math.pi * s) / dur
    pos = p0 + (p1 - p0) * blend
    vel = (p1 - p0) * dblend
    pos[2] += bump
    vel[2] += dbump
    return pos, vel


def _rot2(yaw):
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s], [s, c]])


def to_local_point(frame, p):
    x, y, yaw = frame
    p = np.array(p, dtype=float)
    xy = (p[..., :2] - (x, y)) @ _rot2(yaw)
    p[..., :2] = xy
    return p


def to_world_point(frame, p):
    x, y, yaw = frame
    p = np.array(p, dtype=float)
    p[..., :2] = p[..., :2] @ _rot2(yaw).T + (x, y)
    return p


def to_local_vector(frame, v):
    v = np.array(v, dtype=float)
    v[..., :2] = v[..., :2] @ _rot2(frame[2])
    return v


def to_world_vector(frame, v):
    v = np.array(v, dtype=float)
    v[..., :2] = v[..., :2] @ _rot2(frame[2]).T
    return v


def sample_directions(rng: np.random.Generator, n: int, radius: float) -> np.ndarray:
    """``n`` points uniform on the disk of ``radius``."""
    r = radius * np.sqrt(rng.random(n))
    th = 2.0 * math.pi * rng.random(n)
    return np.stack([r * np.cos(th), r * np.sin(th)], axis=1)


def _snap(t, dt):
    return round(t / dt) * dt


class _PlanBuilder:
    def __init__(self, footholds, dt):
        self.dt = dt
        self.feet = np.array(footholds, dtype=float)
        self.phases = [[] for _ in range(N_LEGS)]
        self.last_change = [0.0] * N_LEGS

    def swing(self, e, t0, t1, target):
        t0, t1 = _snap(t0, self.dt), _snap(t1, self.dt)
        if t0 > self.last_change[e]:
            self.phases[e].append(ContactPhase(e, self.last_change[e], t0, True, self.feet[e].copy()))
        self.feet[e] = target
        self.phases[e].append(ContactPhase(e, t0, t1, False, self.feet[e].copy()))
        self.last_change[e] = t1

    def finish(self, t_end):
        t_end = _snap(t_end, self.dt)
        for e in range(N_LEGS):
            if t_end > self.last_change[e]:
                self.phases[e].append(ContactPhase(e, self.last_change[e], t_end, True, self.feet[e].copy()))
        return self.phases


def _com_height(model: RobotModel) -> float:
    return float(com_of(model, nominal_state(model))[0][2])


def _world_footholds(model, start):
    x, y, yaw = start
    return to_world_point((x, y, yaw), model.nominal_footholds())


def _finish(model, builder, pattern_starts, frames, t_end, via, dt, kind, start):
    phases = builder.finish(t_end)
    t_end = _snap(t_end, dt)
    patterns = []
    for j, (t0, fr) in enumerate(zip(pattern_starts, frames)):
        t1 = pattern_starts[j + 1] if j + 1 < len(pattern_starts) else t_end
        patterns.append(MotionPattern(j, _snap(t0, dt), _snap(t1, dt), tuple(float(v) for v in fr),
                                      j == len(pattern_starts) - 1))
    via = [(_snap(t, dt), np.asarray(p, dtype=float)) for t, p in via]
    return MotionDescription(plan=phases, patterns=patterns, com_via_points=via, dt=dt,
                             horizon=int(round(t_end / dt)), kind=kind,
                             start=tuple(float(v) for v in start))


def gen_standing(model: RobotModel, duration: float = 2.0, start=(0.0, 0.0, 0.0), dt: float = DT):
    feet = _world_footholds(model, start)
    b = _PlanBuilder(feet, dt)
    z = _com_height(model)
    c = np.array([start[0], start[1], z])
    via = [(0.0, c), (duration, c)]
    return _finish(model, b, [0.0], [start], duration, via, dt, "stand", start)


def gen_static_walk(model: RobotModel, n_cycles: int, directions, timing: WalkTiming | None = None,
                    start=(0.0, 0.0, 0.0), max_step_len: float = WALK_RADIUS,
                    via_blend: float = 0.5, dt: float = DT) -> MotionDescription:
    """Static walk: per cycle the legs swing one at a time in FL, HR, FR, HL order.

    ``directions`` holds one planar displacement per cycle, expressed in the
    start frame.  Each cycle is its own motion pattern whose frame is the
    planned base ground pose (foothold centre, start yaw) at cycle start.
    """
    timing = timing or WalkTiming()
    directions = np.asarray(directions, dtype=float).reshape(n_cycles, 2)
    lengths = np.linalg.norm(directions, axis=1)
    if n_cycles < 1:
        raise ValueError("n_cycles must be at least 1")
    if np.any(lengths > max_step_len + 1e-12):
        j = int(np.argmax(lengths))
        raise ValueError(f"step direction {j} has length {lengths[j]:.4f} m > max_step_len {max_step_len} m")
    yaw = start[2]
    rot = _rot2(yaw)
    b = _PlanBuilder(_world_footholds(model, start), dt)
    z = _com_height(model)
    center = np.array(start[:2], dtype=float)
    via = [(0.0, np.array([center[0], center[1], z]))]
    pattern_starts, frames = [], []
    t = timing.initial_stance
    for j in range(n_cycles):
        pattern_starts.append(0.0 if j == 0 else t)
        frames.append((center[0], center[1], yaw))
        d = rot @ directions[j]
        for e in WALK_ORDER:
            t_sw = t + timing.stance
            others = [o for o in range(N_LEGS) if o != e]
            tri = b.feet[others, :2].mean(axis=0)
            mid = b.feet[:, :2].mean(axis=0)
            target = mid + via_blend * (tri - mid)
            via.append((t_sw + 0.5 * timing.swing, np.array([target[0], target[1], z])))
            new = b.feet[e].copy()
            new[:2] += d
            b.swing(e, t_sw, t_sw + timing.swing, new)
            t = t_sw + timing.swing
        center = center + d
    t_end = t + timing.final_stance
    via.append((t_end, np.array([center[0], center[1], z])))
    return _finish(model, b, pattern_starts, frames, t_end, via, dt, "walk", start)


def gen_jump(model: RobotModel, n_jumps: int, directions, timing: JumpTiming | None = None,
             start=(0.0, 0.0, 0.0), max_jump_len: float = JUMP_RADIUS,
             ballistic_bound: float = 1.0, dt: float = DT) -> MotionDescription:
    """Jumps: four-foot push, flight with no contacts, landing at displaced footholds."""
    timing = timing or JumpTiming()
    directions = np.asarray(directions, dtype=float).reshape(n_jumps, 2)
    if n_jumps < 1:
        raise ValueError("n_jumps must be at least 1")
    lengths = np.linalg.norm(directions, axis=1)
    reach = model.gravity * timing.flight ** 2 * ballistic_bound
    for j, dist in enumerate(lengths):
        if dist > max_jump_len + 1e-12:
            raise ValueError(f"jump {j} length {dist:.4f} m > max_jump_len {max_jump_len} m")
        if dist > reach:
            raise ValueError(f"jump {j} length {dist:.4f} m not ballistically reachable "
                             f"with flight {timing.flight} s (bound {reach:.4f} m)")
    yaw = start[2]
    rot = _rot2(yaw)
    b = _PlanBuilder(_world_footholds(model, start), dt)
    z = _com_height(model)
    center = np.array(start[:2], dtype=float)
    via = [(0.0, np.array([center[0], center[1], z]))]
    pattern_starts, frames = [], []
    t = timing.initial_stance
    for j in range(n_jumps):
        pattern_starts.append(0.0 if j == 0 else t)
        frames.append((center[0], center[1], yaw))
        via.append((t + 0.5 * timing.push, np.array([center[0], center[1], z])))
        d = rot @ directions[j]
        t_off = t + timing.push
        for e in range(N_LEGS):
            new = b.feet[e].copy()
            new[:2] += d
            b.swing(e, t_off, t_off + timing.flight, new)
        t = t_off + timing.flight
        center = center + d
    t_end = t + timing.final_stance
    via.append((t_end, np.array([center[0], center[1], z])))
    return _finish(model, b, pattern_starts, frames, t_end, via, dt, "jump", start)


def gen_marathon(model: RobotModel, n_steps: int = 50, rng: np.random.Generator | None = None,
                 timing: WalkTiming | None = None, start=(0.0, 0.0, 0.0)) -> MotionDescription:
    """Long static walk of ``n_steps`` randomly directed cycles."""
    rng = rng if rng is not None else np.random.default_rng(0)
    dirs = sample_directions(rng, n_steps, WALK_RADIUS)
    desc = gen_static_walk(model, n_steps, dirs, timing=timing, start=start)
    desc.kind = "marathon"
    return desc


def random_walk(model, rng, n_cycles=3, timing=None):
    return gen_static_walk(model, n_cycles, sample_directions(rng, n_cycles, WALK_RADIUS), timing=timing)


def random_jumps(model, rng, n_jumps=3, timing=None):
    return gen_jump(model, n_jumps, sample_directions(rng, n_jumps, JUMP_RADIUS), timing=timing)
