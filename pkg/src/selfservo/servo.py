"""Uncalibrated visual servoing of the MRCP with an online Jacobian estimate.

The controller never sees kinematics or camera parameters. It probes the
plant to initialise a 3 x d Jacobian, then alternates damped-pseudoinverse
steps with Broyden rank-1 updates and a ridge refit over the last T
(action, displacement) pairs.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Protocol

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .sim import ParticleBinding, SimWorld, _sensor_noise, add_bleed

_SERVO_STREAM = 211


class TrackingLost(RuntimeError):
    """Every MRCP member has been dropped by the tracker."""


class Plant(Protocol):
    d: int

    def observe(self) -> NDArray[np.float64]:
        """Member positions (M, 3); rows of NaN for dropped members."""

    def apply(self, action: NDArray[np.float64]) -> None: ...


@dataclass(frozen=True)
class ServoConfig:
    eta: float = 0.2
    max_steps: int = 150
    success_radius: float = 5.0
    reinit_patience: int = 20
    improvement_px: float = 0.5
    probe_scale: float = 0.02
    damping: float = 1e-3
    history: int = 10
    batch_ridge: float = 1.0
    action_bound: float = 0.1

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.success_radius <= 0:
            raise ValueError("success_radius must be positive")
        if self.history < 1:
            raise ValueError("history must be >= 1")


@dataclass(frozen=True)
class Goal:
    """Target MRCP position (x_px, y_px, depth). NaN depth leaves depth free."""

    position: tuple
    tolerance: float | None = None

    def __post_init__(self):
        p = tuple(float(v) for v in self.position)
        if len(p) == 2:
            p = p + (math.nan,)
        if len(p) != 3 or not (math.isfinite(p[0]) and math.isfinite(p[1])):
            raise ValueError("goal needs finite x and y")
        object.__setattr__(self, "position", p)

    @property
    def array(self) -> NDArray[np.float64]:
        return np.array(self.position)


@dataclass
class JacobianEstimate:
    J: NDArray[np.float64]
    history: deque = field(default_factory=lambda: deque(maxlen=10))
    steps_since_improvement: int = 0
    best_distance_so_far: float = math.inf

    def copy(self) -> JacobianEstimate:
        return JacobianEstimate(self.J.copy(), deque(self.history, maxlen=self.history.maxlen),
                                self.steps_since_improvement, self.best_distance_so_far)


def mrcp_of(obs: NDArray[np.float64]) -> NDArray[np.float64] | None:
    """Mean of the surviving member positions, or None if all are lost."""
    alive = np.all(np.isfinite(obs), axis=1)
    if not alive.any():
        return None
    return obs[alive].mean(axis=0)


def mrcp_displacement(before: NDArray[np.float64], after: NDArray[np.float64]) -> NDArray[np.float64] | None:
    """MRCP displacement measured on members alive at both frames.

    Restricting to common survivors keeps a member dropout from showing up
    as a spurious jump of the averaged point.
    """
    common = np.all(np.isfinite(before), axis=1) & np.all(np.isfinite(after), axis=1)
    if not common.any():
        return None
    return (after[common] - before[common]).mean(axis=0)


def init_jacobian(plant: Plant, probe_scale: float, history: int = 10) -> JacobianEstimate:
    """Probe each control dimension with +eps then -eps; column i = response / eps.

    Raises:
        ValueError: for a non-positive probe scale.
        TrackingLost: if no member survives a probe.
    """
    if probe_scale <= 0:
        raise ValueError("probe_scale must be positive")
    J = np.zeros((3, plant.d))
    for i in range(plant.d):
        a = np.zeros(plant.d)
        a[i] = probe_scale
        before = plant.observe()
        plant.apply(a)
        after = plant.observe()
        ds = mrcp_displacement(before, after)
        if ds is None:
            raise TrackingLost("lost every MRCP member while probing")
        J[:, i] = ds / probe_scale
        plant.apply(-a)
    return JacobianEstimate(J, deque(maxlen=history))


def broyden_update(est: JacobianEstimate, action: ArrayLike, delta_s: ArrayLike) -> JacobianEstimate:
    """Rank-1 secant update; afterwards ``J @ action == delta_s``."""
    a = np.asarray(action, dtype=np.float64)
    ds = np.asarray(delta_s, dtype=np.float64)
    nrm = float(a @ a)
    if nrm == 0:
        raise ValueError("cannot update from a zero action")
    out = est.copy()
    out.J = est.J + np.outer(ds - est.J @ a, a) / nrm
    out.history.append((a.copy(), ds.copy()))
    return out


def batched_update(est: JacobianEstimate, ridge: float = 1.0) -> JacobianEstimate:
    """Ridge refit over the stored history, shrunk toward the current estimate.

    Minimises sum ||dS - J a||^2 + lam ||J - J_prev||_F^2 with
    ``lam = ridge * mean ||a||^2``, so ``ridge`` is the weight of the prior
    in units of one average sample.
    """
    if not est.history:
        raise ValueError("batched update needs at least one stored pair")
    A = np.array([a for a, _ in est.history])
    S = np.array([s for _, s in est.history])
    lam = ridge * float(np.mean(np.sum(A * A, axis=1)))
    out = est.copy()
    if lam > 0:
        d = A.shape[1]
        out.J = np.linalg.solve(A.T @ A + lam * np.eye(d), (S.T @ A + lam * est.J).T).T
    else:
        out.J = np.linalg.lstsq(A, S, rcond=None)[0].T
    return out


def servo_step(est: JacobianEstimate, s_star: ArrayLike, goal: Goal | ArrayLike,
               config: ServoConfig = ServoConfig()) -> NDArray[np.float64]:
    """eta * damped-pinv(J) @ (goal - s_star), clipped to ``action_bound`` in norm."""
    g = goal.array if isinstance(goal, Goal) else np.asarray(goal, dtype=np.float64)
    err = g - np.asarray(s_star, dtype=np.float64)
    rows = np.isfinite(err)
    J = est.J[rows]
    e = err[rows]
    s = float(np.linalg.norm(J))
    if s == 0 or not math.isfinite(s):
        return np.zeros(est.J.shape[1])
    # Work with J / ||J|| so a vanishing estimate cannot overflow the step.
    Jn = J / s
    if config.damping > 0:
        lam = config.damping / min(J.shape)
        direction = Jn.T @ np.linalg.solve(Jn @ Jn.T + lam * np.eye(J.shape[0]), e)
    else:
        direction = np.linalg.pinv(Jn) @ e
    norm = float(np.linalg.norm(direction))
    if norm == 0:
        return np.zeros(est.J.shape[1])
    if config.eta * norm > config.action_bound * s:
        return direction * (config.action_bound / norm)
    return config.eta * direction / s


@dataclass
class ReachOutcome:
    final_position: NDArray[np.float64] | None
    steps: int
    early_terminated: bool
    error_px: float
    error_cm: float | None
    reinits: int = 0
    status: str = "ok"
    estimate: JacobianEstimate | None = None
    trace: list[dict] = field(default_factory=list)

    @property
    def reached(self) -> bool:
        return self.early_terminated or self.error_px <= 0


def _distance(s, goal: Goal) -> float:
    return float(np.linalg.norm(np.asarray(s)[:2] - goal.array[:2]))


def _gt_error(plant, goal: Goal) -> float | None:
    fn = getattr(plant, "ground_truth_error_cm", None)
    return None if fn is None else fn(goal)


def reach(plant: Plant, est: JacobianEstimate | None, goal: Goal | ArrayLike,
          config: ServoConfig = ServoConfig(), t0: int = 0) -> ReachOutcome:
    """Servo the MRCP to ``goal`` until within the success radius or out of steps.

    Tracking loss is reported in the outcome (status ``"lost"``), not raised.
    """
    goal = goal if isinstance(goal, Goal) else Goal(tuple(goal))
    radius = goal.tolerance or config.success_radius
    obs = plant.observe()
    s = mrcp_of(obs)
    if s is None:
        return ReachOutcome(None, 0, False, math.inf, None, status="lost")
    reinits = 0
    trace: list[dict] = []
    try:
        if est is None:
            est = init_jacobian(plant, config.probe_scale, config.history)
            obs = plant.observe()
            s = mrcp_of(obs)
            if s is None:
                raise TrackingLost("lost every MRCP member after probing")
        est = est.copy()
        dist = _distance(s, goal)
        est.best_distance_so_far = dist
        est.steps_since_improvement = 0
        step = 0
        while dist > radius and step < config.max_steps:
            a = servo_step(est, s, goal, config)
            plant.apply(a)
            step += 1
            new_obs = plant.observe()
            s_new = mrcp_of(new_obs)
            if s_new is None:
                raise TrackingLost("lost every MRCP member")
            ds = mrcp_displacement(obs, new_obs)
            if ds is not None and np.any(a):
                est = batched_update(broyden_update(est, a, ds), config.batch_ridge)
            obs, s = new_obs, s_new
            dist = _distance(s, goal)
            if dist <= est.best_distance_so_far - config.improvement_px:
                est.best_distance_so_far = dist
                est.steps_since_improvement = 0
            else:
                est.steps_since_improvement += 1
            reinit = False
            if est.steps_since_improvement >= config.reinit_patience and dist > radius:
                best = est.best_distance_so_far
                est = init_jacobian(plant, config.probe_scale, config.history)
                est.best_distance_so_far = best
                reinits += 1
                reinit = True
                obs = plant.observe()
                s = mrcp_of(obs)
                if s is None:
                    raise TrackingLost("lost every MRCP member after probing")
                dist = _distance(s, goal)
            trace.append({
                "t": t0 + step,
                "s_star": s.tolist(),
                "goal": [None if not math.isfinite(v) else v for v in goal.position],
                "action": a.tolist(),
                "distance_px": dist,
                "gt_error_cm": _gt_error(plant, goal),
                "reinit": reinit,
            })
    except TrackingLost:
        return ReachOutcome(None if s is None else s, len(trace), False, math.inf, _gt_error(plant, goal),
                            reinits, "lost", est, trace)
    return ReachOutcome(s, step, dist <= radius, dist, _gt_error(plant, goal), reinits, "ok", est, trace)


def follow_trajectory(plant: Plant, est: JacobianEstimate | None, waypoints: list,
                      config: ServoConfig = ServoConfig()) -> list[ReachOutcome]:
    """Reach each waypoint in turn with a per-waypoint step budget.

    The budget is ``max_steps // len(waypoints)`` (at least 10); the loop
    moves on whether or not a waypoint was reached.
    """
    if not waypoints:
        raise ValueError("need at least one waypoint")
    goals = [w if isinstance(w, Goal) else Goal(tuple(w)) for w in waypoints]
    budget = config.max_steps if len(goals) == 1 else max(10, config.max_steps // len(goals))
    sub = replace(config, max_steps=budget)
    outcomes = []
    t = 0
    for g in goals:
        out = reach(plant, est, g, sub, t0=t)
        outcomes.append(out)
        t += len(out.trace)
        if out.status == "lost":
            break
        est = out.estimate
    return outcomes


def imitate(source_trajectory: ArrayLike, target_plant: Plant, est: JacobianEstimate | None,
            config: ServoConfig = ServoConfig(), scale: float = 1.0):
    """Replay a source robot's MRCP path with the target's MRCP.

    The source path is translated so its first point sits on the target's
    current MRCP (and optionally scaled about it). Returns the per-waypoint
    outcomes and the waypoints used.
    """
    src = np.asarray(source_trajectory, dtype=np.float64)
    if src.ndim != 2 or src.shape[0] == 0:
        raise ValueError("source trajectory must be a non-empty (K, 2|3) array")
    if not np.all(np.isfinite(src[:, :2])):
        raise ValueError("source trajectory must be finite")
    if src.shape[1] == 2:
        src = np.column_stack([src, np.full(len(src), np.nan)])
    start = mrcp_of(target_plant.observe())
    if start is None:
        raise TrackingLost("target MRCP is not tracked")
    waypoints = start + scale * (src - src[0])
    outcomes = follow_trajectory(target_plant, est, [Goal(tuple(w)) for w in waypoints], config)
    return outcomes, waypoints


def c_shape(center: ArrayLike, radius: float = 40.0, n: int = 12, start: ArrayLike | None = None,
            opening: float = math.radians(90)) -> NDArray[np.float64]:
    """``n`` image-space waypoints along a letter-C arc, depth left free.

    With ``start`` given, the arc is shifted so it begins there.
    """
    angles = np.linspace(-opening / 2, -(2 * math.pi - opening / 2), n)
    pts = np.column_stack([np.cos(angles), -np.sin(angles)]) * radius
    pts = pts + np.asarray(center, dtype=float)[:2]
    if start is not None:
        pts = pts - pts[0] + np.asarray(start, dtype=float)[:2]
    return np.column_stack([pts, np.full(n, np.nan)])


# --------------------------------------------------------------------------
# Plants


class LinearPlant:
    """S(t+1) = S(t) + J a (+ Gaussian measurement noise). One member."""

    def __init__(self, J: ArrayLike, start: ArrayLike = (0.0, 0.0, 0.0), noise_std: float = 0.0,
                 seed: int = 0, ignore_actions: bool = False):
        self.J = np.asarray(J, dtype=np.float64)
        self.d = self.J.shape[1]
        self.state = np.asarray(start, dtype=np.float64).copy()
        self.noise_std = noise_std
        self.rng = np.random.default_rng(seed)
        self.ignore_actions = ignore_actions
        self.n_applied = 0

    def apply(self, action) -> None:
        self.n_applied += 1
        if not self.ignore_actions:
            self.state = self.state + self.J @ np.asarray(action, dtype=np.float64)

    def observe(self) -> NDArray[np.float64]:
        return (self.state + self.noise_std * self.rng.standard_normal(3))[None]


class SimPlant:
    """The controlled arm of a SimWorld, seen through tracked MRCP members."""

    def __init__(self, world: SimWorld, members: list[ParticleBinding], stream: int = 0):
        self.world = world
        self.members = list(members)
        self.d = world.d
        self.alive = np.ones(len(self.members), dtype=bool)
        self.rng = np.random.default_rng([world.seed, _SERVO_STREAM, stream])
        self.loose_rng = np.random.default_rng([world.seed, _SERVO_STREAM, stream, 1])
        self._last_t = world.t

    def apply(self, action) -> None:
        self.world.step(action)

    def observe(self) -> NDArray[np.float64]:
        w = self.world
        cam, trk = w.config.camera, w.config.tracker
        obs = cam.project(w.world_positions(self.members, loose_rng=self.loose_rng), w.shake)
        obs = add_bleed(w.config, self.members, obs, w.joint_states, w.prev_joint_states)
        if w.t > self._last_t:
            self.alive &= self.rng.random(len(self.members)) >= trk.drop_prob_per_step
            self._last_t = w.t
        self.alive &= cam.in_frustum(obs)
        obs = obs + _sensor_noise(self.rng, len(self.members), cam, trk)
        obs[~self.alive] = np.nan
        return obs

    def tip_world(self) -> NDArray[np.float64]:
        return self.world.ground_truth_ee()[0]

    def member_world_mean(self) -> NDArray[np.float64]:
        """Noise-free world position of the MRCP (mean over all members)."""
        return self.world.rigid_positions(self.members).mean(axis=0)

    def ground_truth_error_cm(self, goal: Goal) -> float | None:
        """3-D distance between the true MRCP and the goal; None if depth is free."""
        g = goal.array
        if not np.isfinite(g[2]):
            return None
        target = self.world.config.camera.unproject(g, np.zeros(2))
        return float(np.linalg.norm(self.member_world_mean() - target))


def write_trace(path: str | Path, records: list[dict]) -> None:
    Path(path).write_text("".join(json.dumps(r) + "\n" for r in records))


def read_trace(path: str | Path) -> list[dict]:
    return [json.loads(l) for l in Path(path).read_text().splitlines() if l.strip()]
