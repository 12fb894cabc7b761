"""End-to-end simulated runs: self-recognition followed by servoing tasks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import NDArray

from .selfrec import ResponsivenessReport, SelfRecConfig, identify
from .servo import Goal, ReachOutcome, ServoConfig, SimPlant, c_shape, follow_trajectory, imitate, mrcp_of, reach
from .sim import ExplorationLog, SimWorld, WorldConfig, default_world_config, run_exploration

_GOAL_STREAM = 307


@dataclass
class Session:
    """A world after exploration and self-recognition, ready to servo."""

    world: SimWorld
    log: ExplorationLog
    report: ResponsivenessReport

    def plant(self, stream: int = 0) -> SimPlant:
        return SimPlant(self.world, self.report.member_bindings, stream)

    def reset_arm(self, q=None) -> None:
        ci = self.world.controlled_index
        home = self.world.config.arms[ci].home if q is None else q
        self.world.joint_states[ci] = np.array(home, dtype=np.float64)
        self.world.prev_joint_states = [s.copy() for s in self.world.joint_states]


def recognize(config: WorldConfig, seed: int, n_actions: int = 100,
              selfrec: SelfRecConfig | None = None) -> Session:
    """Explore with random actions and identify the MRCP."""
    world = SimWorld(config, seed)
    log = run_exploration(world, n_actions)
    cfg = selfrec if selfrec is not None else SelfRecConfig(seed=seed)
    report = identify(log, cfg, world)
    return Session(world, log, report)


def _member_mean(session: Session, q) -> NDArray[np.float64]:
    joints = list(session.world.joint_states)
    joints[session.world.controlled_index] = np.asarray(q, dtype=np.float64)
    return session.world.rigid_positions(session.report.member_bindings, joints).mean(axis=0)


def reaching_goals(session: Session, n_goals: int = 9, distance_cm: float = 15.0,
                   seed: int = 0, max_tries: int = 200) -> list[Goal]:
    """Goals whose true MRCP lies ``distance_cm`` from the home MRCP.

    Each goal is the projection of the MRCP at a joint configuration found by
    scaling a random joint-space direction until the MRCP has moved the
    requested distance. Configurations outside the joint limits or the image
    are rejected.
    """
    world = session.world
    arm = world.config.controlled_arm
    cam = world.config.camera
    lim = arm.joint_limits
    q0 = np.array(arm.home, dtype=np.float64)
    p0 = _member_mean(session, q0)
    rng = np.random.default_rng([seed, _GOAL_STREAM])
    goals: list[Goal] = []
    for _ in range(max_tries):
        if len(goals) == n_goals:
            break
        u = rng.standard_normal(arm.d)
        u /= np.linalg.norm(u)
        lo, hi = 0.0, 3.0
        if np.linalg.norm(_member_mean(session, q0 + hi * u) - p0) < distance_cm:
            continue
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            if np.linalg.norm(_member_mean(session, q0 + mid * u) - p0) < distance_cm:
                lo = mid
            else:
                hi = mid
        q = q0 + hi * u
        if np.any(q < lim[:, 0]) or np.any(q > lim[:, 1]):
            continue
        img = cam.project(_member_mean(session, q), np.zeros(2))
        if not cam.in_frustum(img):
            continue
        goals.append(Goal(tuple(img.tolist())))
    if len(goals) < n_goals:
        raise RuntimeError(f"found only {len(goals)} reachable goals")
    return goals


@dataclass
class ReachingSummary:
    outcomes: list[ReachOutcome]
    goals: list[Goal]
    trace: list[dict] = field(default_factory=list)

    @property
    def errors_cm(self) -> list[float]:
        return [math.inf if o.error_cm is None else o.error_cm for o in self.outcomes]

    @property
    def median_error_cm(self) -> float:
        return float(np.median(self.errors_cm))

    @property
    def etr_percent(self) -> float:
        return 100.0 * float(np.mean([o.early_terminated for o in self.outcomes]))

    @property
    def status(self) -> str:
        return "lost" if any(o.status == "lost" for o in self.outcomes) else "ok"

    def to_dict(self) -> dict:
        return {"median_error_cm": self.median_error_cm, "etr_percent": self.etr_percent,
                "status": self.status}


def reaching_suite(session: Session, n_goals: int = 9, distance_cm: float = 15.0,
                   config: ServoConfig = ServoConfig()) -> ReachingSummary:
    """Reach each goal from the home pose with a fresh Jacobian."""
    goals = reaching_goals(session, n_goals, distance_cm, seed=session.world.seed)
    outcomes, trace = [], []
    for gi, goal in enumerate(goals):
        session.reset_arm()
        out = reach(session.plant(stream=gi), None, goal, config)
        for rec in out.trace:
            trace.append({"goal_index": gi} | rec)
        outcomes.append(out)
    return ReachingSummary(outcomes, goals, trace)


@dataclass
class PathSummary:
    outcomes: list[ReachOutcome]
    waypoints: NDArray[np.float64]

    @property
    def reached_fraction(self) -> float:
        return float(np.mean([o.early_terminated for o in self.outcomes])) if self.outcomes else 0.0

    def to_dict(self) -> dict:
        return {"waypoints": len(self.waypoints), "reached_fraction": self.reached_fraction,
                "status": "lost" if any(o.status == "lost" for o in self.outcomes) else "ok"}


def follow_c(session: Session, radius: float = 40.0, n: int = 12,
             config: ServoConfig = ServoConfig()) -> PathSummary:
    """Trace a letter-C arc starting at the current MRCP."""
    session.reset_arm()
    plant = session.plant(stream=1000)
    start = mrcp_of(plant.observe())
    waypoints = c_shape(start, radius, n, start=start)
    outcomes = follow_trajectory(plant, None, [Goal(tuple(w)) for w in waypoints], config)
    return PathSummary(outcomes, waypoints)


def record_source_path(session: Session, config: ServoConfig = ServoConfig(),
                       radius: float = 40.0, n: int = 12) -> NDArray[np.float64]:
    """Observed MRCP positions of a source robot after each C waypoint."""
    summary = follow_c(session, radius, n, config)
    return np.array([o.final_position[:2] for o in summary.outcomes if o.final_position is not None])


def imitation(source: Session, target: Session, config: ServoConfig = ServoConfig(),
              scale: float = 1.0) -> PathSummary:
    """Have ``target`` retrace the MRCP path recorded on ``source``."""
    path = record_source_path(source, config)
    target.reset_arm()
    outcomes, waypoints = imitate(path, target.plant(stream=2000), None, config, scale)
    return PathSummary(outcomes, waypoints)


def translated_config(config: WorldConfig, offset=(4.0, 3.0, 0.0), yaw: float = 0.3) -> WorldConfig:
    """Copy of ``config`` with the controlled arm's base moved and rotated."""
    ci = config.controlled_index
    arm = config.arms[ci]
    moved = replace(arm, base_position=tuple(np.add(arm.base_position, offset).tolist()),
                    base_yaw=arm.base_yaw + yaw)
    arms = list(config.arms)
    arms[ci] = moved
    return replace(config, arms=arms)


def default_session(seed: int, tool: str = "none", noise: str = "default", **kw) -> Session:
    return recognize(default_world_config(noise, tool), seed, **kw)
