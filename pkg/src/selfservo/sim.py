"""Seedable kinematic stand-in for the arm, camera and point tracker.

World units are centimetres. Observations are camera coordinates
``(x_px, y_px, depth_cm)``. Every random draw comes from a named stream
spawned off the world seed, so a (config, seed) pair fully determines an
exploration log.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray

# Named random streams; order is part of the determinism contract.
_STREAMS = ("particles", "explore", "actuation", "decoy", "tracker", "shake", "loose", "broken")
_REPLAY_STREAM = 101
_AXIS_SAMPLES = 48


def _unit(v) -> NDArray[np.float64]:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("zero-length direction")
    return v / n


def axis_angle(axis: ArrayLike, angle: float) -> NDArray[np.float64]:
    """Rotation matrix for ``angle`` radians about ``axis`` (Rodrigues)."""
    k = _unit(axis)
    K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + math.sin(angle) * K + (1.0 - math.cos(angle)) * (K @ K)


@dataclass
class Link:
    """One rigid segment. ``joint_axis`` None means a fixed (unactuated) link."""

    length: float
    direction: tuple = (1.0, 0.0, 0.0)
    joint_axis: tuple | None = (0.0, 0.0, 1.0)
    limits: tuple = (-math.pi, math.pi)
    radius: float = 1.0
    # Per-frame i.i.d. jitter (cm) on particles of this link: a loosely held object.
    loose_std: float = 0.0

    def __post_init__(self):
        if self.length <= 0:
            raise ValueError("link length must be positive")
        if self.joint_axis is not None and not self.limits[0] < self.limits[1]:
            raise ValueError("joint limits must satisfy min < max")


@dataclass
class ArmModel:
    links: list[Link]
    home: tuple = ()
    base_position: tuple = (0.0, 0.0, 0.0)
    base_yaw: float = 0.0
    actuation_noise_std: float = 0.0
    broken_link_index: int | None = None
    broken_std: float = 0.05
    controlled: bool = True
    decoy_action_scale: float = 0.05

    def __post_init__(self):
        self.links = [l if isinstance(l, Link) else Link(**l) for l in self.links]
        if self.d < 1:
            raise ValueError("an arm needs at least one actuated joint")
        if not self.home:
            self.home = tuple(0.0 for _ in range(self.d))
        if len(self.home) != self.d:
            raise ValueError("home pose must have one angle per joint")
        if self.broken_link_index is not None and not 0 <= self.broken_link_index < self.d:
            raise ValueError("broken_link_index must name an actuated joint")

    @property
    def d(self) -> int:
        return sum(l.joint_axis is not None for l in self.links)

    @property
    def link_lengths(self) -> list[float]:
        return [l.length for l in self.links]

    @property
    def joint_axes(self) -> list[tuple]:
        return [l.joint_axis for l in self.links if l.joint_axis is not None]

    @property
    def joint_limits(self) -> NDArray[np.float64]:
        return np.array([l.limits for l in self.links if l.joint_axis is not None], dtype=float)

    def region_links(self) -> list[int]:
        """Indices of the last actuated link and any fixed links after it."""
        last = max(i for i, l in enumerate(self.links) if l.joint_axis is not None)
        return list(range(last, len(self.links)))

    def frames(self, q: ArrayLike):
        """Per-link (rotation, origin) in the world frame, plus the chain tip."""
        q = np.asarray(q, dtype=np.float64)
        R = axis_angle((0, 0, 1), self.base_yaw)
        p = np.asarray(self.base_position, dtype=np.float64)
        rots, origins = [], []
        j = 0
        for link in self.links:
            if link.joint_axis is not None:
                R = R @ axis_angle(link.joint_axis, q[j])
                j += 1
            rots.append(R)
            origins.append(p)
            p = p + R @ (_unit(link.direction) * link.length)
        return np.array(rots), np.array(origins), p

    def tip(self, q: ArrayLike) -> NDArray[np.float64]:
        return self.frames(q)[2]


@dataclass
class CameraModel:
    """Pinhole camera. ``rotation`` maps world vectors into the camera frame."""

    focal_px: float = 500.0
    principal: tuple = (320.0, 240.0)
    width: int = 640
    height: int = 480
    position: tuple = (9.0, -55.0, 9.0)
    rotation: tuple = ((1.0, 0.0, 0.0), (0.0, 0.0, -1.0), (0.0, 1.0, 0.0))
    pixel_noise_std: float = 0.0
    depth_noise_std: float = 0.0
    shake_amplitude: float = 0.0

    def project(self, points: ArrayLike, shake: ArrayLike = (0.0, 0.0)) -> NDArray[np.float64]:
        """World points (..., 3) to (x_px, y_px, depth_cm)."""
        pts = np.asarray(points, dtype=np.float64)
        cam = (pts - np.asarray(self.position)) @ np.asarray(self.rotation).T
        z = cam[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.focal_px * cam[..., 0] / z + self.principal[0] + shake[0]
            v = self.focal_px * cam[..., 1] / z + self.principal[1] + shake[1]
        return np.stack([u, v, z], axis=-1)

    def unproject(self, obs: ArrayLike, shake: ArrayLike = (0.0, 0.0)) -> NDArray[np.float64]:
        obs = np.asarray(obs, dtype=np.float64)
        z = obs[..., 2]
        x = (obs[..., 0] - self.principal[0] - shake[0]) * z / self.focal_px
        y = (obs[..., 1] - self.principal[1] - shake[1]) * z / self.focal_px
        cam = np.stack([x, y, z], axis=-1)
        return cam @ np.asarray(self.rotation) + np.asarray(self.position)

    def in_frustum(self, obs: NDArray[np.float64]) -> NDArray[np.bool_]:
        with np.errstate(invalid="ignore"):
            return ((obs[..., 2] > 0) & (obs[..., 0] >= 0) & (obs[..., 0] < self.width)
                    & (obs[..., 1] >= 0) & (obs[..., 1] < self.height))


@dataclass
class TrackerModel:
    jitter_std: float = 0.0
    depth_jitter_std: float = 0.0
    drop_prob_per_step: float = 0.0
    seed: int = 0
    # Fraction of a nearby arm edge's per-frame image motion that leaks into a
    # background track (a tracking window straddling a moving boundary).
    bleed: float = 0.0
    bleed_radius_px: float = 30.0

    def __post_init__(self):
        if not 0 <= self.drop_prob_per_step < 1:
            raise ValueError("drop_prob_per_step must lie in [0, 1)")
        if not 0 <= self.bleed <= 1:
            raise ValueError("bleed must lie in [0, 1]")
        if self.bleed_radius_px <= 0:
            raise ValueError("bleed_radius_px must be positive")


@dataclass(frozen=True)
class ParticleBinding:
    """A tracked point: rigidly attached to ``(arm, link)`` at ``offset`` in the
    link frame, or, when ``arm`` is None, a fixed world point ``offset``."""

    id: int
    arm: int | None
    link: int | None
    offset: tuple

    @property
    def is_background(self) -> bool:
        return self.arm is None

    @classmethod
    def from_dict(cls, d: dict) -> ParticleBinding:
        return cls(int(d["id"]), d["arm"], d["link"], tuple(d["offset"]))


@dataclass
class WorldConfig:
    arms: list[ArmModel]
    camera: CameraModel = field(default_factory=CameraModel)
    tracker: TrackerModel = field(default_factory=TrackerModel)
    n_link_particles: int = 40
    n_background: int = 40
    backdrop_depth: float = 85.0

    def __post_init__(self):
        self.arms = [a if isinstance(a, ArmModel) else ArmModel(**a) for a in self.arms]
        if isinstance(self.camera, dict):
            self.camera = CameraModel(**self.camera)
        if isinstance(self.tracker, dict):
            self.tracker = TrackerModel(**self.tracker)
        if sum(a.controlled for a in self.arms) != 1:
            raise ValueError("exactly one arm must be controlled")

    @property
    def controlled_index(self) -> int:
        return next(i for i, a in enumerate(self.arms) if a.controlled)

    @property
    def controlled_arm(self) -> ArmModel:
        return self.arms[self.controlled_index]

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> WorldConfig:
        d = dict(d)
        arms = []
        for a in d.pop("arms"):
            a = dict(a)
            a["links"] = [Link(**_tuplify(l)) for l in a["links"]]
            arms.append(ArmModel(**_tuplify(a)))
        cam = CameraModel(**_tuplify(d.pop("camera", {})))
        trk = TrackerModel(**d.pop("tracker", {}))
        return cls(arms=arms, camera=cam, tracker=trk, **d)


def _tuplify(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, list) and k not in ("links",):
            v = tuple(tuple(x) if isinstance(x, list) else x for x in v)
        out[k] = v
    return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# --------------------------------------------------------------------------
# Default rigs

TOOLS = {
    "none": [],
    "wrench": [Link(5.0, (1.0, 0.0, 0.3), None, radius=0.8)],
    "pliers": [Link(6.0, (1.0, 0.0, -0.2), None, radius=0.7)],
    "pencil": [Link(12.0, (1.0, 0.0, 0.15), None, radius=0.4)],
    "marker": [Link(10.0, (1.0, 0.0, 0.0), None, radius=0.6)],
    "rope": [Link(8.0, (1.0, 0.0, 0.5), None, radius=0.4, loose_std=0.8)],
}


def default_arm(tool: str = "none", base_position=(0.0, 0.0, 0.0), base_yaw: float = 0.0,
                controlled: bool = True, actuation_noise_std: float = 0.0,
                decoy_action_scale: float = 0.05) -> ArmModel:
    """Base yaw plus three pitch joints, links 10/10/8/4 cm, optional rigid tool."""
    pitch = (0.0, 1.0, 0.0)
    links = [
        Link(10.0, (0.0, 0.0, 1.0), (0.0, 0.0, 1.0), (-1.6, 1.6), radius=1.5),
        Link(10.0, (1.0, 0.0, 0.0), pitch, (-1.8, 1.2), radius=1.0),
        Link(8.0, (1.0, 0.0, 0.0), pitch, (-0.5, 2.4), radius=1.0),
        Link(4.0, (1.0, 0.0, 0.0), pitch, (-1.2, 1.9), radius=1.2),
    ]
    links += [replace(t) for t in TOOLS[tool]]
    return ArmModel(links, home=(0.0, -0.5, 1.0, 0.6), base_position=tuple(base_position),
                    base_yaw=base_yaw, actuation_noise_std=actuation_noise_std,
                    controlled=controlled, decoy_action_scale=decoy_action_scale)


NOISE_PRESETS = {
    "none": dict(actuation=0.0, jitter=0.0, depth=0.0, drop=0.0, bleed=0.0),
    "default": dict(actuation=0.1, jitter=0.5, depth=0.3, drop=0.002, bleed=0.3),
    "high": dict(actuation=0.15, jitter=1.5, depth=0.6, drop=0.005, bleed=0.4),
}


def default_world_config(noise: str = "default", tool: str = "none", decoy: bool = False,
                         decoy_action_scale: float = 0.1, shake: float = 0.0,
                         n_link_particles: int = 40, n_background: int = 120) -> WorldConfig:
    """The standard desk rig: one controlled arm (optionally a decoy beside it)."""
    preset = NOISE_PRESETS[noise]
    arms = [default_arm(tool, actuation_noise_std=preset["actuation"])]
    camera = CameraModel(shake_amplitude=shake)
    if decoy:
        arms.append(default_arm(tool, base_position=(30.0, 0.0, 0.0), controlled=False,
                                actuation_noise_std=preset["actuation"],
                                decoy_action_scale=decoy_action_scale))
        camera = replace(camera, position=(24.0, -70.0, 9.0))
    tracker = TrackerModel(preset["jitter"], preset["depth"], preset["drop"], bleed=preset["bleed"])
    return WorldConfig(arms, camera, tracker, n_link_particles, n_background)


def planar_arm(lengths=(10.0, 10.0), home=None, actuation_noise_std: float = 0.0) -> ArmModel:
    """Planar revolute chain in the world x-y plane (joints about z)."""
    links = [Link(float(L), (1.0, 0.0, 0.0), (0.0, 0.0, 1.0), (-math.pi, math.pi), radius=0.5)
             for L in lengths]
    return ArmModel(links, home=tuple(home) if home is not None else (),
                    actuation_noise_std=actuation_noise_std)


def planar_world_config(lengths=(10.0, 10.0), home=None, **kw) -> WorldConfig:
    """Planar arm seen by a camera looking straight down from 60 cm."""
    camera = CameraModel(position=(0.0, 0.0, 60.0),
                         rotation=((1.0, 0.0, 0.0), (0.0, -1.0, 0.0), (0.0, 0.0, -1.0)))
    return WorldConfig([planar_arm(lengths, home)], camera, TrackerModel(), **kw)


# --------------------------------------------------------------------------
# World state


@dataclass
class ParticleTrack:
    positions: NDArray[np.float64]  # (T, 3); NaN rows where dropped
    alive: NDArray[np.bool_]  # (T,)

    @property
    def full_duration(self) -> bool:
        return bool(np.all(self.alive))


class SimWorld:
    """Mutable world state; one owner at a time."""

    def __init__(self, config: WorldConfig, seed: int = 0, particles: list[ParticleBinding] | None = None):
        self.config = config
        self.seed = int(seed)
        seqs = np.random.SeedSequence([self.seed, config.tracker.seed]).spawn(len(_STREAMS))
        self.rng = {name: np.random.default_rng(s) for name, s in zip(_STREAMS, seqs)}
        self.joint_states = [np.array(a.home, dtype=np.float64) for a in config.arms]
        self.prev_joint_states = [q.copy() for q in self.joint_states]
        self.particles = particles if particles is not None else self._seed_particles()
        self.alive = np.ones(len(self.particles), dtype=bool)
        self.shake = np.zeros(2)
        self.t = 0
        self._dropout_t = 0
        self.last_decoy_actions: dict[int, NDArray[np.float64]] = {}

    @property
    def d(self) -> int:
        return self.config.controlled_arm.d

    @property
    def controlled_index(self) -> int:
        return self.config.controlled_index

    def _seed_particles(self) -> list[ParticleBinding]:
        rng = self.rng["particles"]
        cfg = self.config
        out = []
        for ai, arm in enumerate(cfg.arms):
            lengths = np.array(arm.link_lengths)
            counts = rng.multinomial(cfg.n_link_particles, lengths / lengths.sum())
            for li, (link, n) in enumerate(zip(arm.links, counts)):
                u = _unit(link.direction)
                a, b = _perpendicular_basis(u)
                for _ in range(n):
                    s = rng.uniform(0.1, 1.0) * link.length
                    r = rng.uniform(-link.radius, link.radius, size=2)
                    off = s * u + r[0] * a + r[1] * b
                    out.append(ParticleBinding(len(out), ai, li, tuple(off.tolist())))
        cam = cfg.camera
        for _ in range(cfg.n_background):
            px = rng.uniform([0.05 * cam.width, 0.05 * cam.height], [0.95 * cam.width, 0.95 * cam.height])
            w = cam.unproject([px[0], px[1], cfg.backdrop_depth])
            out.append(ParticleBinding(len(out), None, None, tuple(w.tolist())))
        return out

    def step(self, action: ArrayLike) -> SimWorld:
        """Advance every arm by one unit timestep of joint-velocity command."""
        action = np.asarray(action, dtype=np.float64).ravel()
        if action.shape[0] != self.d:
            raise ValueError(f"action has dimension {action.shape[0]}, arm expects {self.d}")
        self.last_decoy_actions = {}
        self.prev_joint_states = [q.copy() for q in self.joint_states]
        for ai, arm in enumerate(self.config.arms):
            if arm.controlled:
                cmd = action
            else:
                cmd = self.rng["decoy"].uniform(-arm.decoy_action_scale, arm.decoy_action_scale, arm.d)
                self.last_decoy_actions[ai] = cmd
            delta = cmd + arm.actuation_noise_std * np.abs(cmd) * self.rng["actuation"].standard_normal(arm.d)
            if arm.broken_link_index is not None:
                delta[arm.broken_link_index] = self.rng["broken"].normal(0.0, arm.broken_std)
            lim = arm.joint_limits
            self.joint_states[ai] = np.clip(self.joint_states[ai] + delta, lim[:, 0], lim[:, 1])
        amp = self.config.camera.shake_amplitude
        if amp > 0:
            self.shake = _reflect(self.shake + self.rng["shake"].normal(0.0, 0.3 * amp, 2), amp)
        self.t += 1
        return self

    def rigid_positions(self, bindings: list[ParticleBinding] | None = None,
                        joint_states=None) -> NDArray[np.float64]:
        """World positions of ``bindings`` ignoring loose-link noise."""
        bindings = self.particles if bindings is None else bindings
        joint_states = self.joint_states if joint_states is None else joint_states
        frames = [arm.frames(q) for arm, q in zip(self.config.arms, joint_states)]
        out = np.empty((len(bindings), 3))
        for i, b in enumerate(bindings):
            if b.is_background:
                out[i] = b.offset
            else:
                rots, origins, _ = frames[b.arm]
                out[i] = origins[b.link] + rots[b.link] @ np.asarray(b.offset)
        return out

    def world_positions(self, bindings: list[ParticleBinding] | None = None,
                        joint_states=None, loose_rng: np.random.Generator | None = None):
        bindings = self.particles if bindings is None else bindings
        out = self.rigid_positions(bindings, joint_states)
        rng = self.rng["loose"] if loose_rng is None else loose_rng
        loose = _loose_stds(self.config, bindings)
        noise = rng.standard_normal((len(bindings), 3))
        return out + loose[:, None] * noise

    def observe(self) -> tuple[NDArray[np.float64], NDArray[np.bool_]]:
        """Tracked (x, y, depth) per particle, NaN where dropped, and alive flags."""
        cam, trk = self.config.camera, self.config.tracker
        obs = cam.project(self.world_positions(), self.shake)
        obs = add_bleed(self.config, self.particles, obs, self.joint_states, self.prev_joint_states)
        n = len(self.particles)
        if self.t > self._dropout_t:
            drops = self.rng["tracker"].random(n) < trk.drop_prob_per_step
            self.alive &= ~drops
            self._dropout_t = self.t
        self.alive &= cam.in_frustum(obs)
        obs = obs + _sensor_noise(self.rng["tracker"], n, cam, trk)
        obs[~self.alive] = np.nan
        return obs, self.alive.copy()

    def ground_truth_ee(self) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """True end-effector (chain tip of the controlled arm): world and image."""
        w = self.config.controlled_arm.tip(self.joint_states[self.controlled_index])
        return w, self.config.camera.project(w, self.shake)

    def body_mask(self, bindings: list[ParticleBinding] | None = None) -> NDArray[np.bool_]:
        bindings = self.particles if bindings is None else bindings
        return np.array([b.arm == self.controlled_index for b in bindings], dtype=bool)


def _perpendicular_basis(u):
    helper = np.array([0.0, 0.0, 1.0]) if abs(u[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    a = _unit(np.cross(u, helper))
    return a, np.cross(u, a)


def _reflect(x: NDArray[np.float64], amp: float) -> NDArray[np.float64]:
    # Fold into [-amp, amp]; a triangle wave with period 4*amp.
    y = np.mod(x + amp, 4 * amp)
    return np.where(y > 2 * amp, 4 * amp - y, y) - amp


def _loose_stds(config: WorldConfig, bindings) -> NDArray[np.float64]:
    return np.array([0.0 if b.is_background else config.arms[b.arm].links[b.link].loose_std
                     for b in bindings])


_BLEED_SAMPLES = 16


def _axis_samples(config: WorldConfig, joint_states) -> NDArray[np.float64]:
    """World points spaced along every link axis of every arm, (S, 3)."""
    u = np.linspace(0.0, 1.0, _BLEED_SAMPLES)
    pts = []
    for arm, q in zip(config.arms, joint_states):
        rots, origins, _ = arm.frames(q)
        for link, r, o in zip(arm.links, rots, origins):
            axis = r @ (_unit(link.direction) * link.length)
            pts.append(o + u[:, None] * axis)
    return np.concatenate(pts)


def bleed_offsets(config: WorldConfig, image_xy: ArrayLike, joints_now, joints_prev) -> NDArray[np.float64]:
    """Image offsets (n, 2) that nearby arm motion drags into static points.

    Each point picks up ``bleed * (1 - r / radius)`` of the last-step image
    motion of the closest arm axis sample, where ``r`` is its pixel distance.
    """
    xy = np.asarray(image_xy, dtype=np.float64).reshape(-1, 2)
    if config.tracker.bleed == 0 or len(xy) == 0:
        return np.zeros_like(xy)
    now = _axis_image(config, joints_now)
    prev = _axis_image(config, joints_prev)
    return _bleed(config.tracker, xy, now[None], prev[None])


def _axis_image(config: WorldConfig, joint_states) -> NDArray[np.float64]:
    return config.camera.project(_axis_samples(config, joint_states), np.zeros(2))[:, :2]


def _bleed(trk: TrackerModel, xy, now, prev) -> NDArray[np.float64]:
    # xy (n, 2); now/prev (n or 1, S, 2) axis samples in the image.
    dist = np.linalg.norm(xy[:, None, :] - now, axis=2)
    j = np.argmin(dist, axis=1)
    rows = np.arange(len(xy))
    w = trk.bleed * np.clip(1.0 - dist[rows, j] / trk.bleed_radius_px, 0.0, None)
    ri = rows if now.shape[0] > 1 else np.zeros_like(rows)
    return w[:, None] * (now[ri, j] - prev[ri, j])


def add_bleed(config: WorldConfig, bindings, obs: NDArray[np.float64], joints_now, joints_prev):
    """Apply :func:`bleed_offsets` to the background rows of ``obs``."""
    if config.tracker.bleed == 0:
        return obs
    bg = np.array([b.is_background for b in bindings], dtype=bool)
    if not bg.any():
        return obs
    obs = obs.copy()
    obs[bg, :2] += bleed_offsets(config, obs[bg, :2], joints_now, joints_prev)
    return obs


def _sensor_noise(rng, n, cam: CameraModel, trk: TrackerModel) -> NDArray[np.float64]:
    std_px = math.hypot(trk.jitter_std, cam.pixel_noise_std)
    std_d = math.hypot(trk.depth_jitter_std, cam.depth_noise_std)
    noise = rng.standard_normal((n, 3))
    return noise * np.array([std_px, std_px, std_d])


# --------------------------------------------------------------------------
# Exploration


@dataclass
class ExplorationLog:
    config: WorldConfig
    seed: int
    bindings: list[ParticleBinding]
    actions: NDArray[np.float64]  # (n, d) controlled arm
    arm_actions: dict[int, NDArray[np.float64]]  # every arm, including the controlled one
    positions: NDArray[np.float64]  # (P, n+1, 3), NaN where dropped
    alive: NDArray[np.bool_]  # (P, n+1)
    gt_ee_world: NDArray[np.float64]  # (n+1, 3)
    gt_ee_image: NDArray[np.float64]  # (n+1, 3)
    joint_states: list[NDArray[np.float64]]  # per arm, (n+1, d_arm)
    shake: NDArray[np.float64]  # (n+1, 2)
    action_scale: float = 0.05

    @property
    def n_actions(self) -> int:
        return self.actions.shape[0]

    @property
    def body_mask(self) -> NDArray[np.bool_]:
        ci = self.config.controlled_index
        return np.array([b.arm == ci for b in self.bindings], dtype=bool)

    @property
    def tracks(self) -> list[ParticleTrack]:
        return [ParticleTrack(self.positions[i], self.alive[i]) for i in range(len(self.bindings))]

    def full_duration_mask(self) -> NDArray[np.bool_]:
        return self.alive.all(axis=1)

    def to_jsonl(self, path: str | Path) -> None:
        Path(path).write_text("".join(json.dumps(r) + "\n" for r in self.records()))

    def records(self):
        yield {
            "type": "header",
            "config": self.config.to_dict(),
            "seed": self.seed,
            "d": int(self.actions.shape[1]),
            "n_actions": self.n_actions,
            "action_scale": self.action_scale,
            "controlled_arm": self.config.controlled_index,
            "bindings": [asdict(b) | {"offset": list(b.offset)} for b in self.bindings],
        }
        for t in range(self.n_actions + 1):
            obs = [None if not self.alive[i, t] else self.positions[i, t].tolist()
                   for i in range(len(self.bindings))]
            yield {
                "t": t,
                "action": None if t == 0 else self.actions[t - 1].tolist(),
                "arm_actions": None if t == 0 else {str(k): v[t - 1].tolist() for k, v in self.arm_actions.items()},
                "obs": obs,
                "gt_ee": self.gt_ee_image[t].tolist(),
                "gt_ee_world": self.gt_ee_world[t].tolist(),
                "joints": [q[t].tolist() for q in self.joint_states],
                "shake": self.shake[t].tolist(),
            }

    @classmethod
    def from_jsonl(cls, path: str | Path) -> ExplorationLog:
        lines = Path(path).read_text().splitlines()
        if not lines:
            raise ValueError(f"{path}: empty log")
        try:
            header = json.loads(lines[0])
            steps = [json.loads(l) for l in lines[1:]]
            if header.get("type") != "header":
                raise ValueError("first record is not a header")
            config = WorldConfig.from_dict(header["config"])
            bindings = [ParticleBinding.from_dict(b) for b in header["bindings"]]
            n = header["n_actions"]
            if len(steps) != n + 1:
                raise ValueError(f"expected {n + 1} step records, found {len(steps)}")
            P = len(bindings)
            positions = np.full((P, n + 1, 3), np.nan)
            alive = np.zeros((P, n + 1), dtype=bool)
            for t, rec in enumerate(steps):
                for i, o in enumerate(rec["obs"]):
                    if o is not None:
                        positions[i, t] = o
                        alive[i, t] = True
            arm_keys = steps[1]["arm_actions"].keys() if n else []
            arm_actions = {int(k): np.array([s["arm_actions"][k] for s in steps[1:]]) for k in arm_keys}
            actions = np.array([s["action"] for s in steps[1:]], dtype=float).reshape(n, header["d"])
            n_arms = len(config.arms)
            return cls(
                config=config,
                seed=header["seed"],
                bindings=bindings,
                actions=actions,
                arm_actions=arm_actions,
                positions=positions,
                alive=alive,
                gt_ee_world=np.array([s["gt_ee_world"] for s in steps]),
                gt_ee_image=np.array([s["gt_ee"] for s in steps]),
                joint_states=[np.array([s["joints"][a] for s in steps]) for a in range(n_arms)],
                shake=np.array([s["shake"] for s in steps]),
                action_scale=header.get("action_scale", 0.05),
            )
        except (KeyError, TypeError, IndexError, json.JSONDecodeError) as exc:
            raise ValueError(f"{path}: malformed exploration log ({exc})") from exc


def run_exploration(world: SimWorld, n_actions: int = 100, action_scale: float = 0.05) -> ExplorationLog:
    """Execute i.i.d. uniform random joint-velocity commands, recording everything."""
    if n_actions < 1:
        raise ValueError("n_actions must be >= 1")
    d = world.d
    n_arms = len(world.config.arms)
    obs_all, alive_all, gt_w, gt_i, shakes = [], [], [], [], []
    joints = [[] for _ in range(n_arms)]
    arm_actions = {ai: np.zeros((n_actions, a.d)) for ai, a in enumerate(world.config.arms)}

    def record():
        obs, alive = world.observe()
        obs_all.append(obs)
        alive_all.append(alive)
        w, im = world.ground_truth_ee()
        gt_w.append(w)
        gt_i.append(im)
        shakes.append(world.shake.copy())
        for ai in range(n_arms):
            joints[ai].append(world.joint_states[ai].copy())

    record()
    actions = world.rng["explore"].uniform(-action_scale, action_scale, size=(n_actions, d))
    for t in range(n_actions):
        world.step(actions[t])
        arm_actions[world.controlled_index][t] = actions[t]
        for ai, a in world.last_decoy_actions.items():
            arm_actions[ai][t] = a
        record()
    return ExplorationLog(
        config=world.config,
        seed=world.seed,
        bindings=list(world.particles),
        actions=actions,
        arm_actions=arm_actions,
        positions=np.stack(obs_all, axis=1),
        alive=np.stack(alive_all, axis=1),
        gt_ee_world=np.array(gt_w),
        gt_ee_image=np.array(gt_i),
        joint_states=[np.array(j) for j in joints],
        shake=np.array(shakes),
        action_scale=action_scale,
    )


def _logged_frames(config: WorldConfig, log: ExplorationLog):
    """Per arm: rotations (T, L, 3, 3) and origins (T, L, 3) over the log."""
    out = []
    for ai, arm in enumerate(config.arms):
        rots, origins = [], []
        for q in log.joint_states[ai]:
            r, o, _ = arm.frames(q)
            rots.append(r)
            origins.append(o)
        out.append((np.array(rots), np.array(origins)))
    return out


def replay_points(world: SimWorld, log: ExplorationLog, bindings: list[ParticleBinding]) -> list[ParticleTrack]:
    """Tracks the given bindings would have produced over the logged trajectory.

    Tracker jitter is drawn fresh (seeded by the log seed and binding id).
    Replayed tracks never drop out except by leaving the image.
    """
    config = log.config
    if len(config.arms) != len(world.config.arms) or log.seed != world.seed:
        raise ValueError("log was not produced by this world")
    frames = _logged_frames(config, log)
    T = log.n_actions + 1
    cam, trk = config.camera, config.tracker
    axis_img = None
    tracks = []
    for b in bindings:
        if b.is_background:
            w = np.broadcast_to(np.asarray(b.offset, dtype=float), (T, 3)).copy()
        else:
            if b.arm >= len(config.arms) or b.link >= len(config.arms[b.arm].links):
                raise ValueError(f"binding {b.id} references a missing link")
            rots, origins = frames[b.arm]
            w = origins[:, b.link] + rots[:, b.link] @ np.asarray(b.offset, dtype=float)
        rng = np.random.default_rng([log.seed, _REPLAY_STREAM, b.id])
        loose = _loose_stds(config, [b])[0]
        if loose > 0:
            w = w + loose * rng.standard_normal((T, 3))
        obs = cam.project(w, np.zeros(2)) + np.column_stack([log.shake, np.zeros(T)])
        if b.is_background and trk.bleed > 0:
            if axis_img is None:
                axis_img = np.array([_axis_image(config, [q[t] for q in log.joint_states]) for t in range(T)])
            obs[1:, :2] += _bleed(trk, obs[1:, :2], axis_img[1:], axis_img[:-1])
        alive = cam.in_frustum(obs)
        obs = obs + _sensor_noise(rng, T, cam, trk)
        obs[~alive] = np.nan
        tracks.append(ParticleTrack(obs, alive))
    return tracks


def replay_point(world: SimWorld, log: ExplorationLog, binding: ParticleBinding) -> ParticleTrack:
    return replay_points(world, log, [binding])[0]


def bind_grid(log: ExplorationLog, center: ArrayLike, grid: int = 15, spacing: float = 3.0,
              start_id: int = 0, frame: int = 0) -> list[ParticleBinding]:
    """Bind a ``grid`` x ``grid`` pixel lattice around ``center`` at one logged frame.

    Each pixel goes to the front-most link whose axis projects within that
    link's radius (in pixels); otherwise it becomes a backdrop point.
    """
    config = log.config
    cam = config.camera
    shake = log.shake[frame]
    half = (grid - 1) / 2.0
    offs = (np.arange(grid) - half) * spacing
    cx, cy = float(center[0]), float(center[1])
    pixels = np.array([(cx + dx, cy + dy) for dy in offs for dx in offs])
    inside = ((pixels[:, 0] >= 0) & (pixels[:, 0] < cam.width)
              & (pixels[:, 1] >= 0) & (pixels[:, 1] < cam.height))
    pixels = pixels[inside]
    if len(pixels) == 0:
        return []

    best_depth = np.full(len(pixels), np.inf)
    best = [None] * len(pixels)
    s = np.linspace(0.0, 1.0, _AXIS_SAMPLES)
    for ai, arm in enumerate(config.arms):
        rots, origins, _ = arm.frames(log.joint_states[ai][frame])
        for li, link in enumerate(arm.links):
            axis = origins[li] + np.outer(s * link.length, rots[li] @ _unit(link.direction))
            proj = cam.project(axis, shake)
            d2 = ((pixels[:, None, :] - proj[None, :, :2]) ** 2).sum(-1)
            j = d2.argmin(axis=1)
            depth = proj[j, 2]
            radius_px = link.radius * cam.focal_px / depth
            hit = (np.sqrt(d2[np.arange(len(pixels)), j]) <= radius_px) & (depth < best_depth)
            for p in np.flatnonzero(hit):
                best_depth[p] = depth[p]
                best[p] = (ai, li, rots[li], origins[li])

    out = []
    for p, px in enumerate(pixels):
        bid = start_id + len(out)
        if best[p] is None:
            w = cam.unproject([px[0], px[1], config.backdrop_depth], shake)
            out.append(ParticleBinding(bid, None, None, tuple(w.tolist())))
        else:
            ai, li, R, o = best[p]
            w = cam.unproject([px[0], px[1], best_depth[p]], shake)
            out.append(ParticleBinding(bid, ai, li, tuple((R.T @ (w - o)).tolist())))
    return out
