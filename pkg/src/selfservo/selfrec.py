"""Self-recognition: which tracked points respond to the control inputs.

A point's responsiveness is the mutual information between its per-step
displacement and the action that caused it. Injected Gaussian noise breaks
ties between points of one rigid link in favour of the ones that move
more. The most responsive control point (MRCP) is the mean of the top-k
points.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .mi import _TIE_JITTER, ksg_mi_batch
from .sim import ExplorationLog, ParticleBinding, ParticleTrack, SimWorld, bind_grid, replay_points

LOW_CONFIDENCE_NATS = 0.1
_FINE_ID_BASE = 1_000_000
_ACTION_STREAM = 2**31 - 1


@dataclass(frozen=True)
class SelfRecConfig:
    k_mi: int = 3
    noise_variance: float = 1.6
    top_k: int = 15
    stages: int = 2
    coarse_keep: int = 5
    grid: int = 15
    grid_spacing: float = 3.0
    outlier_variance_threshold: float = 0.0
    delta: float = 0.2
    noise_draws: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.stages not in (1, 2):
            raise ValueError("stages must be 1 or 2")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be >= 0")
        if self.noise_draws < 1:
            raise ValueError("noise_draws must be >= 1")


@dataclass
class ResponsivenessReport:
    scores: NDArray[np.float64]
    ranking: NDArray[np.int64]
    mrcp_members: NDArray[np.int64]
    mrcp_position: NDArray[np.float64]
    body: NDArray[np.int64]
    bindings: list[ParticleBinding]
    config: SelfRecConfig = field(default_factory=SelfRecConfig)
    low_confidence: bool = False
    stage: int = 1
    member_positions: NDArray[np.float64] | None = None  # (K, 3) members at the final frame

    @property
    def member_bindings(self) -> list[ParticleBinding]:
        return [self.bindings[i] for i in self.mrcp_members]

    def to_dict(self) -> dict:
        return {
            "scores": [float(s) for s in self.scores],
            "ranking": [int(i) for i in self.ranking],
            "mrcp": {"members": [int(i) for i in self.mrcp_members],
                     "position": [float(v) for v in self.mrcp_position],
                     "member_positions": None if self.member_positions is None
                     else [[float(v) for v in p] for p in self.member_positions]},
            "body": [int(i) for i in self.body],
            "low_confidence": self.low_confidence,
            "stage": self.stage,
            "config": asdict(self.config),
            "seed": self.config.seed,
            "bindings": [{"id": b.id, "arm": b.arm, "link": b.link, "offset": list(b.offset)}
                         for b in self.bindings],
        }

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def from_dict(cls, d: dict) -> ResponsivenessReport:
        try:
            return cls(
                scores=np.array(d["scores"], dtype=float),
                ranking=np.array(d["ranking"], dtype=np.int64),
                mrcp_members=np.array(d["mrcp"]["members"], dtype=np.int64),
                mrcp_position=np.array(d["mrcp"]["position"], dtype=float),
                body=np.array(d["body"], dtype=np.int64),
                bindings=[ParticleBinding.from_dict(b) for b in d["bindings"]],
                config=SelfRecConfig(**d["config"]),
                low_confidence=bool(d["low_confidence"]),
                stage=int(d.get("stage", 1)),
                member_positions=None if d["mrcp"].get("member_positions") is None
                else np.array(d["mrcp"]["member_positions"], dtype=float),
            )
        except (KeyError, TypeError, IndexError, AttributeError) as exc:
            raise ValueError(f"malformed report ({exc})") from exc

    @classmethod
    def from_json(cls, path: str | Path) -> ResponsivenessReport:
        return cls.from_dict(json.loads(Path(path).read_text()))


def _normalize_columns(a: NDArray[np.float64]) -> NDArray[np.float64]:
    std = a.std(axis=-2, keepdims=True)
    scale = np.abs(a).max(axis=-2, keepdims=True)
    # Columns that are constant up to rounding carry no signal.
    return np.divide(a, std, out=np.zeros_like(a), where=std > 1e-9 * np.maximum(scale, 1e-300))


def score_displacements(displacements: ArrayLike, actions: ArrayLike, k: int = 3,
                        noise_variance: float = 0.0, seed: int = 0,
                        noise_keys: ArrayLike | None = None, noise_draws: int = 1) -> NDArray[np.float64]:
    """Responsiveness of many displacement series against one action series.

    ``displacements`` is (m, n, 3). Noise is added in raw units, then each
    coordinate is divided by its own standard deviation. Noise for series
    ``i`` is ``sqrt(noise_variance) * z`` with ``z`` drawn from a stream keyed
    on ``(seed, noise_keys[i])``, so different variances reuse the same
    draws. With ``noise_draws > 1`` the estimate is averaged over that many
    independent noise draws. Series that never move score exactly zero.
    """
    ds0 = np.asarray(displacements, dtype=np.float64)
    if ds0.ndim == 2:
        ds0 = ds0[None]
    m, n, dim = ds0.shape
    actions = np.asarray(actions, dtype=np.float64)
    if actions.ndim == 1:
        actions = actions[:, None]
    if actions.shape[0] != n:
        raise ValueError(f"{n} displacements but {actions.shape[0]} actions")
    keys = np.arange(m) if noise_keys is None else np.asarray(noise_keys)
    static = np.all(ds0.std(axis=1) == 0, axis=1)
    act = _normalize_columns(actions)
    act = act + _TIE_JITTER * np.random.default_rng([seed, _ACTION_STREAM]).standard_normal(act.shape)
    draws = noise_draws if noise_variance > 0 else 1
    z = np.stack([np.random.default_rng([seed, int(key)]).standard_normal((draws, n, dim))
                  for key in keys])
    total = np.zeros(m)
    for r in range(draws):
        if noise_variance > 0:
            x = _normalize_columns(ds0 + math.sqrt(noise_variance) * z[:, r])
        else:
            # Jitter after normalising, so a constant coordinate stays constant
            # instead of being blown up to unit-variance noise.
            x = _normalize_columns(ds0) + _TIE_JITTER * z[:, r]
        total += ksg_mi_batch(x, act, k)
    scores = np.maximum(0.0, total / draws)
    scores[static] = 0.0
    return scores


def responsiveness(track: ParticleTrack | ArrayLike, actions: ArrayLike,
                   config: SelfRecConfig = SelfRecConfig(), key: int = 0) -> float:
    """Responsiveness (nats, >= 0) of one full-duration track.

    Raises:
        ValueError: if the track has gaps or does not have one more
            position than there are actions.
    """
    if isinstance(track, ParticleTrack):
        if not track.full_duration:
            raise ValueError("track is not alive for the full exploration")
        pos = track.positions
    else:
        pos = np.asarray(track, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    if pos.shape[0] != actions.shape[0] + 1:
        raise ValueError("track must have exactly one more position than actions")
    if not np.all(np.isfinite(pos)):
        raise ValueError("track has gaps")
    return float(score_displacements(np.diff(pos, axis=0)[None], actions, config.k_mi,
                                     config.noise_variance, config.seed, [key],
                                     config.noise_draws)[0])


def outlier_mask(positions: NDArray[np.float64], threshold: float) -> NDArray[np.bool_]:
    """True for tracks whose total 2-D position variance is >= ``threshold``."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    if threshold == 0:
        return np.ones(positions.shape[0], dtype=bool)
    var = np.nanvar(positions[..., 0], axis=1) + np.nanvar(positions[..., 1], axis=1)
    return var >= threshold


def static_variance_threshold(jitter_std: float, factor: float = 2.0) -> float:
    """``factor`` times the 2-D position variance of a motionless track.

    A static point observed with per-axis jitter ``jitter_std`` has expected
    x + y variance ``2 * jitter_std**2``; anything near that floor carries no
    usable motion.
    """
    if jitter_std < 0 or factor <= 0:
        raise ValueError("jitter_std must be >= 0 and factor > 0")
    return factor * 2.0 * jitter_std ** 2


def remove_outliers(tracks: list[ParticleTrack], threshold: float) -> list[ParticleTrack]:
    """Drop tracks whose 2-D (x, y) position variance is below ``threshold``."""
    if not tracks:
        return []
    keep = outlier_mask(np.stack([t.positions for t in tracks]), threshold)
    return [t for t, k in zip(tracks, keep) if k]


def _assemble(bindings, positions, alive, actions, config: SelfRecConfig, stage: int,
              keys=None) -> ResponsivenessReport:
    eligible = alive.all(axis=1)
    if config.outlier_variance_threshold > 0:
        eligible &= outlier_mask(positions, config.outlier_variance_threshold)
    idx = np.flatnonzero(eligible)
    if len(idx) < config.top_k:
        raise ValueError(f"only {len(idx)} usable tracks, need top_k={config.top_k}")
    keys = np.arange(len(bindings)) if keys is None else np.asarray(keys)
    scores = np.zeros(len(bindings))
    disp = np.diff(positions[idx], axis=1)
    scores[idx] = score_displacements(disp, actions, config.k_mi, config.noise_variance,
                                      config.seed, keys[idx], config.noise_draws)
    # Stable sort on -score keeps ties in index order.
    ranking = idx[np.argsort(-scores[idx], kind="stable")]
    members = ranking[:config.top_k]
    return ResponsivenessReport(
        scores=scores,
        ranking=ranking,
        mrcp_members=members,
        mrcp_position=positions[members, -1].mean(axis=0),
        body=idx[scores[idx] > config.delta],
        bindings=list(bindings),
        config=config,
        low_confidence=bool(scores[idx].max() < LOW_CONFIDENCE_NATS),
        stage=stage,
        member_positions=positions[members, -1].copy(),
    )


def _actions_for(log: ExplorationLog, arm: int | None) -> NDArray[np.float64]:
    if arm is None or arm == log.config.controlled_index:
        return log.actions
    if arm not in log.arm_actions:
        raise ValueError(f"log has no action record for arm {arm}")
    return log.arm_actions[arm]


def score_all(log: ExplorationLog, config: SelfRecConfig = SelfRecConfig(),
              action_arm: int | None = None) -> ResponsivenessReport:
    """Coarse stage: score every full-duration native track of ``log``.

    ``action_arm`` selects whose action sequence is used (default: the
    controlled arm).
    """
    return _assemble(log.bindings, log.positions, log.alive, _actions_for(log, action_arm),
                     config, stage=1, keys=[b.id for b in log.bindings])


def coarse_to_fine(world: SimWorld | None, log: ExplorationLog, config: SelfRecConfig = SelfRecConfig(),
                   action_arm: int | None = None,
                   candidates: ArrayLike | None = None) -> ResponsivenessReport:
    """Coarse scoring followed by re-scoring dense grids around the best candidates.

    Grids are laid at the exploration's first frame around each candidate's
    first observed position and replayed over the same logged trajectory.
    ``candidates`` overrides the coarse selection (indices into the log).
    With ``config.stages == 1`` the coarse report is returned.
    """
    coarse = score_all(log, config, action_arm)
    if config.stages == 1:
        return coarse
    if world is None:
        world = SimWorld(log.config, log.seed)
    chosen = coarse.ranking[:config.coarse_keep] if candidates is None else np.asarray(candidates)
    bindings: list[ParticleBinding] = []
    for c in chosen:
        center = log.positions[c, 0, :2]
        bindings += bind_grid(log, center, config.grid, config.grid_spacing,
                              start_id=_FINE_ID_BASE + len(bindings))
    tracks = replay_points(world, log, bindings)
    positions = np.stack([t.positions for t in tracks])
    alive = np.stack([t.alive for t in tracks])
    return _assemble(bindings, positions, alive, _actions_for(log, action_arm), config,
                     stage=2, keys=[b.id for b in bindings])


def identify(log: ExplorationLog, config: SelfRecConfig = SelfRecConfig(), world: SimWorld | None = None,
             action_arm: int | None = None) -> ResponsivenessReport:
    """Run self-recognition with the configured number of stages."""
    return coarse_to_fine(world, log, config, action_arm)


def noise_sweep(log: ExplorationLog, variances: list[float], config: SelfRecConfig = SelfRecConfig(),
                world: SimWorld | None = None) -> list[ResponsivenessReport]:
    """One report per injected noise variance; everything else is held fixed."""
    if not variances:
        raise ValueError("variances must be non-empty")
    return [identify(log, replace(config, noise_variance=float(v)), world) for v in variances]


def cluster_links(tracks: list[ParticleTrack] | NDArray[np.float64], n_clusters: int = 10,
                  seed: int = 0) -> NDArray[np.int64]:
    """K-means labels over (x, y) position histories, z-scored per time slice."""
    from sklearn.cluster import KMeans
    from sklearn.exceptions import ConvergenceWarning

    pos = np.stack([t.positions for t in tracks]) if isinstance(tracks, list) else np.asarray(tracks)
    if n_clusters > pos.shape[0]:
        raise ValueError("more clusters than tracks")
    xy = pos[..., :2]
    centered = xy - xy.mean(axis=0)
    std = xy.std(axis=0)
    feats = np.divide(centered, std, out=np.zeros_like(centered), where=std > 1e-12)
    feats = feats.reshape(pos.shape[0], -1)
    km = KMeans(n_clusters=n_clusters, init="k-means++", n_init=1, max_iter=50, random_state=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        return km.fit_predict(feats).astype(np.int64)


def path_lengths(positions: NDArray[np.float64]) -> NDArray[np.float64]:
    return np.linalg.norm(np.diff(positions[..., :2], axis=1), axis=-1).sum(axis=1)


def max_motion_baseline(tracks: list[ParticleTrack] | NDArray[np.float64], top_k: int = 15):
    """Mean final position of the ``top_k`` tracks with the longest image paths.

    Returns ``(position, member_indices)``; indices refer to the full-duration
    subset's positions in the input.
    """
    if isinstance(tracks, list):
        tracks = [t for t in tracks if t.full_duration]
        pos = np.stack([t.positions for t in tracks]) if tracks else np.empty((0, 1, 3))
    else:
        pos = np.asarray(tracks, dtype=float)
        pos = pos[np.all(np.isfinite(pos), axis=(1, 2))]
    if pos.shape[0] < top_k:
        raise ValueError(f"only {pos.shape[0]} full-duration tracks, need top_k={top_k}")
    order = np.argsort(-path_lengths(pos), kind="stable")[:top_k]
    return pos[order, -1].mean(axis=0), order
