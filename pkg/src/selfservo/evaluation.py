"""Ground-truth scoring of self-recognition output against the simulator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .sim import ExplorationLog, ParticleBinding, _unit


def binding_world_positions(log: ExplorationLog, bindings: list[ParticleBinding],
                            frame: int = -1) -> NDArray[np.float64]:
    """Noise-free world positions of ``bindings`` at a logged frame."""
    frames = [arm.frames(q[frame]) for arm, q in zip(log.config.arms, log.joint_states)]
    out = np.empty((len(bindings), 3))
    for i, b in enumerate(bindings):
        if b.is_background:
            out[i] = b.offset
        else:
            rots, origins, _ = frames[b.arm]
            out[i] = origins[b.link] + rots[b.link] @ np.asarray(b.offset)
    return out


def _segment_distance(p, a, b) -> float:
    ab = b - a
    t = np.clip(np.dot(p - a, ab) / np.dot(ab, ab), 0.0, 1.0)
    return float(np.linalg.norm(p - (a + t * ab)))


@dataclass
class MrcpError:
    px: float  # image distance from the observed MRCP to the true tip
    cm: float  # 3-D distance from the members' true mean position to the true tip
    region_hit: bool
    on_arm: int | None  # arm holding the majority of members; None if mostly background


def mrcp_error(log: ExplorationLog, report, arm: int | None = None, frame: int = -1) -> MrcpError:
    """Compare a report's MRCP with the tip of ``arm`` (default: controlled arm)."""
    arm = log.config.controlled_index if arm is None else arm
    model = log.config.arms[arm]
    members = report.member_bindings
    world = binding_world_positions(log, members, frame).mean(axis=0)
    rots, origins, tip = model.frames(log.joint_states[arm][frame])
    tip_img = log.config.camera.project(tip, log.shake[frame])
    px = float(np.linalg.norm(report.mrcp_position[:2] - tip_img[:2]))
    hit = False
    for li in model.region_links():
        link = model.links[li]
        a = origins[li]
        b = a + rots[li] @ (_unit(link.direction) * link.length)
        if _segment_distance(world, a, b) <= max(link.radius, 1.0):
            hit = True
            break
    hosts = [b.arm for b in members]
    counts = {h: hosts.count(h) for h in set(hosts)}
    majority = max(counts, key=lambda h: (counts[h], h is not None))
    return MrcpError(px, float(np.linalg.norm(world - tip)), hit, majority)


def position_error(log: ExplorationLog, position: ArrayLike, arm: int | None = None,
                   frame: int = -1) -> float:
    """Image distance (px) between an observed position and the tip of ``arm``."""
    arm = log.config.controlled_index if arm is None else arm
    tip = log.config.arms[arm].tip(log.joint_states[arm][frame])
    tip_img = log.config.camera.project(tip, log.shake[frame])
    return float(np.linalg.norm(np.asarray(position)[:2] - tip_img[:2]))


def precision_recall(scores: ArrayLike, truth: ArrayLike):
    """Precision and recall as the body threshold sweeps over every score.

    Points are ranked by descending score; ties share one operating point.
    """
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth, dtype=bool)
    order = np.argsort(-scores, kind="stable")
    s, t = scores[order], truth[order]
    tp = np.cumsum(t)
    fp = np.cumsum(~t)
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    precision = tp[last] / (tp[last] + fp[last])
    recall = tp[last] / max(1, t.sum())
    return precision, recall


def pr_area(scores: ArrayLike, truth: ArrayLike) -> float:
    """Area under the step-wise precision-recall curve (average precision)."""
    precision, recall = precision_recall(scores, truth)
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def body_pr_area(log: ExplorationLog, scores: ArrayLike) -> float:
    """Average precision of ``scores`` as a body classifier over full-duration tracks."""
    full = log.full_duration_mask()
    return pr_area(np.asarray(scores)[full], log.body_mask[full])
