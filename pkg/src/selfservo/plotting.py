"""SVG figures for identification, servo traces and benchmark results.

Figures are rendered with matplotlib's SVG backend with the date stripped
and a fixed id salt, so identical inputs give identical files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams["svg.hashsalt"] = "selfservo"
plt.rcParams["svg.fonttype"] = "path"

_COLORS = ("tab:blue", "tab:orange", "tab:green", "tab:red", "tab:purple", "tab:brown")


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def _image_axes(ax, camera) -> None:
    ax.set_xlim(0, camera.width)
    ax.set_ylim(camera.height, 0)
    ax.set_aspect("equal")
    ax.set_xlabel("x (px)")
    ax.set_ylabel("y (px)")


def plot_identify(log, report, path: str | Path, track_scores=None) -> Path:
    """Tracks coloured by responsiveness, MRCP members in green, MRCP in red.

    ``track_scores`` colours the logged tracks; by default the report's own
    scores when it indexes the log (stage 1), else zeros.
    """
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    n = len(log.bindings)
    if track_scores is None:
        track_scores = report.scores if report.stage == 1 else np.zeros(n)
    scores = np.asarray(track_scores, dtype=float)
    vmax = max(float(scores.max()), 1e-9)
    cmap = plt.get_cmap("viridis")
    for i in np.argsort(scores, kind="stable"):
        xy = log.positions[i, :, :2]
        ax.plot(xy[:, 0], xy[:, 1], lw=0.6, color=cmap(scores[i] / vmax), alpha=0.8)
    if report.member_positions is not None:
        pos = np.asarray(report.member_positions)
        ax.scatter(pos[:, 0], pos[:, 1], s=14, color="limegreen", edgecolors="k", linewidths=0.3,
                   zorder=3, label=f"top {len(pos)}")
    ax.scatter([report.mrcp_position[0]], [report.mrcp_position[1]], s=50, color="red", marker="*",
               zorder=4, label="MRCP")
    _image_axes(ax, log.config.camera)
    sm = plt.cm.ScalarMappable(cmap=cmap, norm=plt.Normalize(0, vmax))
    fig.colorbar(sm, ax=ax, label="responsiveness (nats)")
    ax.legend(loc="upper right", fontsize=7)
    return _save(fig, path)


def plot_trace(trace: list[dict], path: str | Path, camera=None, waypoints=None) -> Path:
    """Servo path of the MRCP in the image with its goals."""
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    groups: dict = {}
    for rec in trace:
        groups.setdefault(rec.get("goal_index", 0), []).append(rec)
    for gi, recs in sorted(groups.items()):
        s = np.array([r["s_star"][:2] for r in recs])
        g = recs[-1]["goal"]
        c = _COLORS[gi % len(_COLORS)]
        ax.plot(s[:, 0], s[:, 1], "-", lw=0.8, color=c)
        ax.scatter([g[0]], [g[1]], marker="x", color=c, s=25)
    if waypoints is not None:
        w = np.asarray(waypoints)
        ax.plot(w[:, 0], w[:, 1], "k--", lw=0.6, label="waypoints")
        ax.legend(fontsize=7)
    if camera is not None:
        _image_axes(ax, camera)
    else:
        ax.invert_yaxis()
        ax.set_aspect("equal")
    return _save(fig, path)


def plot_bench(cells, rows: list[dict], out_dir: str | Path, curves: dict | None = None) -> list[Path]:
    """One error bar chart per cell family, plus PR curves for the outlier cells."""
    out = Path(out_dir)
    paths = []
    families: dict[str, list] = {}
    for c in cells:
        families.setdefault(c.family or c.setting, []).append(c)
    for family, members in families.items():
        means, stds, labels = [], [], []
        for c in members:
            v = np.array([r["error_px"] for r in rows if r["setting"] == c.setting], dtype=float)
            v = v[np.isfinite(v)]
            means.append(v.mean() if len(v) else np.nan)
            stds.append(v.std() if len(v) else 0.0)
            labels.append(c.setting.split("=", 1)[-1])
        fig, ax = plt.subplots(figsize=(5, 3.5))
        x = np.arange(len(members))
        if family in ("noise_variance", "n_actions"):
            ax.errorbar(x, means, yerr=stds, marker="o", capsize=3)
        else:
            ax.bar(x, means, yerr=stds, capsize=3, color=_COLORS[0])
        ax.set_xticks(x)
        ax.set_xticklabels(labels)
        ax.set_xlabel(family)
        ax.set_ylabel("tip error (px)")
        fig.tight_layout()
        paths.append(_save(fig, out / f"bench_{family}.svg"))
    if curves:
        fig, ax = plt.subplots(figsize=(5, 4))
        settings = [c.setting for c in cells if c.family == "outlier"] or sorted({k.split("|")[0] for k in curves})
        for si, setting in enumerate(settings):
            first = True
            for key in sorted(k for k in curves if k.split("|")[0] == setting):
                recall, precision = curves[key]
                ax.step(recall, precision, where="post", color=_COLORS[si % len(_COLORS)], alpha=0.5, lw=0.8,
                        label=setting if first else None)
                first = False
        ax.set_xlabel("recall")
        ax.set_ylabel("precision")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.02)
        ax.legend(fontsize=7)
        fig.tight_layout()
        paths.append(_save(fig, out / "bench_pr.svg"))
    return paths
