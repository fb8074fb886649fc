"""Render the six figure kinds from experiment output files.

Input formats (produced by the experiment harness):
  metrics CSV    policy,seed,distance_mm,e_add_mm,detection_rate,n_scenes,n_objects
  sweep CSV      param,value,seed,distance_mm,e_add_mm,detection_rate
  score CSV      score,e_add_mm
  episode log    JSON-lines with record types episode_start / step / episode_end
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from scipy.stats import spearmanr  # noqa: E402

# identical output bytes on re-runs: no timestamps, stable SVG ids
matplotlib.rcParams["svg.hashsalt"] = "apl-plot"
_SAVEFIG_KW = {"metadata": {"Date": None}}


class SchemaError(Exception):
    """An input file does not match its documented schema."""


@dataclass(frozen=True)
class PlotSpec:
    kind: str
    inputs: tuple
    out: str
    options: dict = field(default_factory=dict)


def read_csv(path, required):
    """Columns as lists of strings; raises SchemaError naming what's missing."""
    try:
        with open(path, newline="") as f:
            rows = list(csv.DictReader(f))
    except OSError as e:
        raise SchemaError(f"cannot read {path}: {e}") from e
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    for col in required:
        if col not in rows[0]:
            raise SchemaError(f"{path}: missing column '{col}'")
    return {col: [r[col] for r in rows] for col in rows[0]}


def _floats(table, col):
    try:
        return np.array([float(x) for x in table[col]])
    except ValueError as e:
        raise SchemaError(f"column '{col}' is not numeric: {e}") from e


def read_episodes(path):
    """Episode log grouped into dicts {start, steps, end}."""
    episodes = []
    current = None
    try:
        with open(path) as f:
            lines = f.readlines()
    except OSError as e:
        raise SchemaError(f"cannot read {path}: {e}") from e
    for ln, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise SchemaError(f"{path}:{ln}: invalid JSON: {e}") from e
        kind = rec.get("type")
        if kind == "episode_start":
            current = {"start": rec, "steps": [], "end": None}
            episodes.append(current)
        elif kind == "step":
            if current is None:
                raise SchemaError(f"{path}:{ln}: step record before episode_start")
            current["steps"].append(rec)
        elif kind == "episode_end":
            if current is None:
                raise SchemaError(f"{path}:{ln}: episode_end before episode_start")
            current["end"] = rec
            current = None
        else:
            raise SchemaError(f"{path}:{ln}: unknown record type {kind!r}")
    if not episodes:
        raise SchemaError(f"{path}: no episodes")
    return episodes


def _save(fig, out):
    fig.savefig(out, **_SAVEFIG_KW)
    plt.close(fig)


def _sweep_panels(path, x_label):
    table = read_csv(path, ["value", "seed", "distance_mm", "e_add_mm",
                            "detection_rate"])
    values = _floats(table, "value")
    order = np.unique(values)
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.6))
    for ax, col, label in zip(axes,
                              ("e_add_mm", "detection_rate", "distance_mm"),
                              ("mean e_ADD (mm)", "detection rate",
                               "distance traveled (mm)")):
        ys = _floats(table, col)
        means = [ys[values == v].mean() for v in order]
        ax.plot(order, means, "o-")
        for v in order:
            ax.plot([v] * int((values == v).sum()), ys[values == v], ".",
                    color="gray", alpha=0.6, markersize=4)
        ax.set_xlabel(x_label)
        ax.set_ylabel(label)
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    return fig


def plot_ablation_alpha(spec: PlotSpec):
    _save(_sweep_panels(spec.inputs[0], "alpha"), spec.out)


def plot_ablation_t(spec: PlotSpec):
    _save(_sweep_panels(spec.inputs[0], "episode length T"), spec.out)


def plot_policy_bars(spec: PlotSpec):
    table = read_csv(spec.inputs[0], ["policy", "e_add_mm", "detection_rate",
                                      "distance_mm"])
    policies = table["policy"]
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.6))
    x = np.arange(len(policies))
    for ax, col, label in zip(axes,
                              ("e_add_mm", "detection_rate", "distance_mm"),
                              ("mean e_ADD (mm)", "detection rate",
                               "distance traveled (mm)")):
        ax.bar(x, _floats(table, col), color="tab:blue")
        ax.set_xticks(x)
        ax.set_xticklabels(policies, rotation=20, ha="right")
        ax.set_ylabel(label)
        ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    _save(fig, spec.out)


def score_scatter_rho(path) -> float:
    table = read_csv(path, ["score", "e_add_mm"])
    return float(spearmanr(_floats(table, "score"), _floats(table, "e_add_mm")).statistic)


def plot_score_scatter(spec: PlotSpec):
    table = read_csv(spec.inputs[0], ["score", "e_add_mm"])
    s = _floats(table, "score")
    e = _floats(table, "e_add_mm")
    rho = float(spearmanr(s, e).statistic)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.scatter(s, e, s=8, alpha=0.5)
    ax.set_xlabel("verification score")
    ax.set_ylabel("e_ADD (mm)")
    ax.set_title(f"Spearman rho = {rho:.3f}")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _save(fig, spec.out)


def plot_attention_bars(spec: PlotSpec):
    episodes = read_episodes(spec.inputs[0])
    idx = int(spec.options.get("episode", 0))
    if idx >= len(episodes):
        raise SchemaError(f"episode index {idx} out of range ({len(episodes)} episodes)")
    ep = episodes[idx]
    steps = [s for s in ep["steps"] if s.get("weights")]
    if not steps:
        raise SchemaError("selected episode has no attention weights")
    fig, axes = plt.subplots(1, len(steps), figsize=(2.4 * len(steps), 3.2),
                             squeeze=False)
    for ax, s in zip(axes[0], steps):
        w = np.asarray(s["weights"], dtype=float)
        colors = ["tab:orange" if i == s.get("attended_m") else "tab:blue"
                  for i in range(len(w))]
        ax.bar(np.arange(len(w)), w, color=colors)
        ax.set_title(f"t = {s['t']}")
        ax.set_xlabel("object")
        ax.set_ylim(0, 1)
    axes[0][0].set_ylabel("attention weight")
    fig.suptitle(f"policy {ep['start'].get('policy', '?')}, "
                 f"scene {ep['start'].get('scene_seed', '?')}")
    fig.tight_layout()
    _save(fig, spec.out)


def _grid_positions(grid):
    """Hemisphere viewpoint positions from the logged grid parameters."""
    try:
        radius = float(grid["radius_mm"])
        n_az = int(grid["azimuth_levels"])
        n_el = int(grid["elevation_levels"])
    except (KeyError, TypeError) as e:
        raise SchemaError(f"episode_start.grid: missing field {e}") from e
    az = np.arange(n_az) * (2 * np.pi / n_az)
    el = (np.arange(n_el) + 1) * (np.pi / 2) / (n_el + 1)
    azg, elg = np.meshgrid(az, el)
    azf, elf = azg.ravel(), elg.ravel()
    return radius * np.column_stack([np.cos(elf) * np.cos(azf),
                                     np.cos(elf) * np.sin(azf),
                                     np.sin(elf)])


def plot_trajectory_3d(spec: PlotSpec):
    episodes = read_episodes(spec.inputs[0])
    idx = int(spec.options.get("episode", 0))
    if idx >= len(episodes):
        raise SchemaError(f"episode index {idx} out of range ({len(episodes)} episodes)")
    ep = episodes[idx]
    if "grid" not in ep["start"]:
        raise SchemaError("episode_start: missing column 'grid'")
    pos = _grid_positions(ep["start"]["grid"])
    visited = [int(ep["start"]["start_view"])] + [int(s["view_index"])
                                                  for s in ep["steps"]]
    path = pos[visited]
    fig = plt.figure(figsize=(6, 5))
    ax = fig.add_subplot(projection="3d")
    ax.scatter(pos[:, 0], pos[:, 1], pos[:, 2], s=6, color="lightgray")
    ax.plot(path[:, 0], path[:, 1], path[:, 2], "-", color="tab:blue")
    for a, b in zip(path[:-1], path[1:]):
        ax.quiver(a[0], a[1], a[2], b[0] - a[0], b[1] - a[1], b[2] - a[2],
                  color="tab:blue", arrow_length_ratio=0.12, linewidth=1.2)
    ax.scatter(*path[0], color="tab:green", s=60, label="start")
    ax.scatter(*path[-1], color="tab:red", s=60, label="end")
    for order, p in enumerate(path):
        ax.text(p[0], p[1], p[2], str(order), fontsize=8)
    ax.set_xlabel("x (mm)")
    ax.set_ylabel("y (mm)")
    ax.set_zlabel("z (mm)")
    ax.legend(loc="upper left")
    ax.set_title(f"camera trajectory, policy {ep['start'].get('policy', '?')}")
    fig.tight_layout()
    _save(fig, spec.out)


PLOT_KINDS = {
    "ablation-alpha": plot_ablation_alpha,
    "ablation-T": plot_ablation_t,
    "policy-bars": plot_policy_bars,
    "score-scatter": plot_score_scatter,
    "attention-bars": plot_attention_bars,
    "trajectory-3d": plot_trajectory_3d,
}


def make_plot(spec: PlotSpec):
    if spec.kind not in PLOT_KINDS:
        raise SchemaError(f"unknown plot kind {spec.kind!r}; "
                          f"choose from {sorted(PLOT_KINDS)}")
    if not spec.inputs:
        raise SchemaError("at least one input file is required")
    PLOT_KINDS[spec.kind](spec)
    return spec.out
