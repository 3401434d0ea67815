"""Report figures, rendered to files alongside the delimited outputs.

Every writer produces a byte-deterministic PNG for a given input (fixed
size, fixed dpi, stripped Software metadata), so re-running a command from
its manifest reproduces the figure exactly.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402 - backend must be set first

from .rules import RulebookEntry  # noqa: E402

_SAVE_KWARGS = {"dpi": 110, "metadata": {"Software": None}}


def _save(fig, path: Union[str, Path]) -> None:
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)


def rules_overview_figure(entries: Sequence[RulebookEntry], path: Union[str, Path]) -> None:
    """Precision vs coverage of the mined rules, sized by body length."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    if entries:
        x = [e.metrics.coverage_fraction for e in entries]
        y = [e.metrics.precision for e in entries]
        size = [18 + 10 * len(e.body_defs) for e in entries]
        ax.scatter(x, y, s=size, alpha=0.65, edgecolor="none")
    ax.set_xlabel("coverage fraction")
    ax.set_ylabel("precision")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title(f"rulebook: {len(entries)} rules")
    ax.grid(True, alpha=0.3)
    _save(fig, path)


def rule_metrics_figure(
    labels: Sequence[str],
    precision: Sequence[float],
    recall: Sequence[float],
    f1: Sequence[float],
    path: Union[str, Path],
) -> None:
    """Grouped per-rule precision/recall/F1 bars (last row may be pooled)."""
    n = len(labels)
    fig, ax = plt.subplots(figsize=(max(6.0, 0.6 * n + 2), 4.0))
    idx = range(n)
    width = 0.27
    ax.bar([i - width for i in idx], precision, width, label="precision")
    ax.bar(list(idx), recall, width, label="recall")
    ax.bar([i + width for i in idx], f1, width, label="f1")
    ax.set_xticks(list(idx))
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=7)
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=8)
    ax.grid(True, axis="y", alpha=0.3)
    _save(fig, path)


def oracle_overview_figure(
    qualifying_rewards: Sequence[float],
    harvested_rewards: Sequence[float],
    recall: float,
    path: Union[str, Path],
) -> None:
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    bins = 20
    if qualifying_rewards:
        ax.hist(qualifying_rewards, bins=bins, alpha=0.55, label="oracle qualifying")
    if harvested_rewards:
        ax.hist(harvested_rewards, bins=bins, alpha=0.55, label="search harvest")
    ax.set_xlabel("reward")
    ax.set_ylabel("rules")
    ax.set_title(f"search recall {recall:.3f}")
    ax.legend(fontsize=8)
    _save(fig, path)


def episode_returns_figure(
    rewards: Sequence[float], lengths: Sequence[int], path: Union[str, Path]
) -> None:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.0, 3.4))
    idx = range(len(rewards))
    ax1.bar(list(idx), rewards, color="tab:blue")
    ax1.set_xlabel("episode")
    ax1.set_ylabel("accumulated reward")
    ax2.bar(list(idx), lengths, color="tab:orange")
    ax2.set_xlabel("episode")
    ax2.set_ylabel("episode length")
    for ax in (ax1, ax2):
        ax.grid(True, axis="y", alpha=0.3)
    _save(fig, path)
