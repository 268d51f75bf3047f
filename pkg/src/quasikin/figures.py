"""Render study CSVs into figure files next to the delimited output.

The comparison study gets estimator-vs-estimator boxplots (KL divergence on
a log scale, plus the first rate estimate against its generating value);
the timing study gets median lines with interquartile bands against the
scaled dimension.  Everything is written as PNG with the Agg backend, so
rendering works headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from .errors import ValidationError  # noqa: E402

__all__ = ["render_comparison_figures", "render_timing_figures", "render_figures"]

_COLORS = {"lla": "tab:orange", "em": "tab:blue"}


def _grouped_boxes(ax, df, value_col, estimators, jumps):
    width = 0.8 / max(len(estimators), 1)
    for k, est in enumerate(estimators):
        offset = (k - (len(estimators) - 1) / 2) * width
        data, positions = [], []
        for i, jump in enumerate(jumps):
            vals = df[(df["estimator"] == est) & (df["jump"] == jump)][value_col]
            vals = pd.to_numeric(vals, errors="coerce").dropna()
            if len(vals):
                data.append(vals.to_numpy())
                positions.append(i + offset)
        if not data:
            continue
        box = ax.boxplot(data, positions=positions, widths=width * 0.9,
                         patch_artist=True, showfliers=False,
                         medianprops={"color": "black"})
        for patch in box["boxes"]:
            patch.set_facecolor(_COLORS.get(est, "tab:gray"))
            patch.set_alpha(0.7)
    ax.set_xticks(range(len(jumps)))
    ax.set_xticklabels([str(j) for j in jumps])
    ax.set_xlabel("jump")


def _legend(fig, estimators):
    handles = [plt.Rectangle((0, 0), 1, 1, facecolor=_COLORS.get(e, "tab:gray"),
                             alpha=0.7, label=e.upper()) for e in estimators]
    fig.legend(handles=handles, loc="upper right")


def render_comparison_figures(df: pd.DataFrame, out_dir, beta_true=None) -> list[Path]:
    """Write KL and first-rate boxplot panels, one column per interval count."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    work = df.copy()
    for col in ("N", "jump"):
        work[col] = pd.to_numeric(work[col])
    ns = sorted(work["N"].unique())
    jumps = sorted(work["jump"].unique())
    estimators = [e for e in ("lla", "em") if e in set(work["estimator"])]
    written = []

    work["log10_kl"] = np.log10(
        pd.to_numeric(work["kl"], errors="coerce").where(lambda s: s > 0)
    )
    fig, axes = plt.subplots(1, len(ns), figsize=(5.5 * len(ns), 4.0),
                             squeeze=False, sharey=True)
    for ax, n in zip(axes[0], ns):
        _grouped_boxes(ax, work[work["N"] == n], "log10_kl", estimators, jumps)
        ax.set_title(f"N = {n} intervals")
    axes[0][0].set_ylabel("log10 KL divergence")
    _legend(fig, estimators)
    fig.tight_layout()
    path = out_dir / "comparison_kl.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    written.append(path)

    if "beta_1" in work.columns:
        fig, axes = plt.subplots(1, len(ns), figsize=(5.5 * len(ns), 4.0),
                                 squeeze=False, sharey=True)
        for ax, n in zip(axes[0], ns):
            _grouped_boxes(ax, work[work["N"] == n], "beta_1", estimators, jumps)
            if beta_true is not None:
                ax.axhline(float(beta_true[0]), color="black", linestyle="--",
                           linewidth=1, label="generating value")
            ax.set_title(f"N = {n} intervals")
        axes[0][0].set_ylabel("estimated log-rate 1")
        _legend(fig, estimators)
        fig.tight_layout()
        path = out_dir / "comparison_beta1.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)
    return written


_TIMING_AXES = {"timing-intervals": ("N", "number of intervals"),
                "timing-species": ("p", "number of species"),
                "timing-channels": ("r", "number of channels")}


def render_timing_figures(df: pd.DataFrame, out_dir) -> list[Path]:
    """Median per-iteration time with interquartile band, one file per scenario."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for study, (xcol, xlabel) in _TIMING_AXES.items():
        sub = df[df["study"] == study]
        if sub.empty:
            continue
        xs = sorted(pd.to_numeric(sub[xcol]).unique())
        med, q1, q3 = [], [], []
        for x in xs:
            vals = pd.to_numeric(
                sub[pd.to_numeric(sub[xcol]) == x]["seconds_per_iteration"]
            )
            med.append(vals.median())
            q1.append(vals.quantile(0.25))
            q3.append(vals.quantile(0.75))
        fig, ax = plt.subplots(figsize=(5.0, 4.0))
        ax.plot(xs, med, marker="o", color="tab:blue", label="median")
        ax.fill_between(xs, q1, q3, alpha=0.25, color="tab:blue",
                        label="interquartile range")
        ax.set_xlabel(xlabel)
        ax.set_ylabel("seconds per EM iteration")
        ax.legend()
        fig.tight_layout()
        path = out_dir / f"{study.replace('-', '_')}.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)
    return written


def render_figures(df: pd.DataFrame, out_dir, kind: str | None = None,
                   beta_true=None) -> list[Path]:
    """Dispatch on study kind (inferred from the columns when not given)."""
    if kind is None:
        kind = "timing" if "seconds_per_iteration" in df.columns else "comparison"
    if kind == "comparison":
        return render_comparison_figures(df, out_dir, beta_true=beta_true)
    if kind == "timing":
        return render_timing_figures(df, out_dir)
    raise ValidationError(f"unknown study kind {kind!r}")
