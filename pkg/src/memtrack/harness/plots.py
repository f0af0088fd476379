"""Report figures (matplotlib, file output only)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def jf_bar_chart(report: dict, path: Path) -> None:
    modes = list(report["summary"])
    vals = [report["summary"][m]["jf_mean"] for m in modes]
    rates = [report["summary"][m]["reacquisition_rate"] for m in modes]
    fig, ax = plt.subplots(figsize=(4 + 0.6 * len(modes), 3.2))
    bars = ax.bar(modes, vals, color="#4c72b0")
    for b, v, r in zip(bars, vals, rates):
        label = f"{v:.1f}" if r is None else f"{v:.1f}\nreacq {r:.2f}"
        ax.text(b.get_x() + b.get_width() / 2, v + 1, label, ha="center", va="bottom", fontsize=8)
    ax.set_ylim(0, 115)
    ax.set_ylabel("mean J&F")
    ax.set_title(f"{len(report['scenes'])} scenes")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def per_frame_curves(report: dict, path: Path, max_scenes: int = 4) -> None:
    scenes = report["scenes"][:max_scenes]
    modes = list(report["summary"])
    fig, axes = plt.subplots(len(scenes), 1, figsize=(7, 1.8 * len(scenes)), sharex=True, squeeze=False)
    for ax, name in zip(axes[:, 0], scenes):
        for mode in modes:
            run = next(r for r in report["runs"] if r["scene"] == name and r["mode"] == mode)
            for o in run["objects"]:
                ax.plot(np.arange(len(o["per_frame_j"])), o["per_frame_j"], label=mode, lw=1)
            for ev in (e for o in run["objects"] for e in o["reacquisition"]):
                ax.axvline(ev["reappear_frame"], color="grey", ls=":", lw=0.8)
        ax.set_ylim(-5, 105)
        ax.set_ylabel(name, fontsize=7)
    axes[0, 0].legend(fontsize=7, loc="lower left")
    axes[-1, 0].set_xlabel("frame")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def render_report_figures(report: dict, out_dir: Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [out_dir / "jf_by_mode.png", out_dir / "per_frame_j.png"]
    jf_bar_chart(report, paths[0])
    per_frame_curves(report, paths[1])
    return paths
