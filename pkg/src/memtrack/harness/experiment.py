"""Config-driven runs: generate scenes, prompt on frame 0, track, evaluate, report."""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ..core import Masklet, Prompt
from ..losses import GaussianKernel, LossWeights, sample_loss
from ..memory import MemoryConfig
from ..metrics import FpsTimer, evaluate_masklet, simulate_clicks
from .config import ExperimentConfig
from .scene import SyntheticScene, generate_scene, scene_suite
from .tracker import PatchEmbedder, PropagatorParams, TrackerSession, click_segmenter

log = logging.getLogger(__name__)


def build_session(cfg: ExperimentConfig, mode: str) -> TrackerSession:
    t = cfg.tracker
    return TrackerSession(
        embedder=PatchEmbedder(t.patch, t.position_weight, t.variance_weight),
        memory=MemoryConfig(cfg.memory.delta, cfg.memory.gamma_iou, cfg.memory.n_long, cfg.memory.n_short),
        mode=mode,
        params=PropagatorParams(t.vote_temperature, t.confidence_temperature, 0.5, t.color_sigma),
    )


def make_prompt(cfg: ExperimentConfig, frame, gt0: np.ndarray) -> Prompt:
    """Prompt derived from the frame-0 ground truth."""
    if cfg.prompt.type == "mask":
        return Prompt("mask", mask=gt0)
    if cfg.prompt.type == "box":
        ys, xs = np.nonzero(gt0)
        return Prompt("box", box=(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())))
    seg = click_segmenter(frame)
    return Prompt.from_clicks(simulate_clicks(gt0, None, cfg.prompt.clicks, seg).clicks)


@dataclass
class TrackResult:
    masklet: Masklet
    soft: dict[int, np.ndarray]
    confidences: list[float]
    events: list[dict]
    frames: int
    seconds: float


def track_object(cfg: ExperimentConfig, mode: str, frames, gt: Masklet) -> TrackResult:
    """Prompt once on the first frame, then propagate through the rest of the video."""
    session = build_session(cfg, mode)
    first = frames[0]
    prompt = make_prompt(cfg, first, gt.track[first.index])
    timer = FpsTimer()
    track, soft = {}, {}
    confidences = [1.0]
    with timer:
        m0 = session.start(first, prompt)
        timer.tick()
        for f in frames[1:]:
            s, c = session.propagate(f)
            timer.tick()
            confidences.append(c)
            soft[f.index] = s
            if (s > 0.5).any():
                track[f.index] = s > 0.5
    if m0.any():
        track[first.index] = m0
    soft[first.index] = m0.astype(np.float64)
    events = [{"event": "prompt", "frame": i, "kind": prompt.kind} for i in session.prompt_events]
    events += [{"event": "memory", **json.loads(t.to_json())} for t in session.bank.trace]
    return TrackResult(Masklet(gt.instance_id, gt.category, track), soft, confidences, events,
                       timer.frames, timer.elapsed)


def reacquisition(scene: SyntheticScene, obj: int, j_by_frame: dict[int, float],
                  window: int, threshold: float) -> list[dict]:
    out = []
    for d in scene.disappearances:
        if d.object_id != obj or d.end + 1 >= scene.duration_frames:
            continue
        r = d.end + 1
        frames = range(r, min(scene.duration_frames, r + window + 1))
        out.append({"reappear_frame": r, "success": any(j_by_frame[t] >= threshold for t in frames)})
    return out


def mean_losses(cfg: ExperimentConfig, gt: Masklet, res: TrackResult, num_frames: int) -> dict:
    kernel = GaussianKernel.build(cfg.losses.sigma, cfg.losses.kernel_size)
    w = LossWeights(cfg.losses.lambda_arl, cfg.losses.lambda_tsl)
    shape = gt.shape
    acc: dict[str, list[float]] = {}
    for t in range(num_frames):
        g = gt.track.get(t, np.zeros(shape, dtype=bool))
        p = res.soft.get(t, np.zeros(shape))
        r = sample_loss(p, g, res.confidences[t], float(p.max()), kernel, cfg.losses.focal_gamma, w)
        for k, v in r.__dict__.items():
            acc.setdefault(k, []).append(v)
    return {k: math.fsum(v) / len(v) for k, v in acc.items()}


def run_scene(cfg: ExperimentConfig, scene: SyntheticScene, mode: str) -> dict:
    frames, gts = generate_scene(scene)
    tol = cfg.metrics.boundary_tolerance
    objects = []
    for i, (obj, gt) in enumerate(zip(scene.objects, gts)):
        if not obj.tracked or frames[0].index not in gt.track:
            continue
        res = track_object(cfg, mode, frames, gt)
        rows = evaluate_masklet(res.masklet, gt, len(frames), gt.shape, tol)
        j_by_frame = {t: j for t, j, _ in rows}
        objects.append({
            "instance_id": gt.instance_id,
            "j": math.fsum(r[1] for r in rows) / len(rows),
            "f": math.fsum(r[2] for r in rows) / len(rows),
            "per_frame_j": [r[1] for r in rows],
            "reacquisition": reacquisition(scene, i, j_by_frame, cfg.metrics.reacquire_window,
                                           cfg.metrics.reacquire_j),
            "admissions": sum(1 for e in res.events if e.get("admitted") is not None),
            "losses": mean_losses(cfg, gt, res, len(frames)),
            "events": res.events,
            "_frames": res.frames,
            "_seconds": res.seconds,
        })
    j = math.fsum(o["j"] for o in objects) / len(objects) if objects else 0.0
    f = math.fsum(o["f"] for o in objects) / len(objects) if objects else 0.0
    return {"scene": scene.name, "mode": mode, "j": j, "f": f, "jf": (j + f) / 2, "objects": objects}


def _job(args):
    cfg, scene, mode = args
    return run_scene(cfg, scene, mode)


def _summarize(runs: list[dict], modes: list[str]) -> dict:
    summary = {}
    for mode in modes:
        rs = [r for r in runs if r["mode"] == mode]
        events = [e for r in rs for o in r["objects"] for e in o["reacquisition"]]
        summary[mode] = {
            "j_mean": math.fsum(r["j"] for r in rs) / len(rs),
            "f_mean": math.fsum(r["f"] for r in rs) / len(rs),
            "jf_mean": math.fsum(r["jf"] for r in rs) / len(rs),
            "reacquisition_rate": (sum(e["success"] for e in events) / len(events)) if events else None,
            "reacquisition_events": len(events),
            "admissions": sum(o["admissions"] for r in rs for o in r["objects"]),
        }
    return summary


def run_experiment(cfg: ExperimentConfig, out_dir: Optional[Path] = None) -> dict:
    """Run every (scene, mode) pair and return the machine-readable report.

    Wall-clock throughput is kept out of the report so identical configs give
    byte-identical reports; it is returned under the ``"timing"`` key of
    ``report["_volatile"]`` and written to ``timing.json``.
    """
    scenes = scene_suite(cfg.scenes.kind, cfg.scenes.count, cfg.seed, cfg.scenes.duration)
    modes = list(cfg.memory.modes)
    jobs = [(cfg, s, m) for s in scenes for m in modes]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            runs = list(pool.map(_job, jobs))
    else:
        runs = [_job(j) for j in jobs]

    timing = {}
    for mode in modes:
        frames = sum(o.pop("_frames") for r in runs if r["mode"] == mode for o in r["objects"])
        secs = sum(o.pop("_seconds") for r in runs if r["mode"] == mode for o in r["objects"])
        timing[mode] = {"frames": frames, "seconds": secs, "fps": frames / secs if secs > 0 else None}

    traces = {f"{r['scene']}__{r['mode']}": [e for o in r["objects"] for e in o.pop("events")] for r in runs}
    report = {
        "config": cfg.to_dict(),
        "scenes": [s.name for s in scenes],
        "runs": runs,
        "summary": _summarize(runs, modes),
    }
    if out_dir is not None:
        write_outputs(report, traces, timing, Path(out_dir), figures=cfg.output.figures)
    report["_volatile"] = {"timing": timing, "traces": traces}
    return report


# ---------------------------------------------------------------------------
# trace audit


def audit_trace(events: list[dict], delta: int, gamma_iou: float) -> list[str]:
    """Protocol and memory-gate problems in one event trace (empty list when clean)."""
    problems = []
    first_frame = None
    streak = []
    for e in events:
        if e["event"] == "prompt":
            if first_frame is None:
                first_frame = e["frame"]
            elif e["frame"] != first_frame:
                problems.append(f"prompt issued at frame {e['frame']} after the first frame")
            continue
        ok = e["present"] and e["confidence"] > gamma_iou
        streak = streak + [e["frame_index"]] if ok else []
        if e["admitted"] is not None:
            if len(streak) < delta:
                problems.append(f"admission at frame {e['frame_index']} after only {len(streak)} stable frames")
            elif e["admitted"] not in streak[-delta:]:
                problems.append(f"admitted frame {e['admitted']} was not in the candidate window")
            streak = []
    return problems


# ---------------------------------------------------------------------------
# outputs


def _fmt(x) -> str:
    return "-" if x is None else f"{x:.2f}"


def format_table(report: dict) -> str:
    """Aligned text table: one row per memory mode, one column per scene, then the average."""
    scenes = report["scenes"]
    modes = list(report["summary"])
    header = ["Mode"] + scenes + ["Average", "Reacq"]
    rows = []
    for mode in modes:
        by_scene = {r["scene"]: r["jf"] for r in report["runs"] if r["mode"] == mode}
        s = report["summary"][mode]
        rows.append([mode] + [_fmt(by_scene[n]) for n in scenes] + [_fmt(s["jf_mean"]),
                                                                  _fmt(s["reacquisition_rate"])])
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
             for r in [header] + rows]
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines) + "\n"


def write_outputs(report: dict, traces: dict, timing: dict, out: Path, figures: bool = True) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.json", "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
        fh.write("\n")
    with open(out / "timing.json", "w") as fh:
        json.dump(timing, fh, indent=1, sort_keys=True)
        fh.write("\n")
    with open(out / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scene", "mode", "j", "f", "jf", "reacquired", "reacquisition_events", "admissions"])
        for r in report["runs"]:
            ev = [e for o in r["objects"] for e in o["reacquisition"]]
            w.writerow([r["scene"], r["mode"], f"{r['j']:.6f}", f"{r['f']:.6f}", f"{r['jf']:.6f}",
                        sum(e["success"] for e in ev), len(ev), sum(o["admissions"] for o in r["objects"])])
    (out / "table.txt").write_text(format_table(report))
    tdir = out / "traces"
    tdir.mkdir(exist_ok=True)
    for name, events in traces.items():
        with open(tdir / f"{name}.jsonl", "w") as fh:
            for e in events:
                fh.write(json.dumps(e, sort_keys=True) + "\n")
    if figures:
        from . import plots

        plots.render_report_figures(report, out / "figures")
    log.info("wrote report to %s", out)
