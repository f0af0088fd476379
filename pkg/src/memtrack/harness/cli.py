"""Command line entry point.

Exit codes: 0 success, 1 validation failure (bad config, bad manifest,
misaligned predictions), 2 runtime error.

Dataset directories written by ``generate`` look like::

    out/manifest.json            dataset manifest (see memtrack.masklet_io)
    out/<video>/frames.npz       pixels, float32 array (T, H, W, 3) in [0, 1]
    out/<video>/<instance>.json  run-length masklet file
    out/<video>/scene.json       the scene description that produced the video
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..core import Frame
from ..errors import (AlignmentError, ConfigError, ContractViolation, ManifestReadError,
                      TrackingError)
from ..masklet_io import (DatasetManifest, MaskletRecord, VideoRecord, dataset_stats, format_stats_table,
                          load_manifest, load_masklet, save_manifest, save_masklet, validate_manifest,
                          validate_masklet_files)
from ..metrics import jf_evaluate
from .config import ExperimentConfig, load_config
from .experiment import run_experiment, track_object
from .scene import SyntheticScene, generate_scene, scene_suite

log = logging.getLogger("memtrack")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class ValidationFailed(Exception):
    """Input was read fine but did not pass checks."""


# ---------------------------------------------------------------------------
# dataset directories


def write_video(root: Path, scene: SyntheticScene, manifest: DatasetManifest) -> None:
    frames, masklets = generate_scene(scene)
    vdir = root / scene.name
    vdir.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(vdir / "frames.npz", pixels=np.stack([f.pixels for f in frames]).astype(np.float32))
    (vdir / "scene.json").write_text(json.dumps(scene.to_dict(), indent=1, sort_keys=True) + "\n")
    manifest.videos.append(VideoRecord(scene.name, scene.duration_frames, scene.width, scene.height,
                                       scene.duration_frames / scene.fps))
    for obj, m in zip(scene.objects, masklets):
        if not obj.tracked:
            continue
        rel = f"{scene.name}/{m.instance_id}.json"
        save_masklet(m, root / rel)
        manifest.masklets.append(MaskletRecord(scene.name, m.instance_id, m.category, "instrument",
                                               m.frames(), rel))


def read_frames(root: Path, video_id: str) -> list[Frame]:
    path = root / video_id / "frames.npz"
    try:
        pixels = np.load(path)["pixels"].astype(np.float64)
    except (OSError, KeyError) as exc:
        raise ManifestReadError(f"cannot read frames {path}: {exc}") from exc
    return [Frame(t, p, t / 10.0) for t, p in enumerate(pixels)]


def _load_dataset(root: Path) -> DatasetManifest:
    d = load_manifest(root / "manifest.json")
    problems = validate_manifest(d) + validate_masklet_files(d, root)
    if problems:
        raise ValidationFailed("\n".join(str(p) for p in problems))
    return d


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args) -> int:
    out = Path(args.out)
    if args.scene:
        with open(args.scene) as fh:
            scenes = [SyntheticScene.from_dict(json.load(fh))]
    else:
        scenes = scene_suite(args.kind, args.count, args.seed, args.duration)
    manifest = DatasetManifest(name=out.name or "synthetic")
    for s in scenes:
        write_video(out, s, manifest)
    save_manifest(manifest, out / "manifest.json")
    print(f"wrote {len(scenes)} video(s) to {out}")
    return EXIT_OK


def _config(args) -> ExperimentConfig:
    return load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()


def cmd_track(args) -> int:
    root, out = Path(args.dataset), Path(args.out)
    cfg = _config(args)
    d = _load_dataset(root)
    videos = [v for v in d.videos if args.video is None or v.id in args.video]
    if args.video and len(videos) != len(set(args.video)):
        raise ValidationFailed(f"unknown video id(s): {sorted(set(args.video) - {v.id for v in videos})}")
    pred = DatasetManifest(name=f"{d.name}-{args.mode}")
    traces = {}
    for v in videos:
        frames = read_frames(root, v.id)
        pred.videos.append(v)
        for rec in (m for m in d.masklets if m.video_id == v.id):
            gt = load_masklet(root / rec.rle_path)
            if 0 not in gt.track:
                log.warning("masklet %s/%s has no frame-0 mask; skipped", v.id, rec.instance_id)
                continue
            res = track_object(cfg, args.mode, frames, gt)
            rel = f"{v.id}/{rec.instance_id}.json"
            save_masklet(res.masklet, out / rel)
            pred.masklets.append(MaskletRecord(v.id, rec.instance_id, rec.category, rec.group,
                                               res.masklet.frames(), rel))
            traces[f"{v.id}/{rec.instance_id}"] = res.events
    save_manifest(pred, out / "manifest.json")
    with open(out / "traces.jsonl", "w") as fh:
        for key, events in traces.items():
            for e in events:
                fh.write(json.dumps({"track": key, **e}, sort_keys=True) + "\n")
    print(f"tracked {len(pred.masklets)} object(s) in {len(videos)} video(s); predictions in {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    gt_root, pred_root = Path(args.gt), Path(args.pred)
    gt, pred = _load_dataset(gt_root), _load_dataset(pred_root)
    rows = {}
    for v in gt.videos:
        g = [load_masklet(gt_root / m.rle_path) for m in gt.masklets if m.video_id == v.id]
        p = [load_masklet(pred_root / m.rle_path) for m in pred.masklets if m.video_id == v.id]
        try:
            r = jf_evaluate(p, g, v.num_frames, args.tolerance)
        except AlignmentError as exc:
            raise ValidationFailed(f"video {v.id}: {exc}") from exc
        rows[v.id] = r.to_dict()
    mean = float(np.mean([r["jf_mean"] for r in rows.values()])) if rows else 0.0
    result = {"videos": rows, "jf_mean": mean}
    for vid, r in rows.items():
        print(f"{vid}\tJ={r['j_mean']:.2f}\tF={r['f_mean']:.2f}\tJ&F={r['jf_mean']:.2f}")
    print(f"mean J&F over {len(rows)} video(s): {mean:.2f}")
    if args.out:
        Path(args.out).write_text(json.dumps(result, indent=1, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = load_config(args.config)
    if args.workers is not None:
        cfg.workers = args.workers
    if args.no_figures:
        cfg.output.figures = False
    report = run_experiment(cfg, Path(args.out))
    from .experiment import format_table

    print(format_table(report), end="")
    for mode, t in report["_volatile"]["timing"].items():
        if t["fps"] is not None:
            print(f"{mode}: {t['fps']:.1f} frames/s")
    return EXIT_OK


def cmd_validate(args) -> int:
    path = Path(args.manifest)
    d = load_manifest(path)
    problems = validate_manifest(d)
    if not args.skip_files:
        problems += validate_masklet_files(d, path.parent)
    for p in problems:
        print(p)
    if problems:
        print(f"{len(problems)} problem(s) found", file=sys.stderr)
        return EXIT_INVALID
    print(f"{path}: ok ({len(d.videos)} videos, {len(d.masklets)} masklets)")
    return EXIT_OK


def cmd_stats(args) -> int:
    rows = {}
    for p in args.manifest:
        d = load_manifest(p)
        rows[d.name] = dataset_stats(d, args.digits)
    if args.json:
        print(json.dumps({k: v.as_row() for k, v in rows.items()}, indent=1, sort_keys=True))
    else:
        print(format_stats_table(rows))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="memtrack", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="render synthetic videos and ground-truth masklets")
    g.add_argument("--out", required=True)
    g.add_argument("--scene", help="scene description (JSON); overrides --kind/--count")
    g.add_argument("--kind", default="reappearance", choices=["reappearance", "static", "disappear"])
    g.add_argument("--count", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--duration", type=int, default=120)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("track", help="prompt on frame 0 of each video and track every object")
    t.add_argument("dataset", help="dataset directory containing manifest.json")
    t.add_argument("--out", required=True)
    t.add_argument("--mode", default="divemem", choices=["divemem", "greedy_recent", "short_only"])
    t.add_argument("--video", action="append", help="restrict to this video id (repeatable)")
    t.add_argument("--config", help="experiment config supplying prompt/tracker/memory settings")
    t.set_defaults(func=cmd_track)

    e = sub.add_parser("eval", help="J&F of stored predictions against ground truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--tolerance", type=float, default=None, help="boundary tolerance in pixels")
    e.add_argument("--out", help="write the result as JSON")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("experiment", help="full config-driven run with report, tables and figures")
    x.add_argument("config")
    x.add_argument("--out", required=True)
    x.add_argument("--workers", type=int, default=None)
    x.add_argument("--no-figures", action="store_true")
    x.set_defaults(func=cmd_experiment)

    v = sub.add_parser("validate", help="check a manifest and its masklet files")
    v.add_argument("manifest")
    v.add_argument("--skip-files", action="store_true", help="check the manifest document only")
    v.set_defaults(func=cmd_validate)

    s = sub.add_parser("stats", help="dataset statistics table")
    s.add_argument("manifest", nargs="+")
    s.add_argument("--digits", type=int, default=0, help="decimals for the average duration")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_stats)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValidationFailed, ManifestReadError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (TrackingError, ContractViolation, OSError, ArithmeticError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
