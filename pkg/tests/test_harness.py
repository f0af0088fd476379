import json

import numpy as np
import pytest

from memtrack.core import Click, Frame, Prompt
from memtrack.errors import ConfigError, ContractViolation, DegenerateInputError
from memtrack.harness.config import config_from_dict
from memtrack.harness.experiment import audit_trace, format_table, run_experiment, run_scene
from memtrack.harness.sampler import (CONDITIONAL, LONG_TERM, RECENT, ClipSampler, SamplerConfig,
                                      sample_training_clip)
from memtrack.harness.scene import (Disappearance, SceneObject, SyntheticScene, disappear_scene, generate_scene,
                                    reappearance_scene, render_frame, scene_suite, static_square_scene, zoom_at)
from memtrack.harness.tracker import (PatchEmbedder, TrackerSession, patch_labels, segment_prompt, upsample)
from memtrack.metrics import region_j

# --- scenes


def test_static_scene_identical_masks():
    frames, (mk,) = generate_scene(static_square_scene(10))
    assert mk.frames() == list(range(10))
    assert all(np.array_equal(mk.track[t], mk.track[0]) for t in range(10))
    assert mk.track[0].sum() == 16 * 16


def test_disappear_interval():
    scene = static_square_scene(10)
    scene.disappearances = [Disappearance(0, 3, 6)]
    _, (mk,) = generate_scene(scene)
    assert mk.frames() == [0, 1, 2, 7, 8, 9]


def test_scene_determinism():
    s = reappearance_scene(4, duration=40)
    f1, m1 = generate_scene(s)
    f2, m2 = generate_scene(reappearance_scene(4, duration=40))
    assert all(np.array_equal(a.pixels, b.pixels) for a, b in zip(f1, f2))
    for a, b in zip(m1, m2):
        assert a.frames() == b.frames()
        assert all(np.array_equal(a.track[t], b.track[t]) for t in a.frames())


def test_scene_round_trip_and_validation():
    s = reappearance_scene(2)
    back = SyntheticScene.from_dict(json.loads(json.dumps(s.to_dict())))
    assert back.to_dict() == json.loads(json.dumps(s.to_dict()))
    bad = static_square_scene()
    bad.objects[0].shape = "star"
    with pytest.raises(ConfigError) as exc:
        bad.validate()
    assert exc.value.path == "scene.objects[0].shape"
    bad = static_square_scene()
    bad.disappearances = [Disappearance(0, 5, 50)]
    with pytest.raises(ConfigError):
        bad.validate()
    with pytest.raises(ConfigError):
        SyntheticScene.from_dict({"objects": [{"shape": "rectangle"}]})


def test_zoom_ramps_then_holds():
    s = static_square_scene(40)
    from memtrack.harness.scene import Zoom

    s.zooms = [Zoom(10, 20, 1.5)]
    assert zoom_at(s, 5) == 1.0 and zoom_at(s, 15) == pytest.approx(1.25) and zoom_at(s, 30) == 1.5
    _, (mk,) = generate_scene(s)
    assert mk.track[30].sum() > mk.track[0].sum()


def test_occlusion_order():
    s = SyntheticScene(duration_frames=1, noise_std=0.0, objects=[
        SceneObject("rectangle", (1, 0, 0), (20, 20), [(0, 31.5, 31.5)]),
        SceneObject("rectangle", (0, 1, 0), (10, 10), [(0, 31.5, 31.5)]),
    ])
    frame, masks = render_frame(s, 0)
    assert not (masks[0] & masks[1]).any()
    assert masks[0].sum() == 400 - 100


def test_reappearance_suite_shape():
    suite = scene_suite("reappearance", 5, seed=0)
    assert [s.seed for s in suite] == [0, 1, 2, 3, 4]
    for s in suite:
        assert not s.objects[0].tracked and s.objects[1].tracked
        d = s.disappearances[0]
        assert d.object_id == 1 and d.end + 1 < s.duration_frames
    with pytest.raises(ConfigError):
        scene_suite("nope", 1, 0)


# --- tracker


def test_embedder_features():
    px = np.zeros((8, 8, 3))
    px[:4, :4] = [1.0, 0.5, 0.0]
    emb = PatchEmbedder(patch=4)
    f = emb(px)
    assert f.shape == (4, 6)
    assert np.allclose(f[0, :3], [1.0, 0.5, 0.0])
    assert np.allclose(f[0, 3:5], [0.25, 0.25]) and np.allclose(f[3, 3:5], [0.75, 0.75])
    assert np.all(f[:, 5] == 0)
    with pytest.raises(ContractViolation):
        emb(np.zeros((6, 8, 3)))


def test_patch_labels_and_upsample():
    m = np.zeros((8, 8))
    m[:4, :4] = 1
    lab = patch_labels(m, 4)
    assert lab.tolist() == [1, 0, 0, 0]
    up = upsample(lab, (2, 2), 4)
    assert up.shape == (8, 8) and up[0, 0] == 1 and up[7, 7] == 0


def test_segment_prompt_kinds():
    frames, (mk,) = generate_scene(static_square_scene(1))
    gt = mk.track[0]
    f = frames[0]
    clicks = segment_prompt(f, Prompt.from_clicks([Click(31, 31)]))
    box = segment_prompt(f, Prompt("box", box=(20, 20, 44, 44)))
    mask = segment_prompt(f, Prompt("mask", mask=gt))
    assert region_j(clicks, gt) == 100 and region_j(box, gt) == 100 and np.array_equal(mask, gt)
    neg = segment_prompt(f, Prompt.from_clicks([Click(31, 31), Click(31, 31, "negative")]))
    assert not neg.any()


def _session(scene, mode="divemem"):
    frames, mks = generate_scene(scene)
    s = TrackerSession(mode=mode)
    s.start(frames[0], Prompt("mask", mask=mks[0].track[0]))
    return s, frames, mks[0]


def test_same_frame_is_tracked():
    s, frames, gt = _session(static_square_scene(5))
    for f in frames[1:]:
        soft, conf = s.propagate(f)
        assert region_j(soft > 0.5, gt.track[f.index]) >= 95
        assert 0.0 <= conf <= 1.0
    # replaying the prompt frame's pixels under a later index
    soft, _ = s.propagate(Frame(10, frames[0].pixels))
    assert region_j(soft > 0.5, gt.track[0]) >= 95


def test_disappeared_object_is_not_hallucinated():
    scene = disappear_scene()
    s, frames, gt = _session(scene)
    area0 = gt.track[0].sum()
    for f in frames[1:]:
        soft, conf = s.propagate(f)
        if 10 <= f.index <= 17:
            assert (soft > 0.5).sum() <= 0.01 * area0
            assert conf == 0.0


def test_session_replay_is_identical():
    def run():
        s, frames, _ = _session(disappear_scene())
        outs = [s.propagate(f)[0] for f in frames[1:]]
        return outs, s.bank.dump_trace()

    a, ta = run()
    b, tb = run()
    assert ta == tb
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_session_contract():
    frames, mks = generate_scene(static_square_scene(3))
    s = TrackerSession()
    with pytest.raises(ContractViolation):
        s.propagate(frames[1])
    s.start(frames[0], Prompt("mask", mask=mks[0].track[0]))
    with pytest.raises(ContractViolation):
        s.start(frames[0], Prompt("mask", mask=mks[0].track[0]))
    s.propagate(frames[2])
    with pytest.raises(ContractViolation):
        s.propagate(frames[1])


def test_temporal_embeddings_shift_long_term_keys():
    s, frames, _ = _session(static_square_scene(12))
    s.temporal_embeddings = np.zeros((4, 6))
    for f in frames[1:6]:
        s.propagate(f)
    assert s.bank.admissions == 1
    base = s._keys(s.bank.assemble_context())[0]
    s.temporal_embeddings[0, 0] = 0.5
    shifted = s._keys(s.bank.assemble_context())[0]
    n = 16 * 16
    assert np.array_equal(base[:n], shifted[:n])  # the prompt frame carries no slot
    assert np.allclose(shifted[n:2 * n, 0] - base[n:2 * n, 0], 0.5)


# --- sampler


def test_vanilla_clip():
    rng = np.random.default_rng(0)
    cfg = SamplerConfig("vanilla")
    for _ in range(50):
        c = sample_training_clip(8, cfg, rng)
        assert c.indices == tuple(range(8))
    c = sample_training_clip(30, cfg, rng)
    assert np.all(np.diff(c.indices) == 1)


def test_divemem_clip_distribution():
    rng = np.random.default_rng(0)
    cfg = SamplerConfig("divemem")
    lo, hi = 10**9, -1
    for _ in range(10_000):
        c = sample_training_clip(1000, cfg, rng)
        assert c.roles.count(CONDITIONAL) == 1 and c.roles.count(LONG_TERM) == 2 and c.roles.count(RECENT) == 5
        scattered, run = c.indices[:3], c.indices[3:]
        assert list(run) == list(range(run[0], run[0] + 5))
        assert len(set(c.indices)) == 8
        lo, hi = min(lo, *scattered), max(hi, *scattered)
    assert lo < 100 and hi > 900


def test_mixed_alternation_and_sources():
    sampler = ClipSampler(SamplerConfig("mixed_1_1"), seed=3)
    kinds = [sampler.next_clip(200).kind for _ in range(1000)]
    assert kinds.count("divemem") == 500 and kinds.count("vanilla") == 500
    assert kinds[:4] == ["divemem", "vanilla", "divemem", "vanilla"]
    src = [sampler.next_source() for _ in range(10)]
    assert src == ["image", "video", "video", "video", "video"] * 2


def test_sampler_errors():
    with pytest.raises(DegenerateInputError):
        sample_training_clip(7, SamplerConfig("divemem"), np.random.default_rng(0))
    with pytest.raises(ContractViolation):
        SamplerConfig("other")


# --- experiment


def test_static_scene_any_mode():
    cfg = config_from_dict({"scenes": {"kind": "static", "count": 1, "duration": 20}})
    for mode in ("divemem", "greedy_recent", "short_only"):
        r = run_scene(cfg, static_square_scene(20), mode)
        assert r["jf"] >= 95


def test_small_experiment_report(tmp_path):
    cfg = config_from_dict({
        "scenes": {"kind": "disappear", "count": 2, "duration": 30},
        "memory": {"modes": ["divemem", "greedy_recent", "short_only"]},
        "output": {"figures": True},
    })
    report = run_experiment(cfg, tmp_path)
    assert set(report["summary"]) == {"divemem", "greedy_recent", "short_only"}
    for name in ("report.json", "timing.json", "results.csv", "table.txt",
                 "figures/jf_by_mode.png", "figures/per_frame_j.png"):
        assert (tmp_path / name).exists(), name
    assert len(list((tmp_path / "traces").glob("*.jsonl"))) == 6
    rows = (tmp_path / "results.csv").read_text().splitlines()
    assert rows[0].startswith("scene,mode,j,f,jf") and len(rows) == 7
    table = format_table(report)
    assert "Average" in table and "divemem" in table
    for trace in report["_volatile"]["traces"].values():
        assert audit_trace(trace, 5, 0.95) == []
        assert [e["frame"] for e in trace if e["event"] == "prompt"] == [0]
    saved = json.loads((tmp_path / "report.json").read_text())
    assert "_volatile" not in saved and "fps" not in json.dumps(saved)


def test_audit_flags_bad_traces():
    def mem(t, conf=0.99, admitted=None):
        return {"event": "memory", "frame_index": t, "confidence": conf, "present": True, "admitted": admitted}

    ok = [{"event": "prompt", "frame": 0}] + [mem(t) for t in range(1, 5)] + [mem(5, admitted=3)]
    assert audit_trace(ok, 5, 0.95) == []
    early = [mem(t) for t in range(1, 4)] + [mem(4, admitted=2)]
    assert "after only 4" in audit_trace(early, 5, 0.95)[0]
    gated = [mem(1, 0.9)] + [mem(t) for t in range(2, 6)] + [mem(6, admitted=1)]
    assert audit_trace(gated, 5, 0.95)
    late = ok + [{"event": "prompt", "frame": 9}]
    assert "after the first frame" in audit_trace(late, 5, 0.95)[0]


def test_prompt_types_run():
    for kind in ("clicks", "box", "mask"):
        cfg = config_from_dict({"prompt": {"type": kind}})
        r = run_scene(cfg, static_square_scene(10), "divemem")
        assert r["jf"] >= 95, kind
