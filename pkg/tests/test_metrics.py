import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from memtrack.core import NEGATIVE, POSITIVE, Masklet
from memtrack.errors import AlignmentError, ContractViolation, DegenerateInputError
from memtrack.metrics import (FpsTimer, boundary_f, boundary_map, default_boundary_tolerance, frames_per_second,
                              jf_evaluate, largest_component, next_click, region_j, simulate_clicks)
from tests.strategies import masks


def square(n=32, top=8, left=8, size=10):
    m = np.zeros((n, n), bool)
    m[top:top + size, left:left + size] = True
    return m


def brute_boundary_f(pred, gt, tol):
    """Boundary F by exhaustive nearest-boundary search over pixel pairs."""
    def boundary(m):
        h, w = m.shape
        out = []
        for y in range(h):
            for x in range(w):
                if m[y, x] and any(0 <= y + dy < h and 0 <= x + dx < w and not m[y + dy, x + dx]
                                   for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1))):
                    out.append((y, x))
        return out

    bp, bg = boundary(pred), boundary(gt)
    if not bp and not bg:
        return 100.0 if np.array_equal(pred, gt) else 0.0
    if not bp or not bg:
        return 0.0

    def hits(src, dst):
        return sum(1 for a in src if min(math.dist(a, b) for b in dst) <= tol)

    p, r = hits(bp, bg) / len(bp), hits(bg, bp) / len(bg)
    return 0.0 if p + r == 0 else 100 * 2 * p * r / (p + r)


# --- J


def test_region_j_cases():
    m = square()
    assert region_j(m, m) == 100
    assert region_j(m, np.roll(m, 15, axis=1)) == 0
    a = np.array([[1, 1, 0]], bool)
    b = np.array([[0, 1, 1]], bool)
    assert region_j(a, b) == pytest.approx(100 / 3)


@given(masks(2, 8), st.integers(0, 3))
def test_region_j_symmetric(m, k):
    other = np.roll(m, k, axis=1)
    assert region_j(m, other) == region_j(other, m)


# --- F


def test_boundary_identical_and_far():
    m = square()
    assert boundary_f(m, m) == 100
    a = np.zeros((40, 40), bool)
    a[2:5, 2:5] = True
    b = np.zeros((40, 40), bool)
    b[30:33, 30:33] = True
    assert boundary_f(a, b) == 0


def test_boundary_shift_within_tolerance():
    gt = square(40, 10, 10, 12)
    tol = default_boundary_tolerance(40, 40)
    assert tol == 1
    for k in range(1, 4):
        pred = np.roll(gt, k, axis=1)
        expected = brute_boundary_f(pred, gt, k)
        assert boundary_f(pred, gt, tolerance=k) == pytest.approx(expected, abs=1e-9) == 100.0


def test_boundary_matches_brute_force_random():
    rng = np.random.default_rng(8)
    for _ in range(30):
        gt = rng.random((12, 12)) < 0.5
        pred = rng.random((12, 12)) < 0.5
        tol = int(rng.integers(0, 3))
        assert boundary_f(pred, gt, tol) == pytest.approx(brute_boundary_f(pred, gt, tol), abs=1e-9)


def test_image_edge_is_not_boundary():
    assert not boundary_map(np.ones((5, 5), bool)).any()
    assert boundary_f(np.ones((5, 5), bool), np.ones((5, 5), bool)) == 100
    assert boundary_f(np.zeros((5, 5), bool), np.zeros((5, 5), bool)) == 100
    assert boundary_f(np.ones((5, 5), bool), np.zeros((5, 5), bool)) == 0


@given(masks(3, 10), masks(3, 10))
def test_boundary_monotone_in_tolerance(a, b):
    if a.shape != b.shape:
        b = np.resize(b, a.shape)
    vals = [boundary_f(a, b, t) for t in (0, 1, 2, 4, 8)]
    assert all(y >= x - 1e-12 for x, y in zip(vals, vals[1:]))
    assert all(0 <= v <= 100 for v in vals)


def test_boundary_negative_tolerance():
    with pytest.raises(ContractViolation):
        boundary_f(square(), square(), -1)


# --- J&F aggregation


def test_jf_perfect_and_empty():
    gt = Masklet(1, None, {0: square(), 1: square(top=9)})
    r = jf_evaluate([gt], [gt])
    assert (r.j_mean, r.f_mean, r.jf_mean) == (100, 100, 100)
    r = jf_evaluate([Masklet(1, None, {})], [gt])
    assert r.j_mean == 0


def test_jf_unweighted_mean():
    gt1 = Masklet(1, None, {0: square()})
    gt2 = Masklet(2, None, {0: square(top=2, left=2, size=4)})
    far = Masklet(2, None, {0: square(top=20, left=20, size=4)})
    r = jf_evaluate([gt1, far], [gt1, gt2])
    assert [(i, j, f) for i, j, f in r.per_masklet] == [(1, 100, 100), (2, 0, 0)]
    assert r.jf_mean == 50
    assert r.jf_mean == (r.j_mean + r.f_mean) / 2


def test_jf_misaligned():
    with pytest.raises(AlignmentError) as exc:
        jf_evaluate([Masklet(2, None, {0: square()})], [Masklet(1, None, {0: square()})])
    assert exc.value.missing_in_pred == [1] and exc.value.missing_in_gt == [2]


def test_jf_absent_frames_scored_empty():
    gt = Masklet(1, None, {0: square(), 2: square()})
    pred = Masklet(1, None, {0: square(), 2: square()})
    r = jf_evaluate([pred], [gt], num_frames=3)
    assert r.jf_mean == 100
    pred = Masklet(1, None, {0: square(), 1: square(), 2: square()})
    r = jf_evaluate([pred], [gt], num_frames=3)
    assert r.j_mean == pytest.approx(200 / 3)


# --- clicks


def test_first_click_at_center():
    gt = square(32, 4, 6, 11)
    seq = simulate_clicks(gt, n=1)
    assert len(seq) == 1
    c = seq.clicks[0]
    assert c.polarity == POSITIVE and (c.x, c.y) == (11, 9)


def test_no_error_no_refinement():
    gt = square()
    assert len(simulate_clicks(gt, gt, n=3)) == 1


def test_false_positive_blob_gets_negative_click():
    gt = square(40, 5, 5, 12)
    pred = gt.copy()
    pred[28:35, 25:32] = True  # spurious 7x7 blob
    seq = simulate_clicks(gt, pred, n=2)
    c = seq.clicks[1]
    assert c.polarity == NEGATIVE
    assert (c.x, c.y) == (28, 31)


def test_largest_error_region_oracle():
    rng = np.random.default_rng(2)
    for _ in range(50):
        gt = rng.random((10, 10)) < 0.5
        pred = rng.random((10, 10)) < 0.5
        c = next_click(gt, pred)
        fn = largest_component(gt & ~pred)
        fp = largest_component(pred & ~gt)
        sizes = (fn.sum() if fn is not None else -1, fp.sum() if fp is not None else -1)
        if sizes[0] != sizes[1]:
            assert c.polarity == (POSITIVE if sizes[0] > sizes[1] else NEGATIVE)
        region = fn if c.polarity == POSITIVE else fp
        assert region[c.y, c.x]


def test_largest_component_is_four_connected():
    m = np.zeros((5, 5), bool)
    m[0, 0] = m[1, 1] = m[2, 2] = True  # diagonal pixels are separate components
    m[4, 2:5] = True
    comp = largest_component(m)
    assert comp.sum() == 3 and comp[4, 2:5].all()
    assert largest_component(np.zeros((3, 3), bool)) is None


def test_refinement_with_segmenter_and_default_flip():
    gt = square()
    pred = np.zeros_like(gt)
    calls = []

    def seg(clicks):
        calls.append(len(clicks))
        return gt if len(clicks) >= 2 else pred

    seq = simulate_clicks(gt, n=3, segment=seg)
    assert [c.polarity for c in seq.clicks] == [POSITIVE, POSITIVE]
    assert calls == [1, 2]
    seq2 = simulate_clicks(gt, pred, n=3)
    assert len(seq2) == 2  # the flipped region already fixes everything


@given(masks(4, 10), masks(4, 10))
def test_clicks_deterministic_and_valid(gt, pred):
    if pred.shape != gt.shape:
        pred = np.resize(pred, gt.shape)
    if not gt.any():
        with pytest.raises(DegenerateInputError):
            simulate_clicks(gt, pred, 3)
        return
    a = simulate_clicks(gt, pred, 3)
    assert a.clicks == simulate_clicks(gt, pred, 3).clicks
    first = a.clicks[0]
    assert first.polarity == POSITIVE and gt[first.y, first.x]
    assert 1 <= len(a) <= 3


# --- throughput


def test_fps():
    assert frames_per_second(100, 2.0) == 50.0
    assert math.isfinite(frames_per_second(1, 0.0)) and frames_per_second(1, 0.0) > 0
    with pytest.raises(DegenerateInputError):
        frames_per_second(0, 1.0)
    ticks = iter([10.0, 12.0])
    t = FpsTimer(clock=lambda: next(ticks))
    with t:
        t.tick(100)
    assert t.fps == 50.0


def test_fps_repeat_sanity_band():
    def workload():
        t = FpsTimer()
        with t:
            for _ in range(20):
                boundary_f(square(64), square(64, top=9))
                t.tick()
        return t.fps

    a, b = workload(), workload()
    assert max(a, b) / min(a, b) < 3
