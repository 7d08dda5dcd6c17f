import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis.extra.numpy import arrays

from uta import metrics as M
from uta.core import ShapeError


def brute_confusion(p8, y, t):
    tp = fp = fn = 0
    for v, g in zip(p8.ravel().tolist(), y.ravel().tolist()):
        pred = v >= t and v > 0
        tp += pred and g
        fp += pred and not g
        fn += (not pred) and g
    return tp, fp, fn


def test_confusion_matches_brute_force(rng):
    for _ in range(20):
        p8 = rng.integers(0, 256, (8, 8)).astype(np.uint8)
        y = rng.random((8, 8)) > 0.6
        tp, fp, fn = M.confusion_curves(p8, y)
        for t in range(256):
            assert (tp[t], fp[t], fn[t]) == brute_confusion(p8, y, t), t


def test_perfect_map():
    y = np.zeros((6, 6), bool)
    y[1:4, 2:5] = True
    prec, rec = M.pr_at_thresholds(y * np.uint8(255), y)
    assert np.all(prec == 1) and np.all(rec == 1)
    ev = M.Evaluator()
    ev.step(y.astype(np.float64), y)
    r = ev.report()
    assert r.f_max == 1 and r.f_mean == 1 and r.mae == 0 and r.f_weighted == pytest.approx(1.0, abs=1e-12)


def test_zero_map_is_never_salient():
    y = np.zeros((4, 4), bool)
    y[0] = True
    prec, rec = M.pr_at_thresholds(np.zeros((4, 4), np.uint8), y)
    assert np.all(rec == 0) and np.all(prec == 1)


def test_empty_ground_truth():
    prec, rec = M.pr_at_thresholds(np.zeros((3, 3), np.uint8), np.zeros((3, 3), bool))
    assert np.all(prec == 1) and np.all(rec == 1)


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        M.pr_at_thresholds(np.zeros((3, 3), np.uint8), np.zeros((3, 4), bool))
    with pytest.raises(ShapeError):
        M.mae(np.zeros((3, 3)), np.zeros((4, 3)))


def test_f_beta_examples():
    assert M.f_beta(1.0, 1.0) == 1.0
    for x in (0.1, 0.37, 0.9):
        assert math.isclose(M.f_beta(x, x), x, abs_tol=1e-15)
    assert math.isclose(M.f_beta(0.8, 0.5), 1.3 * 0.4 / 0.74, abs_tol=1e-15)
    assert abs(M.f_beta(0.8, 0.5) - 0.7027) < 1e-4
    assert M.f_beta(0.0, 0.0) == 0.0


def test_f_max_mean(rng):
    flat = np.full(256, 0.3)
    assert M.f_max(flat) == pytest.approx(0.3, abs=1e-15) and M.f_mean(flat) == pytest.approx(0.3, abs=1e-15)
    spike = np.zeros(256)
    spike[1] = 1
    assert M.f_max(spike) == 1
    curve = rng.random(256)
    assert M.f_max(curve) == curve.max() and M.f_mean(curve) == pytest.approx(curve.sum() / 256, abs=1e-15)


def test_mae_examples():
    y = np.array([[0, 1]])
    assert M.mae(y.astype(float), y) == 0
    assert M.mae(np.full((2, 2), 0.5), np.eye(2)) == 0.5
    assert math.isclose(M.mae(np.array([[0.2, 0.9]]), y), 0.15, abs_tol=1e-15)


def test_adaptive_f():
    y = np.zeros((4, 4), bool)
    y[:2] = True
    assert M.f_adaptive(y * np.uint8(255), y) == 1.0


def reference_weighted_f(fg, gt):
    """Loop transcription of the reference weighted F-measure (beta = 1)."""
    h, w = gt.shape
    E = np.abs(fg - gt.astype(np.float64))
    fg_pts = [(i, j) for i in range(h) for j in range(w) if gt[i, j]]
    Dst = np.zeros((h, w))
    Et = E.copy()
    for i in range(h):
        for j in range(w):
            if not gt[i, j]:
                d2 = [((i - a) ** 2 + (j - b) ** 2, a, b) for a, b in fg_pts]
                best = min(d[0] for d in d2)
                Dst[i, j] = math.sqrt(best)
                Et[i, j] = E[next((a, b) for d, a, b in d2 if d == best)]
    # fspecial('gaussian', 7, 5)
    K = np.zeros((7, 7))
    for a in range(7):
        for b in range(7):
            K[a, b] = math.exp(-((a - 3) ** 2 + (b - 3) ** 2) / (2 * 25.0))
    K /= K.sum()
    # imfilter: correlation, zero padding, same size
    EA = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            s = 0.0
            for a in range(7):
                for b in range(7):
                    y, x = i + a - 3, j + b - 3
                    if 0 <= y < h and 0 <= x < w:
                        s += K[a, b] * Et[y, x]
            EA[i, j] = s
    MIN_E_EA = E.copy()
    for i in range(h):
        for j in range(w):
            if gt[i, j] and EA[i, j] < E[i, j]:
                MIN_E_EA[i, j] = EA[i, j]
    B = np.ones((h, w))
    for i in range(h):
        for j in range(w):
            if not gt[i, j]:
                B[i, j] = 2 - 1 * math.exp(math.log(1 - 0.5) / 5 * Dst[i, j])
    Ew = MIN_E_EA * B
    TPw = gt.sum() - Ew[gt].sum()
    FPw = Ew[~gt].sum()
    R = 1 - Ew[gt].mean()
    eps = np.finfo(np.float64).eps
    P = TPw / (eps + TPw + FPw)
    return (1 + 1) * (R * P) / (eps + R + 1 * P)


def _ties_agree(E, gt):
    """True when every background pixel's nearest foreground pixels all carry the same error."""
    pts = np.argwhere(gt)
    for i, j in np.argwhere(~gt):
        d = ((pts - (i, j)) ** 2).sum(1)
        vals = E[tuple(pts[d == d.min()].T)]
        if np.ptp(vals) > 0:
            return False
    return True


def test_weighted_f_matches_reference(rng):
    checked = 0
    for _ in range(12):
        gt = np.zeros((8, 8), bool)
        r0, c0 = rng.integers(0, 4, 2)
        gt[r0:r0 + rng.integers(2, 5), c0:c0 + rng.integers(2, 5)] = True
        fg = rng.random((8, 8))
        # constant foreground error keeps nearest-pixel ties unambiguous
        fg[gt] = rng.random()
        assert _ties_agree(np.abs(fg - gt), gt)
        assert abs(M.f_weighted(fg, gt) - reference_weighted_f(fg, gt)) < 1e-9
        checked += 1
    # arbitrary maps where the tie rule happens not to matter
    for _ in range(200):
        gt = rng.random((8, 8)) > 0.7
        fg = rng.random((8, 8))
        if gt.any() and _ties_agree(np.abs(fg - gt), gt):
            assert abs(M.f_weighted(fg, gt) - reference_weighted_f(fg, gt)) < 1e-9
            checked += 1
    assert checked >= 12


def test_weighted_f_extremes():
    gt = np.zeros((8, 8), bool)
    gt[2:6, 2:6] = True
    assert M.f_weighted(gt.astype(float), gt) == pytest.approx(1.0, abs=1e-12)
    big = np.zeros((64, 64), bool)
    big[16:48, 16:48] = True
    assert M.f_weighted(1.0 - big, big) < 1e-6
    assert M.f_weighted(np.zeros((3, 3)), np.zeros((3, 3))) == 1.0


@settings(max_examples=60)
@given(arrays(np.uint8, (6, 6)), arrays(np.bool_, (6, 6)))
def test_metric_properties(p8, y):
    prec, rec = M.pr_at_thresholds(p8, y)
    f = M.f_beta(prec, rec)
    assert np.all(np.diff(rec) <= 0)
    assert M.f_max(f) >= M.f_mean(f)
    for v in (prec, rec, f):
        assert np.all((v >= 0) & (v <= 1))
    assert 0 <= M.mae(p8, y) <= 1
    assert 0 <= M.f_weighted(p8, y) <= 1 + 1e-12


def test_dataset_mean_is_order_independent(rng):
    maps = [(rng.random((8, 8)), rng.random((8, 8)) > 0.5) for _ in range(5)]
    a, b = M.Evaluator(), M.Evaluator()
    for p, y in maps:
        a.step(p, y)
    for p, y in reversed(maps):
        b.step(p, y)
    ra, rb = a.report(), b.report()
    assert ra.f_max == pytest.approx(rb.f_max, abs=1e-15) and ra.mae == pytest.approx(rb.mae, abs=1e-15)
    assert ra.f_max == ra.f_curve.max() and ra.count == 5


def test_report_outputs(tmp_path, rng):
    ev = M.Evaluator("toy")
    ev.step(rng.random((8, 8)), rng.random((8, 8)) > 0.5)
    r = ev.report()
    M.write_report_csv([r, r], tmp_path / "r.csv")
    assert len((tmp_path / "r.csv").read_text().splitlines()) == 3
    r.write_curves(tmp_path / "c.csv")
    assert len((tmp_path / "c.csv").read_text().splitlines()) == 257
    assert "f_max = " in r.to_text()
    with pytest.raises(ValueError):
        M.Evaluator().report()
