import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from greit_hrnet.metrics import COCO_K, Annotation, Detection, ap_ar, oks, pckh

K1 = [1.0]   # one keypoint with falloff constant 1 keeps OKS hand-computable


def gt_at(image_id, x, y, area=1.0, id=0):
    return Annotation(image_id, [[x, y, 2]], area, id)


def pred_with_oks(image_id, target_oks, score, id, gx=0.0, gy=0.0, area=1.0):
    """Place a one-keypoint prediction so that its OKS to (gx, gy) is ``target_oks``."""
    d = math.sqrt(-2 * area * math.log(target_oks))
    return Detection(image_id, [[gx + d, gy]], score, id)


def test_oks_examples(rng):
    kps = np.column_stack([rng.uniform(0, 100, (17, 2)), np.full(17, 2)])
    gt = Annotation(1, kps, 900.0)
    assert oks(kps[:, :2], gt) == 1.0
    gt1 = Annotation(1, [[0, 0, 2]], 4.0)
    assert oks([[3.0, 0.0]], gt1, [0.5]) == pytest.approx(math.exp(-9 / (2 * 4 * 0.25)), rel=1e-15)
    hidden = Annotation(1, np.column_stack([kps[:, :2], np.zeros(17)]), 900.0)
    assert oks(kps[:, :2], hidden) is None
    # unlabeled keypoints do not count
    half = kps.copy()
    half[1:, 2] = 0
    moved = kps[:, :2] + np.r_[[[0, 0]], np.full((16, 2), 50.0)]
    assert oks(moved, Annotation(1, half, 900.0)) == 1.0
    with pytest.raises(ValueError):
        Annotation(1, kps, 0.0)
    with pytest.raises(ValueError):
        oks(kps[:5, :2], gt)


@given(seed=st.integers(0, 10_000), tx=st.floats(-100, 100), ty=st.floats(-100, 100),
       lam=st.floats(0.1, 10))
def test_oks_translation_and_scale_invariance(seed, tx, ty, lam):
    rng = np.random.default_rng(seed)
    g = rng.uniform(0, 50, (17, 2))
    p = g + rng.normal(0, 3, (17, 2))
    vis = rng.integers(0, 3, 17)
    vis[0] = 2
    area = float(rng.uniform(100, 2000))
    base = oks(p, Annotation(0, np.column_stack([g, vis]), area))
    shifted = oks(p + [tx, ty], Annotation(0, np.column_stack([g + [tx, ty], vis]), area))
    scaled = oks(lam * p, Annotation(0, np.column_stack([lam * g, vis]), lam ** 2 * area))
    assert 0 <= base <= 1
    assert shifted == pytest.approx(base, rel=1e-9, abs=1e-12)
    assert scaled == pytest.approx(base, rel=1e-9, abs=1e-12)


def test_ap_perfect_and_empty():
    gts = [gt_at(i, 10.0 * i, 5.0, id=i) for i in range(3)]
    preds = [Detection(g.image_id, g.keypoints[:, :2], 0.5 + 0.1 * i, i) for i, g in enumerate(gts)]
    assert ap_ar(preds, gts, K1) == {"AP": 1.0, "AP50": 1.0, "AP75": 1.0, "AR": 1.0}
    assert ap_ar([], gts, K1) == {"AP": 0.0, "AP50": 0.0, "AP75": 0.0, "AR": 0.0}
    res = ap_ar(preds, [], K1)
    assert all(math.isnan(v) for v in res.values())


def test_ap_toy_hit_and_miss():
    # image a: prediction with OKS 0.9 (hit at every threshold up to 0.90)
    # image b: prediction with OKS 0.3 (never a hit)
    gts = [gt_at("a", 0, 0, id=0), gt_at("b", 0, 0, id=1)]
    hit_first = [pred_with_oks("a", 0.9, 0.9, 0), pred_with_oks("b", 0.3, 0.8, 1)]
    res = ap_ar(hit_first, gts, K1)
    # ranked list (hit, miss): recall 0.5 at precision 1; the 101-point grid
    # has 51 recall levels in [0, 0.5], all at precision 1, and 50 above with 0.
    assert res["AP50"] == 51 / 101
    assert res["AP75"] == 51 / 101
    assert res["AP"] == pytest.approx(9 * (51 / 101) / 10, abs=1e-15)
    assert res["AR"] == pytest.approx(0.45, abs=1e-15)

    miss_first = [pred_with_oks("a", 0.9, 0.7, 0), pred_with_oks("b", 0.3, 0.8, 1)]
    res = ap_ar(miss_first, gts, K1)
    # ranked list (miss, hit): precision envelope 0.5 up to recall 0.5
    assert res["AP50"] == pytest.approx(0.5 * 51 / 101, abs=1e-15)


def test_greedy_matching_is_one_to_one():
    gts = [gt_at("a", 0, 0, id=0), gt_at("a", 100, 0, id=1)]
    # both predictions sit on the first person; only one can claim it
    preds = [Detection("a", [[0.0, 0.0]], 0.9, 0), Detection("a", [[0.1, 0.0]], 0.8, 1)]
    res = ap_ar(preds, gts, K1)
    # ranked (hit, miss) against two ground truths
    assert res["AP50"] == 51 / 101 and res["AR"] == 0.5


def test_equal_scores_use_id_tie_break():
    gts = [gt_at("a", 0, 0, id=0), gt_at("b", 0, 0, id=1)]
    preds = [pred_with_oks("a", 0.9, 0.5, 0), pred_with_oks("b", 0.3, 0.5, 1)]
    assert ap_ar(preds, gts, K1) == ap_ar(preds[::-1], gts, K1)
    assert ap_ar(preds, gts, K1)["AP50"] == 51 / 101


def test_default_k_constants():
    assert len(COCO_K) == 17 and COCO_K[0] == pytest.approx(0.052)


def test_pckh_examples():
    gts = np.array([[[0, 0, 1], [10, 0, 1], [0, 10, 1]]], dtype=float)
    assert pckh(gts[..., :2], gts, [4.0]) == 100.0
    assert pckh(gts[..., :2] + 3, gts, [4.0]) == 0.0
    preds = gts[..., :2] + np.array([[[1, 0], [0, 2], [3, 0]]])
    # distances 1, 2, 3 against a threshold of 0.5 * 4 = 2: two of three within
    assert pckh(preds, gts, [4.0]) == pytest.approx(200 / 3)
    assert round(pckh(preds, gts, [4.0]), 2) == 66.67
    hidden = gts.copy()
    hidden[0, 2, 2] = 0
    assert pckh(preds, hidden, [4.0]) == 100.0
    with pytest.raises(ValueError):
        pckh(preds, gts, [0.0])


@given(seed=st.integers(0, 10_000), a1=st.floats(0, 2), a2=st.floats(0, 2))
def test_pckh_monotone_in_alpha(seed, a1, a2):
    rng = np.random.default_rng(seed)
    gts = np.concatenate([rng.uniform(0, 50, (4, 6, 2)), rng.integers(0, 2, (4, 6, 1))], axis=-1)
    gts[0, 0, 2] = 1
    preds = gts[..., :2] + rng.normal(0, 5, (4, 6, 2))
    heads = rng.uniform(5, 15, 4)
    lo, hi = sorted((a1, a2))
    assert pckh(preds, gts, heads, lo) <= pckh(preds, gts, heads, hi)
