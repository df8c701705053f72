import numpy as np
import pytest
from hypothesis import given, strategies as st

from greit_hrnet.network import COCO_FLIP_PAIRS
from greit_hrnet.posedecode import (BoxError, BoxTransform, crop_to_input, decode_heatmaps,
                                    extend_box, flip_average, flip_back, gaussian_target,
                                    map_to_source)


def test_extend_box_examples():
    x, y, w, h = extend_box((0, 0, 100, 100))
    assert (w, h) == (100, pytest.approx(400 / 3)) and y == pytest.approx(-50 / 3)
    assert extend_box((10, 20, 30, 40)) == (10, 20, 30, 40)
    assert extend_box((0, 0, 300, 100))[2:] == (300, 400)
    for bad in [(0, 0, 0, 10), (0, 0, 10, -1), (0, 0, float("nan"), 4)]:
        with pytest.raises(BoxError):
            extend_box(bad)


@given(x=st.floats(-500, 500), y=st.floats(-500, 500), w=st.floats(0.5, 800), h=st.floats(0.5, 800))
def test_extend_box_ratio_and_containment(x, y, w, h):
    ex, ey, ew, eh = extend_box((x, y, w, h))
    assert abs(eh / ew - 4 / 3) < 1e-9
    tol = 1e-9 * max(1.0, abs(x), abs(y), w, h)
    assert ex <= x + tol and ey <= y + tol
    assert ex + ew >= x + w - tol and ey + eh >= y + h - tol
    assert ew >= w - tol and eh >= h - tol


def test_box_transform_roundtrip(rng):
    bt = BoxTransform((50.0, 80.0), (75.0, 100.0), (192, 256))
    pts = rng.uniform(-100, 300, (20, 2))
    np.testing.assert_allclose(bt.to_source(bt.to_input(pts)), pts, atol=1e-6)
    np.testing.assert_allclose(bt.matrix[:, :2] @ bt.inverse_matrix[:, :2], np.eye(2), atol=1e-12)
    with pytest.raises(BoxError):
        BoxTransform((0, 0), (0, 10), (192, 256))


def test_decode_examples():
    hm = np.zeros((1, 1, 8, 8))
    hm[0, 0, 4, 3] = 1.0
    hm[0, 0, 4, 4] = 0.5
    hm[0, 0, 4, 2] = 0.1
    coords, scores = decode_heatmaps(hm, quarter_offset=True)
    assert tuple(coords[0, 0]) == (3.25, 4.0) and scores[0, 0] == 1.0
    hm = np.zeros((1, 1, 8, 8))
    hm[0, 0, 7, 7] = 1.0
    hm[0, 0, 6, 7] = 0.5
    coords, _ = decode_heatmaps(hm, quarter_offset=True)
    assert tuple(coords[0, 0]) == (7.0, 7.0)
    coords, scores = decode_heatmaps(np.full((2, 3, 4, 5), 0.3))
    assert np.all(coords == 0) and np.all(scores == 0.3)
    with pytest.raises(ValueError):
        decode_heatmaps(np.zeros((1, 1, 1, 4)))


def test_decode_shifts_toward_larger_vertical_neighbor():
    hm = np.zeros((1, 1, 6, 6))
    hm[0, 0, 2, 2], hm[0, 0, 1, 2], hm[0, 0, 3, 2] = 1.0, 0.2, 0.1
    coords, _ = decode_heatmaps(hm)
    assert tuple(coords[0, 0]) == (2.0, 1.75)
    coords, _ = decode_heatmaps(hm, quarter_offset=False)
    assert tuple(coords[0, 0]) == (2.0, 2.0)


@given(cx=st.integers(1, 46), cy=st.integers(1, 62), dx=st.floats(-0.49, 0.49),
       dy=st.floats(-0.49, 0.49), sigma=st.floats(1.0, 3.0))
def test_decode_recovers_gaussian_centers(cx, cy, dx, dy, sigma):
    hm = gaussian_target((cx + dx, cy + dy), sigma, 64, 48)[None, None]
    coords, scores = decode_heatmaps(hm)
    assert abs(coords[0, 0, 0] - (cx + dx)) <= 0.25 + 1e-12
    assert abs(coords[0, 0, 1] - (cy + dy)) <= 0.25 + 1e-12
    assert scores[0, 0] == hm.max()
    exact = decode_heatmaps(gaussian_target((cx, cy), sigma, 64, 48)[None, None])[0]
    assert tuple(exact[0, 0]) == (cx, cy)


def test_gaussian_target_examples():
    g = gaussian_target((20, 30), 2.0, 64, 48)
    assert g.shape == (64, 48) and g[30, 20] == 1.0
    assert g[30, 23] == g[30, 17] and g[33, 20] == g[27, 20]
    assert abs(g.sum() - 2 * np.pi * 4) / (2 * np.pi * 4) < 0.01
    with pytest.raises(ValueError):
        gaussian_target((0, 0), 0.0, 4, 4)


def flip_oracle(hm, hm_flipped, pairs):
    n, k, h, w = hm.shape
    swap = {a: b for a, b in pairs} | {b: a for a, b in pairs}
    out = np.empty_like(hm)
    for b in range(n):
        for j in range(k):
            src = swap.get(j, j)
            for y in range(h):
                for x in range(w):
                    out[b, j, y, x] = (hm[b, j, y, x] + hm_flipped[b, src, y, w - 1 - x]) / 2
    return out


def test_flip_average_examples(rng):
    hm = rng.standard_normal((2, 17, 4, 5))
    mirrored = flip_back(hm, COCO_FLIP_PAIRS)
    np.testing.assert_array_equal(flip_average(hm, mirrored, COCO_FLIP_PAIRS), hm)
    sym = (hm + mirrored) / 2
    np.testing.assert_allclose(flip_average(sym, sym, COCO_FLIP_PAIRS), sym, atol=1e-15)
    np.testing.assert_array_equal(flip_average(hm, hm, ()), (hm + hm[..., ::-1]) / 2)
    other = rng.standard_normal(hm.shape)
    np.testing.assert_allclose(flip_average(hm, other, COCO_FLIP_PAIRS),
                               flip_oracle(hm, other, COCO_FLIP_PAIRS), atol=1e-15)


def test_flip_average_rejects_bad_pairs(rng):
    hm = rng.standard_normal((1, 4, 3, 3))
    for bad in [((0, 0),), ((0, 1), (1, 2)), ((0, 9),)]:
        with pytest.raises(ValueError):
            flip_average(hm, hm, bad)
    with pytest.raises(ValueError):
        flip_average(hm, hm[:, :3], ())


def test_map_to_source_examples():
    ident = BoxTransform((24.0, 32.0), (48.0, 64.0), (48, 64))
    res = map_to_source([[3.0, 5.0]], [0.7], ident, (64, 48))
    np.testing.assert_allclose(res.keypoints, [[3.0, 5.0, 0.7]], atol=1e-12)
    quarter = BoxTransform((96.0, 128.0), (192.0, 256.0), (192, 256))
    res = map_to_source([[10.0, 10.0]], [0.2], quarter, (64, 48))
    np.testing.assert_allclose(res.keypoints[0, :2], [40.0, 40.0], atol=1e-12)
    assert res.keypoints[0, 2] == 0.2


def test_source_to_heatmap_roundtrip(rng):
    box = extend_box((37.0, 12.0, 90.0, 140.0))
    bt = BoxTransform.from_box(box, (256, 192))
    pts = np.column_stack([rng.uniform(box[0], box[0] + box[2], 30),
                           rng.uniform(box[1], box[1] + box[3], 30)])
    hm_coords = np.round(bt.to_input(pts) / 4.0)   # quantize to heatmap pixels
    back = map_to_source(hm_coords, np.ones(30), bt, (64, 48)).keypoints[:, :2]
    px_size = np.array(bt.size) / np.array([48, 64])
    assert np.all(np.abs(back - pts) <= 0.5 * px_size + 1e-9)


def test_crop_to_input_samples_box(rng):
    img = rng.standard_normal((1, 3, 20, 30)).astype(np.float32)
    bt = BoxTransform((15.0, 10.0), (30.0, 20.0), (30, 20))   # identity crop
    np.testing.assert_allclose(crop_to_input(img, bt), img, atol=1e-6)
    half = BoxTransform((10.0, 6.0), (8.0, 4.0), (16, 8))      # 2x zoom on an interior region
    out = crop_to_input(img, half)
    assert out.shape == (1, 3, 8, 16)
    np.testing.assert_allclose(out[..., ::2, ::2], img[..., 4:8, 6:14], atol=1e-6)
