"""Heatmap decoding and the geometry between detection boxes and network input."""
from dataclasses import dataclass, field

import numpy as np


class BoxError(ValueError):
    pass


def extend_box(box, aspect=4 / 3):
    """Grow ``(x, y, w, h)`` symmetrically about its center until ``h / w == aspect``.

    Only the side that is too short grows; the box never shrinks.
    """
    x, y, w, h = (float(v) for v in box)
    if not (w > 0 and h > 0) or not np.isfinite([x, y, w, h]).all():
        raise BoxError(f"degenerate box {box}")
    cx, cy = x + w / 2, y + h / 2
    if h / w < aspect:
        h = w * aspect
    elif h / w > aspect:
        w = h / aspect
    return (cx - w / 2, cy - h / 2, w, h)


@dataclass
class BoxTransform:
    """Axis-aligned affine map from a source-image box onto the network input."""
    center: tuple
    size: tuple          # box (w, h) in source pixels
    output_size: tuple   # network input (w, h)

    def __post_init__(self):
        if min(self.size) <= 0 or min(self.output_size) <= 0:
            raise BoxError(f"non-invertible transform: box {self.size} -> {self.output_size}")

    @classmethod
    def from_box(cls, box, input_hw):
        x, y, w, h = box
        return cls((x + w / 2, y + h / 2), (w, h), (input_hw[1], input_hw[0]))

    @property
    def matrix(self):
        (cx, cy), (w, h), (ow, oh) = self.center, self.size, self.output_size
        sx, sy = ow / w, oh / h
        return np.array([[sx, 0.0, -sx * (cx - w / 2)],
                         [0.0, sy, -sy * (cy - h / 2)]])

    @property
    def inverse_matrix(self):
        m = self.matrix
        sx, sy = m[0, 0], m[1, 1]
        return np.array([[1 / sx, 0.0, -m[0, 2] / sx],
                         [0.0, 1 / sy, -m[1, 2] / sy]])

    def to_input(self, pts):
        return _apply(self.matrix, pts)

    def to_source(self, pts):
        return _apply(self.inverse_matrix, pts)


def _apply(m, pts):
    pts = np.asarray(pts, dtype=np.float64)
    return pts @ m[:, :2].T + m[:, 2]


def crop_to_input(image, bt: BoxTransform):
    """Bilinearly resample the box region of ``image`` (N, C, H, W) to input size."""
    n, c, h, w = image.shape
    ow, oh = bt.output_size
    ys, xs = np.mgrid[0:oh, 0:ow].astype(np.float64)
    src = bt.to_source(np.stack([xs.ravel(), ys.ravel()], axis=1))
    sx, sy = src[:, 0], src[:, 1]
    x0, y0 = np.floor(sx).astype(int), np.floor(sy).astype(int)
    fx, fy = sx - x0, sy - y0
    out = np.zeros((n, c, oh * ow), dtype=image.dtype)
    for dy, wy in ((0, 1 - fy), (1, fy)):
        for dx, wx in ((0, 1 - fx), (1, fx)):
            xi, yi = x0 + dx, y0 + dy
            ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            vals = np.zeros((n, c, oh * ow), dtype=image.dtype)
            vals[:, :, ok] = image[:, :, yi[ok], xi[ok]]
            out += (vals * (wx * wy)).astype(image.dtype)
    return out.reshape(n, c, oh, ow)


def gaussian_target(center, sigma, h, w):
    """Unnormalized 2D Gaussian, peak 1 at ``center = (x, y)``."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    cx, cy = center
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    return np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * sigma ** 2))


def decode_heatmaps(hm, quarter_offset=True):
    """Argmax keypoints in heatmap coordinates.

    Returns ``coords`` (N, K, 2) as ``(x, y)`` and ``scores`` (N, K), the raw
    peak values.  Ties go to the smallest linear index.  With
    ``quarter_offset`` an interior peak moves 0.25 px toward its larger
    horizontal and vertical neighbor; border peaks are left alone.
    """
    hm = np.asarray(hm)
    n, k, h, w = hm.shape
    if h < 2 or w < 2:
        raise ValueError(f"heatmaps must be at least 2x2, got {h}x{w}")
    flat = hm.reshape(n, k, h * w)
    idx = np.argmax(flat, axis=2)
    scores = np.take_along_axis(flat, idx[..., None], axis=2)[..., 0]
    ys, xs = np.divmod(idx, w)
    coords = np.stack([xs, ys], axis=-1).astype(np.float64)
    if quarter_offset:
        for b in range(n):
            for j in range(k):
                x, y = xs[b, j], ys[b, j]
                if 0 < x < w - 1 and 0 < y < h - 1:
                    m = hm[b, j]
                    coords[b, j, 0] += 0.25 * np.sign(m[y, x + 1] - m[y, x - 1])
                    coords[b, j, 1] += 0.25 * np.sign(m[y + 1, x] - m[y - 1, x])
    return coords, scores


def _validate_pairs(flip_pairs, k):
    seen = set()
    for a, b in flip_pairs:
        if a == b or not (0 <= a < k and 0 <= b < k) or a in seen or b in seen:
            raise ValueError(f"invalid flip pairs {flip_pairs} for {k} keypoints")
        seen.update((a, b))


def flip_permutation(k, flip_pairs):
    _validate_pairs(flip_pairs, k)
    perm = np.arange(k)
    for a, b in flip_pairs:
        perm[a], perm[b] = b, a
    return perm


def flip_back(hm_flipped, flip_pairs):
    """Mirror heatmaps of a horizontally flipped image and swap left/right channels."""
    hm_flipped = np.asarray(hm_flipped)
    perm = flip_permutation(hm_flipped.shape[1], flip_pairs)
    return hm_flipped[:, perm, :, ::-1]


def flip_average(hm, hm_flipped, flip_pairs):
    hm = np.asarray(hm)
    if hm.shape != np.shape(hm_flipped):
        raise ValueError(f"heatmap shapes differ: {hm.shape} vs {np.shape(hm_flipped)}")
    return (hm + flip_back(hm_flipped, flip_pairs)) / 2


@dataclass
class PoseResult:
    keypoints: np.ndarray        # (K, 3): x, y in source pixels, score
    box: tuple
    meta: dict = field(default_factory=dict)

    def to_record(self, image_id):
        return {
            "image_id": image_id,
            "keypoints": [float(v) for v in self.keypoints.reshape(-1)],
            "box": [float(v) for v in self.box],
            "score": float(np.mean(self.keypoints[:, 2])),
            "meta": self.meta,
        }


def map_to_source(coords, scores, bt: BoxTransform, heatmap_hw, box=None, meta=None):
    """Heatmap coordinates -> network input (by the head stride) -> source image."""
    coords = np.asarray(coords, dtype=np.float64)
    hh, hw = heatmap_hw
    ow, oh = bt.output_size
    scaled = coords * np.array([ow / hw, oh / hh])
    src = bt.to_source(scaled)
    if not np.isfinite(src).all():
        raise BoxError("mapped coordinates are not finite")
    kps = np.concatenate([src, np.asarray(scores, dtype=np.float64)[:, None]], axis=1)
    if box is None:
        (cx, cy), (w, h) = bt.center, bt.size
        box = (cx - w / 2, cy - h / 2, w, h)
    return PoseResult(kps, tuple(box), dict(meta or {}))
