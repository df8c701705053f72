"""OKS-based AP/AR and PCKh."""
from dataclasses import dataclass

import numpy as np

# COCO per-keypoint sigmas; the falloff constant is k = 2 * sigma.
COCO_SIGMAS = np.array([.26, .25, .25, .35, .35, .79, .79, .72, .72,
                        .62, .62, 1.07, 1.07, .87, .87, .89, .89]) / 10.0
COCO_K = 2 * COCO_SIGMAS

OKS_THRESHOLDS = np.linspace(0.5, 0.95, 10)
RECALL_POINTS = np.linspace(0.0, 1.0, 101)


@dataclass
class Annotation:
    image_id: object
    keypoints: np.ndarray    # (K, 3): x, y, visibility in {0, 1, 2}
    area: float
    id: int = 0

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=np.float64).reshape(-1, 3)
        if not self.area > 0:
            raise ValueError(f"annotation {self.id}: area must be positive")


@dataclass
class Detection:
    image_id: object
    keypoints: np.ndarray    # (K, 2) or (K, 3); a third column is ignored
    score: float
    id: int = 0

    def __post_init__(self):
        kp = np.asarray(self.keypoints, dtype=np.float64)
        self.keypoints = kp.reshape(kp.shape[0], -1) if kp.ndim == 2 else kp.reshape(-1, 3)


def oks(pred, gt: Annotation, k_consts=COCO_K):
    """Mean over labeled keypoints of ``exp(-d^2 / (2 * area * k^2))``; None if none are labeled."""
    pred = np.asarray(pred, dtype=np.float64)[:, :2]
    k_consts = np.asarray(k_consts, dtype=np.float64)
    if pred.shape[0] != gt.keypoints.shape[0] or k_consts.shape[0] != pred.shape[0]:
        raise ValueError("keypoint counts of prediction, ground truth and k constants differ")
    labeled = gt.keypoints[:, 2] > 0
    if not labeled.any():
        return None
    d2 = np.sum((pred - gt.keypoints[:, :2]) ** 2, axis=1)
    e = np.exp(-d2 / (2 * gt.area * k_consts ** 2))
    return float(e[labeled].mean())


def _sorted_preds(preds):
    return sorted(preds, key=lambda p: (-p.score, p.id))


def _match_image(preds, gts, k_consts, threshold):
    """Greedy one-to-one matching: each prediction in score order takes the best free gt."""
    sims = [[oks(p.keypoints, g, k_consts) for g in gts] for p in preds]
    taken = [False] * len(gts)
    hits = []
    for row in sims:
        free = [(s, -j) for j, s in enumerate(row)
                if s is not None and not taken[j] and s >= threshold]
        if free:
            taken[-max(free)[1]] = True
        hits.append(bool(free))
    return hits


def _interp_precision(tp, n_gt):
    """101-point interpolated precision over cumulative true-positive flags."""
    tp = np.asarray(tp, dtype=np.float64)
    if tp.size == 0:
        return 0.0, 0.0
    ctp = np.cumsum(tp)
    recall = ctp / n_gt
    precision = ctp / np.arange(1, tp.size + 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    q = np.where(idx < tp.size, envelope[np.minimum(idx, tp.size - 1)], 0.0)
    return float(q.mean()), float(recall[-1])


def ap_ar(preds, gts, k_consts=COCO_K, thresholds=OKS_THRESHOLDS):
    """Returns ``{"AP", "AP50", "AP75", "AR"}``; NaN everywhere when no ground truth is labeled."""
    gts = [g for g in gts if (g.keypoints[:, 2] > 0).any()]
    n_gt = len(gts)
    nan = float("nan")
    if n_gt == 0:
        return {"AP": nan, "AP50": nan, "AP75": nan, "AR": nan}
    by_image = {}
    for g in gts:
        by_image.setdefault(g.image_id, ([], []))[1].append(g)
    for p in preds:
        by_image.setdefault(p.image_id, ([], []))[0].append(p)
    aps, ars = [], []
    for t in thresholds:
        scored = []
        for image_id in sorted(by_image, key=str):
            ps, gs = by_image[image_id]
            ps = _sorted_preds(ps)
            scored += [(p.score, p.id, hit) for p, hit in zip(ps, _match_image(ps, gs, k_consts, t))]
        scored.sort(key=lambda s: (-s[0], s[1]))
        ap, ar = _interp_precision([s[2] for s in scored], n_gt)
        aps.append(ap)
        ars.append(ar)
    thresholds = np.asarray(thresholds)

    def at(v):
        hit = np.isclose(thresholds, v)
        return float(np.asarray(aps)[hit][0]) if hit.any() else nan

    return {"AP": float(np.mean(aps)), "AP50": at(0.5), "AP75": at(0.75), "AR": float(np.mean(ars))}


def pckh(preds, gts, head_sizes, alpha=0.5):
    """Percentage of labeled keypoints within ``alpha * head_size`` of ground truth.

    ``preds`` is (N, K, >=2), ``gts`` is (N, K, 3) with visibility in the last column.
    """
    preds = np.asarray(preds, dtype=np.float64)[..., :2]
    gts = np.asarray(gts, dtype=np.float64)
    head_sizes = np.asarray(head_sizes, dtype=np.float64).reshape(-1)
    if (head_sizes <= 0).any():
        raise ValueError("head sizes must be positive")
    labeled = gts[..., 2] > 0
    if not labeled.any():
        return float("nan")
    d = np.linalg.norm(preds - gts[..., :2], axis=-1)
    ok = d <= alpha * head_sizes[:, None]
    return float(100.0 * ok[labeled].sum() / labeled.sum())
