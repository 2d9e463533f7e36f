"""Evaluation metrics: alignment, overlap, MaxIoU, DocSim, the two-level
segment Difference score, the assignment solver they share, and a pluggable
Frechet feature distance standing in for FID.

All box-level formulas operate on per-layout normalized coordinates in [0, 1].
"""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .core import Layout, Segment


def hungarian(cost) -> tuple[list[tuple[int, int]], float]:
    """Minimum-cost assignment of rows to columns (n <= m), O(n^3).

    Shortest-augmenting-path formulation with row/column potentials.
    Returns (list of (row, col), total cost).
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"cost matrix must be 2-D, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix contains non-finite entries")
    n, m = cost.shape
    if n > m:
        raise ValueError(f"hungarian requires n <= m, got {n} x {m}")
    if n == 0:
        return [], 0.0
    INF = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=int)  # p[j]: row (1-based) assigned to column j
    way = np.zeros(m + 1, dtype=int)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, INF)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = INF
            j1 = -1
            for j in range(1, m + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    assignment = sorted((p[j] - 1, j - 1) for j in range(1, m + 1) if p[j] > 0)
    total = float(sum(cost[r, c] for r, c in assignment))
    return assignment, total


def max_weight_matching(weights) -> tuple[list[tuple[int, int]], float]:
    """Maximum-weight assignment via hungarian on negated weights."""
    w = np.asarray(weights, dtype=np.float64)
    transposed = w.shape[0] > w.shape[1]
    if transposed:
        w = w.T
    pairs, total = hungarian(-w)
    if transposed:
        pairs = sorted((c, r) for r, c in pairs)
    return pairs, -total


# ---------------------------------------------------------------------------
# box geometry


def iou(a, b) -> float:
    """Intersection over union of two boxes given as (x, y, h, w) tuples or
    BoundingBox values; degenerate pairs score 0."""
    ax, ay, ah, aw = _box_tuple(a)
    bx, by, bh, bw = _box_tuple(b)
    ix = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    union = ah * aw + bh * bw - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def _box_tuple(b):
    if hasattr(b, "x"):
        return b.x, b.y, b.h, b.w
    x, y, h, w = b
    return x, y, h, w


def _norm_boxes(layout: Layout) -> np.ndarray:
    """(N, 4) array of (x, y, h, w) normalized to the unit square."""
    if not layout.boxes:
        return np.zeros((0, 4))
    return np.array(
        [[b.x / layout.W, b.y / layout.H, b.h / layout.H, b.w / layout.W] for b in layout.boxes]
    )


def alignment_score(layouts) -> float:
    """Mean over layouts of (100/N) * sum_i -log(1 - g(i)), where g(i) is the
    minimum over other elements of the six anchor distances (left, x-center,
    right, top, y-center, bottom). Single-element layouts contribute 0."""
    scores = []
    for layout in layouts:
        boxes = _norm_boxes(layout)
        n = boxes.shape[0]
        if n < 2:
            scores.append(0.0)
            continue
        x, y, h, w = boxes[:, 0], boxes[:, 1], boxes[:, 2], boxes[:, 3]
        anchors = np.stack([x, x + w / 2, x + w, y + h, y + h / 2, y], axis=1)
        total = 0.0
        for i in range(n):
            d = np.abs(anchors - anchors[i])
            d[i] = np.inf
            g = min(float(d.min()), 1.0 - 1e-12)
            total += -np.log(1.0 - g)
        scores.append(100.0 / n * total)
    return float(np.mean(scores)) if scores else 0.0


def _pair_intersection(b1, b2) -> float:
    ix = max(0.0, min(b1[0] + b1[3], b2[0] + b2[3]) - max(b1[0], b2[0]))
    iy = max(0.0, min(b1[1] + b1[2], b2[1] + b2[2]) - max(b1[1], b2[1]))
    return ix * iy


def overlap_score(layouts) -> float:
    """Mean over layouts of 100 * (total pairwise intersection area) /
    (total element area); layouts with zero total area contribute 0."""
    scores = []
    for layout in layouts:
        boxes = _norm_boxes(layout)
        n = boxes.shape[0]
        total_area = float(np.sum(boxes[:, 2] * boxes[:, 3]))
        if total_area <= 0.0:
            scores.append(0.0)
            continue
        inter = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                inter += _pair_intersection(boxes[i], boxes[j])
        scores.append(100.0 * inter / total_area)
    return float(np.mean(scores)) if scores else 0.0


def _layout_pair_maxiou(a: Layout, b: Layout) -> float:
    """Category-constrained max-IoU matching, normalized by max box count."""
    na, nb = len(a.boxes), len(b.boxes)
    if na == 0 or nb == 0:
        return 1.0 if na == nb else 0.0
    ba, bb = _norm_boxes(a), _norm_boxes(b)
    w = np.zeros((na, nb))
    for i, abox in enumerate(a.boxes):
        for j, bbox in enumerate(b.boxes):
            if abox.c == bbox.c:
                w[i, j] = iou(tuple(ba[i]), tuple(bb[j]))
    _, total = max_weight_matching(w)
    return total / max(na, nb)


def _category_multiset(layout: Layout):
    return frozenset(Counter(b.c for b in layout.boxes).items())


def max_iou(generated, reference) -> float:
    """Mean over generated layouts of the best pair similarity against
    reference layouts sharing the same category multiset (all references if
    no multiset match exists)."""
    generated, reference = list(generated), list(reference)
    if not generated or not reference:
        raise ValueError("both corpora must be nonempty")
    by_multiset = {}
    for r in reference:
        by_multiset.setdefault(_category_multiset(r), []).append(r)
    scores = []
    for g in generated:
        pool = by_multiset.get(_category_multiset(g), reference)
        scores.append(max(_layout_pair_maxiou(g, r) for r in pool))
    return float(np.mean(scores))


def _docsim_pair(a: Layout, b: Layout) -> float:
    na, nb = len(a.boxes), len(b.boxes)
    if na == 0 or nb == 0:
        return 0.0
    ba, bb = _norm_boxes(a), _norm_boxes(b)
    w = np.zeros((na, nb))
    for i in range(na):
        for j in range(nb):
            area_i = ba[i, 2] * ba[i, 3]
            area_j = bb[j, 2] * bb[j, 3]
            alpha = np.sqrt(min(area_i, area_j))
            ci = ba[i, :2] + np.array([ba[i, 3] / 2, ba[i, 2] / 2])
            cj = bb[j, :2] + np.array([bb[j, 3] / 2, bb[j, 2] / 2])
            dc = float(np.linalg.norm(ci - cj))
            ds = abs(ba[i, 3] - bb[j, 3]) + abs(ba[i, 2] - bb[j, 2])
            w[i, j] = alpha * 2.0 ** (-dc - 2.0 * ds)
    _, total = max_weight_matching(w)
    return total / max(na, nb)


def docsim(generated, reference) -> float:
    """Mean over generated layouts of the best DocSim pair score."""
    generated, reference = list(generated), list(reference)
    if not generated or not reference:
        raise ValueError("both corpora must be nonempty")
    return float(np.mean([max(_docsim_pair(g, r) for r in reference) for g in generated]))


# ---------------------------------------------------------------------------
# segment difference


def segment_weight(l1: Segment, l2: Segment) -> float:
    """L1 distance between matched endpoints of two normalized segments."""
    return (
        abs(l1.x1 - l2.x1) + abs(l1.y1 - l2.y1) + abs(l1.x2 - l2.x2) + abs(l1.y2 - l2.y2)
    )


def image_weight(s1, s2) -> float:
    """Min-cost segment matching between two equally sized segment sets."""
    s1, s2 = list(s1), list(s2)
    if len(s1) != len(s2):
        raise ValueError(f"segment counts differ: {len(s1)} vs {len(s2)}")
    if not s1:
        return 0.0
    cost = np.array([[segment_weight(a, b) for b in s2] for a in s1])
    _, total = hungarian(cost)
    return total


def difference_score(set_a, set_b) -> float:
    """Two-level min-cost matching: segments within image pairs, then image
    pairs across the two collections; the score is the average matched
    inter-image weight."""
    set_a, set_b = list(set_a), list(set_b)
    if len(set_a) != len(set_b):
        raise ValueError(f"image counts differ: {len(set_a)} vs {len(set_b)}")
    if not set_a:
        return 0.0
    k = len(set_a[0])
    for side, images in (("A", set_a), ("B", set_b)):
        for idx, s in enumerate(images):
            if len(s) != k:
                raise ValueError(
                    f"image {side}[{idx}] has {len(s)} segments, expected {k}"
                )
    cost = np.array([[image_weight(a, b) for b in set_b] for a in set_a])
    _, total = hungarian(cost)
    return total / len(set_a)


# ---------------------------------------------------------------------------
# Frechet feature distance


class RandomProjectionExtractor:
    """Documented default feature proxy: a fixed-seed Gaussian projection of
    the flattened image. Deterministic; NOT comparable with Inception FID."""

    def __init__(self, dim=32, seed=0):
        self.dim = dim
        self.seed = seed
        self._proj = None
        self._in_dim = None

    def __call__(self, image) -> np.ndarray:
        flat = np.asarray(image, dtype=np.float64).ravel()
        if self._proj is None or self._in_dim != flat.size:
            rng = np.random.default_rng(self.seed)
            self._proj = rng.standard_normal((flat.size, self.dim)) / np.sqrt(flat.size)
            self._in_dim = flat.size
        return flat @ self._proj


def frechet_gaussian_distance(feats_a, feats_b) -> float:
    """||mu1 - mu2||^2 + tr(S1 + S2 - 2 (S1 S2)^{1/2}) of Gaussian fits."""
    a = np.asarray(feats_a, dtype=np.float64)
    b = np.asarray(feats_b, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ValueError("need at least 2 samples per side to fit a Gaussian")
    mu1, mu2 = a.mean(axis=0), b.mean(axis=0)
    s1 = np.cov(a, rowvar=False)
    s2 = np.cov(b, rowvar=False)
    s1 = np.atleast_2d(s1)
    s2 = np.atleast_2d(s2)
    diff = mu1 - mu2
    covmean, _ = scipy.linalg.sqrtm(s1 @ s2, disp=False)
    if np.iscomplexobj(covmean):
        covmean = covmean.real
    return float(diff @ diff + np.trace(s1) + np.trace(s2) - 2.0 * np.trace(covmean))


def feature_distance(generated_images, reference_images, extractor=None) -> float:
    """Frechet distance between feature populations of two render sets."""
    if extractor is None:
        extractor = RandomProjectionExtractor()
    fa = np.stack([extractor(im) for im in generated_images])
    fb = np.stack([extractor(im) for im in reference_images])
    return frechet_gaussian_distance(fa, fb)


# ---------------------------------------------------------------------------
# report


@dataclass
class MetricReport:
    scalars: dict = field(default_factory=dict)
    per_sample: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {"scalars": self.scalars, "per_sample": self.per_sample, "meta": self.meta},
            indent=2,
            sort_keys=True,
        )

    def to_text(self) -> str:
        lines = [f"{k:>18s}: {v:.6f}" for k, v in sorted(self.scalars.items())]
        lines += [f"{k:>18s}: {v}" for k, v in sorted(self.meta.items())]
        return "\n".join(lines)


def _config_hash(meta: dict) -> str:
    return hashlib.sha256(json.dumps(meta, sort_keys=True).encode()).hexdigest()[:12]


def evaluate_layout_corpora(generated, reference, images_generated=None,
                            images_reference=None, extractor=None) -> MetricReport:
    """Full layout metric suite; feature distance only when renders supplied."""
    generated, reference = list(generated), list(reference)
    report = MetricReport()
    report.scalars["alignment"] = alignment_score(generated)
    report.scalars["overlap"] = overlap_score(generated)
    report.scalars["max_iou"] = max_iou(generated, reference)
    report.scalars["docsim"] = docsim(generated, reference)
    if images_generated is not None and images_reference is not None:
        report.scalars["feature_distance"] = feature_distance(
            images_generated, images_reference, extractor
        )
    report.per_sample["alignment"] = [alignment_score([g]) for g in generated]
    report.per_sample["overlap"] = [overlap_score([g]) for g in generated]
    report.meta = {
        "n_generated": len(generated),
        "n_reference": len(reference),
    }
    report.meta["config_hash"] = _config_hash(report.meta)
    return report


def evaluate_segment_corpora(generated, reference, images_generated=None,
                             images_reference=None, extractor=None) -> MetricReport:
    generated, reference = list(generated), list(reference)
    report = MetricReport()
    report.scalars["difference"] = difference_score(generated, reference)
    if images_generated is not None and images_reference is not None:
        report.scalars["feature_distance"] = feature_distance(
            images_generated, images_reference, extractor
        )
    report.meta = {
        "n_generated": len(generated),
        "n_reference": len(reference),
    }
    report.meta["config_hash"] = _config_hash(report.meta)
    return report
