"""Brute-force reference implementations used by the property tests.

These are the semantics of record: straightforward quadratic or dense
formulations with no blocking, candidate pruning, or precision tricks. The
production code must agree with them within each module's documented
tolerance. They are sized for test inputs (N <= 5000, D <= 64) only.
"""
from __future__ import annotations

import numpy as np

_LRD_EPS = 1e-10  # shared degenerate-density convention, see scoring module


def knn_oracle(points: np.ndarray, query: np.ndarray, k: int, start_index: int = 1):
    """Exhaustive-sort kNN: full float64 distance vector, stable ascending
    sort (ties keep the lower row index), drop start_index - 1, take k."""
    diffs = np.asarray(points, dtype=np.float64) - np.asarray(query, dtype=np.float64)
    dists = np.sqrt(np.square(diffs).sum(axis=1))
    order = np.argsort(dists, kind="stable")
    sel = order[start_index - 1 : start_index - 1 + k]
    return dists[sel], sel.astype(np.int64)


def greedy_oracle(points: np.ndarray, m: int, seed: int) -> list[int]:
    """Quadratic-time k-center greedy: materialize the full pairwise distance
    matrix, start at row seed mod N, repeatedly add the row with the largest
    distance to the selected set (ties to the lower index)."""
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    dmat = np.sqrt(np.square(pts[:, None, :] - pts[None, :, :]).sum(axis=2))
    start = seed % n
    chosen = [start]
    min_d = dmat[start].copy()
    for _ in range(m - 1):
        nxt = int(np.argmax(min_d))
        chosen.append(nxt)
        min_d = np.minimum(min_d, dmat[nxt])
    return chosen


def auroc_oracle(scores, labels) -> float:
    """Pairwise rank count: over every (anomalous, normal) pair, score wins
    count 1, ties count 0.5, divided by the number of pairs."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return float((wins + 0.5 * ties) / (len(pos) * len(neg)))


def _components_union_find(mask: np.ndarray) -> np.ndarray:
    """8-connectivity labeling by plain union-find over pixel indices."""
    mask = np.asarray(mask) != 0
    h, w = mask.shape
    parent = {}

    def find(a):
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    for y in range(h):
        for x in range(w):
            if not mask[y, x]:
                continue
            idx = y * w + x
            parent.setdefault(idx, idx)
            for dy, dx in ((-1, -1), (-1, 0), (-1, 1), (0, -1)):
                ny, nx = y + dy, x + dx
                if 0 <= ny < h and 0 <= nx < w and mask[ny, nx]:
                    union(idx, ny * w + nx)
    labels = np.zeros((h, w), dtype=np.int64)
    roots = {}
    for y in range(h):
        for x in range(w):
            if mask[y, x]:
                r = find(y * w + x)
                if r not in roots:
                    roots[r] = len(roots) + 1
                labels[y, x] = roots[r]
    return labels


def components_oracle(mask: np.ndarray) -> list[np.ndarray]:
    """Pixel index sets of the 8-connected regions, discovery order."""
    labels = _components_union_find(mask)
    count = labels.max()
    return [np.flatnonzero(labels.ravel() == i) for i in range(1, count + 1)]


def pro_oracle(maps, masks, fpr_limit: float = 0.3):
    """Dense threshold sweep for the per-region-overlap score.

    Every distinct pooled score value serves as a threshold (prediction is
    score >= t); the region-overlap mean and global FPR trace a curve from
    (0, 0) that is trapezoid-integrated up to the FPR limit and normalized
    by it. Returns (score, thresholds) so callers can replay the sweep.
    """
    maps = [np.asarray(m, dtype=np.float64) for m in maps]
    masks = [np.asarray(g) != 0 for g in masks]
    region_sets = [components_oracle(g) for g in masks]
    assert any(region_sets), "oracle needs at least one region"
    total_neg = sum(int((~g).sum()) for g in masks)
    thresholds = np.unique(np.concatenate([m.ravel() for m in maps]))[::-1]
    points = [(0.0, 0.0)]
    for t in thresholds:
        overlaps = []
        fp = 0
        for m, g, regs in zip(maps, masks, region_sets):
            pred = m >= t
            flat = pred.ravel()
            for region in regs:
                overlaps.append(flat[region].sum() / len(region))
            fp += int((pred & ~g).sum())
        points.append((fp / total_neg, sum(overlaps) / len(overlaps)))
    area = 0.0
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        if x1 <= fpr_limit:
            area += (x1 - x0) * (y0 + y1) / 2.0
        else:
            if x0 < fpr_limit and x1 > x0:
                y_lim = y0 + (y1 - y0) * (fpr_limit - x0) / (x1 - x0)
                area += (fpr_limit - x0) * (y0 + y_lim) / 2.0
            break
    return area / fpr_limit, thresholds


def lof_oracle(points: np.ndarray, query: np.ndarray, k: int, start_index: int = 2) -> float:
    """Textbook local outlier factor of a query against a point set.

    k-distances and neighborhoods of the set members always exclude the
    member itself; reachability uses max(k-distance(neighbor), distance);
    densities carry the shared epsilon so coincident data yields exactly 1.
    """
    points = np.asarray(points, dtype=np.float64)

    def knn_of_member(i):
        return knn_oracle(points, points[i], k, start_index=2)

    def lrd_of(dists, idxs):
        reach = [max(kdist[j], d) for d, j in zip(dists, idxs)]
        return 1.0 / (sum(reach) / len(reach) + _LRD_EPS)

    kdist = {}
    q_dists, q_idxs = knn_oracle(points, query, k, start_index=start_index)
    needed = set(q_idxs.tolist())
    member_knn = {}
    for i in list(needed):
        d, j = knn_of_member(i)
        member_knn[i] = (d, j)
        needed.update(j.tolist())
    for i in needed:
        d, _ = member_knn[i] if i in member_knn else knn_of_member(i)
        kdist[i] = d[-1]
    lrd_q = lrd_of(q_dists, q_idxs)
    lrd_members = [lrd_of(*member_knn[i]) for i in q_idxs]
    return float(sum(lrd_members) / len(lrd_members) / lrd_q)


def gaussian_smooth_oracle(values: np.ndarray, sigma: float) -> np.ndarray:
    """Dense 2-D convolution with a truncated Gaussian, renormalized per
    output pixel over the in-bounds kernel mass."""
    import math

    values = np.asarray(values, dtype=np.float64)
    radius = math.ceil(4.0 * sigma)
    ax = np.arange(-radius, radius + 1, dtype=np.float64)
    k1 = np.exp(-(ax * ax) / (2.0 * sigma * sigma))
    k1 /= k1.sum()
    kernel = np.outer(k1, k1)
    h, w = values.shape
    out = np.zeros_like(values)
    for y in range(h):
        for x in range(w):
            y0, y1 = max(0, y - radius), min(h, y + radius + 1)
            x0, x1 = max(0, x - radius), min(w, x + radius + 1)
            win = kernel[y0 - y + radius : y1 - y + radius, x0 - x + radius : x1 - x + radius]
            out[y, x] = (win * values[y0:y1, x0:x1]).sum() / win.sum()
    return out


def local_mean_oracle(values: np.ndarray, patch_size: int) -> np.ndarray:
    """Window means by explicit loops over in-bounds entries."""
    values = np.asarray(values, dtype=np.float64)
    r = patch_size // 2
    h, w = values.shape[:2]
    out = np.zeros_like(values)
    for y in range(h):
        for x in range(w):
            y0, y1 = max(0, y - r), min(h, y + r + 1)
            x0, x1 = max(0, x - r), min(w, x + r + 1)
            out[y, x] = values[y0:y1, x0:x1].mean(axis=(0, 1))
    return out
