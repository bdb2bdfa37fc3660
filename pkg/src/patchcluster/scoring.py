"""Anomaly scorers over a memory bank, plus score-map postprocessing.

The main scorer rates a patch by the mean Euclidean distance to its K
nearest bank rows, an implicit estimate of how dense the local feature
distribution is. With K=1 this collapses to plain nearest-neighbor scoring
(the ``patchcore`` scorer); ``lof`` rates patches by the classical local
outlier factor instead. The image-level score rescales the peak patch score
by a softmax weight over the neighborhood of its nearest bank feature.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

from .bank import MemoryBank, NeighborSet, query_knn, query_knn_batch
from .features import PatchFeatureMap, bilinear_resize

SCORERS = ("patchcluster", "patchcore", "lof")

_LRD_EPS = 1e-10


@dataclass
class ScorerConfig:
    k: int = 100
    start_index: int = 2
    scorer: str = "patchcluster"
    b: int | None = None  # image-score neighborhood size, defaults to k
    gaussian_sigma: float = 4.0
    clamp_weight: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.start_index < 1:
            raise ValueError("start_index must be >= 1")
        if self.scorer not in SCORERS:
            raise ValueError(f"scorer must be one of {SCORERS}, got {self.scorer!r}")
        if self.b is not None and self.b < 1:
            raise ValueError("b must be >= 1")

    @property
    def image_score_neighbors(self) -> int:
        return self.b if self.b is not None else self.k


@dataclass
class RawScoreMap:
    """Feature-grid anomaly scores plus the context of the peak location."""

    image_id: str
    scores: np.ndarray  # (H, W) float64, all >= 0
    argmax_yx: tuple[int, int]
    argmax_feature: np.ndarray
    argmax_neighbors: NeighborSet

    @property
    def argmax_score(self) -> float:
        return float(self.scores[self.argmax_yx])


@dataclass
class ScoreMap:
    """Image-resolution anomaly scores and the scalar image score."""

    image_id: str
    pixels: np.ndarray  # (H_img, W_img) float64
    image_score: float
    argmax_score: float


def patch_score(neighbors: NeighborSet) -> float:
    """Mean distance to the retained neighbors."""
    if len(neighbors) == 0:
        raise ValueError("empty neighbor set")
    return float(np.mean(neighbors.distances))


def default_k_for_ratio(ratio: float) -> int:
    """Default neighbor count for a bank subsampling ratio.

    Full banks use 100 neighbors; coresets at 25%, 10%, and 1% drop to 25,
    10, and 5. Intermediate ratios take the nearest documented step.
    """
    if ratio >= 0.5:
        return 100
    if ratio >= 0.175:
        return 25
    if ratio >= 0.05:
        return 10
    return 5


class LofModel:
    """Local-outlier-factor scorer with bank densities precomputed once.

    Every bank row's k-distance and local reachability density are derived
    from a self-excluding kNN pass over the bank, after which any number of
    queries can be scored cheaply.
    """

    def __init__(self, bank: MemoryBank, k: int):
        self.bank = bank
        self.k = k
        sets = query_knn_batch(bank, bank.features, k, start_index=2)
        self.nbr_idx = np.stack([s.indices for s in sets])
        nbr_dist = np.stack([s.distances for s in sets])
        self.kdist = nbr_dist[:, -1]
        reach = np.maximum(self.kdist[self.nbr_idx], nbr_dist)
        self.lrd = 1.0 / (reach.mean(axis=1) + _LRD_EPS)

    def score(self, queries: np.ndarray, start_index: int = 2) -> np.ndarray:
        """LOF of each query: mean neighbor density over the query's own.

        Values near 1 mark inliers; coincident neighborhoods degrade to
        exactly 1 because all densities hit the same epsilon ceiling.
        """
        sets = query_knn_batch(self.bank, queries, self.k, start_index)
        idx = np.stack([s.indices for s in sets])
        dist = np.stack([s.distances for s in sets])
        reach = np.maximum(self.kdist[idx], dist)
        lrd_q = 1.0 / (reach.mean(axis=1) + _LRD_EPS)
        return self.lrd[idx].mean(axis=1) / lrd_q


def lof_score(bank: MemoryBank, query: np.ndarray, k: int, start_index: int = 2) -> float:
    """LOF of a single query. Builds the bank density model on the fly;
    batch callers should reuse a :class:`LofModel`."""
    model = LofModel(bank, k)
    return float(model.score(np.asarray(query)[None, :], start_index)[0])


def _raw_map_from_scores(
    pmap: PatchFeatureMap, flat_scores: np.ndarray, neighbor_sets, bank, cfg
) -> RawScoreMap:
    h, w, _ = pmap.values.shape
    scores = flat_scores.reshape(h, w).astype(np.float64)
    flat_arg = int(np.argmax(flat_scores))
    yx = (flat_arg // w, flat_arg % w)
    feature = pmap.values[yx[0], yx[1]].copy()
    if neighbor_sets is not None:
        retained = neighbor_sets[flat_arg]
    else:
        retained = query_knn(bank, feature, cfg.k, cfg.start_index)
    return RawScoreMap(
        image_id=pmap.image_id,
        scores=scores,
        argmax_yx=yx,
        argmax_feature=feature,
        argmax_neighbors=retained,
    )


def score_feature_map(bank: MemoryBank, pmap: PatchFeatureMap, cfg: ScorerConfig) -> RawScoreMap:
    """Score every patch of one image against the bank."""
    h, w, d = pmap.values.shape
    queries = pmap.values.reshape(h * w, d)
    if cfg.scorer == "lof":
        model = LofModel(bank, cfg.k)
        flat = model.score(queries, cfg.start_index)
        return _raw_map_from_scores(pmap, flat, None, bank, cfg)
    k_eff = 1 if cfg.scorer == "patchcore" else cfg.k
    sets = query_knn_batch(bank, queries, k_eff, cfg.start_index)
    flat = np.array([patch_score(s) for s in sets])
    return _raw_map_from_scores(pmap, flat, sets, bank, cfg)


def score_feature_map_sweep(
    bank: MemoryBank, pmap: PatchFeatureMap, cfg: ScorerConfig, ks: list[int]
) -> dict[int, RawScoreMap]:
    """Mean-distance score maps for several K sharing one kNN pass.

    Because neighbor lists are sorted with a deterministic tie-break, the
    first k entries of a k_max query equal a direct k query, so each map is
    identical to a separate :func:`score_feature_map` run at that K.
    """
    if cfg.scorer == "lof":
        raise ValueError("sweep applies to mean-distance scorers only")
    ks = sorted(set(int(k) for k in ks))
    if not ks:
        raise ValueError("no K values given")
    h, w, d = pmap.values.shape
    queries = pmap.values.reshape(h * w, d)
    sets = query_knn_batch(bank, queries, max(ks), cfg.start_index)
    out: dict[int, RawScoreMap] = {}
    dists = np.stack([s.distances for s in sets])
    for k in ks:
        flat = dists[:, :k].mean(axis=1)
        prefix_sets = [
            NeighborSet(s.distances[:k], s.indices[:k], s.start_index) for s in sets
        ]
        out[k] = _raw_map_from_scores(pmap, flat, prefix_sets, bank, cfg)
    return out


def image_score(raw: RawScoreMap, bank: MemoryBank, cfg: ScorerConfig) -> float:
    """Reweighted image-level score from the peak patch.

    The peak score a* is scaled by ``1 - exp(a*) / sum_f exp(dist(f*, f))``
    where f ranges over the b bank rows nearest to the peak's nearest bank
    feature (that feature included). Exponentials are max-shifted so the sum
    never overflows; with ``clamp_weight`` the factor is clipped to [0, 1].
    """
    a_star = raw.argmax_score
    nearest_row = int(raw.argmax_neighbors.indices[0])
    hood = query_knn(
        bank, bank.features[nearest_row], cfg.image_score_neighbors, start_index=1
    )
    members = bank.features[hood.indices].astype(np.float64)
    diffs = members - raw.argmax_feature.astype(np.float64)
    dists = np.sqrt(np.square(diffs).sum(axis=1))
    shift = max(float(dists.max()), a_star)
    with np.errstate(divide="ignore"):
        weight = 1.0 - math.exp(a_star - shift) / np.exp(dists - shift).sum()
    if cfg.clamp_weight:
        weight = min(max(weight, 0.0), 1.0)
    return float(weight * a_star)


def gaussian_smooth(values: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian blur truncated at radius ceil(4*sigma), renormalized at
    borders so the kernel mass inside the image always sums to one."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    radius = math.ceil(4.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(x * x) / (2.0 * sigma * sigma))
    kernel /= kernel.sum()
    src = values.astype(np.float64, copy=False)
    num = correlate1d(src, kernel, axis=0, mode="constant", cval=0.0)
    num = correlate1d(num, kernel, axis=1, mode="constant", cval=0.0)
    den_y = correlate1d(np.ones(src.shape[0]), kernel, mode="constant", cval=0.0)
    den_x = correlate1d(np.ones(src.shape[1]), kernel, mode="constant", cval=0.0)
    return num / (den_y[:, None] * den_x[None, :])


def upsample_and_smooth(raw, out_hw: tuple[int, int], sigma: float) -> np.ndarray:
    """Bilinear-upsample a feature-grid score map to image resolution and
    denoise it with a border-renormalized Gaussian."""
    scores = raw.scores if isinstance(raw, RawScoreMap) else np.asarray(raw)
    return gaussian_smooth(bilinear_resize(scores, out_hw), sigma)


def score_image(
    bank: MemoryBank, pmap: PatchFeatureMap, cfg: ScorerConfig, out_hw: tuple[int, int]
) -> ScoreMap:
    """Full per-image scoring: raw map, upsample + smooth, image score."""
    raw = score_feature_map(bank, pmap, cfg)
    pixels = upsample_and_smooth(raw, out_hw, cfg.gaussian_sigma)
    return ScoreMap(
        image_id=pmap.image_id,
        pixels=pixels,
        image_score=image_score(raw, bank, cfg),
        argmax_score=raw.argmax_score,
    )
