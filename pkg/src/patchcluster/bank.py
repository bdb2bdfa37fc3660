"""Patch-feature memory bank: assembly, greedy coreset reduction, exact kNN.

Queries run in two passes: a blocked float32 pass using the expanded
``|a|^2 + |b|^2 - 2ab`` form ranks candidates cheaply, then the survivors are
re-scored with exact float64 differences and sorted with ties broken by lower
row index. The coarse pass carries a generous safety margin, so returned
neighbors match a naive full-precision sort on non-degenerate data; the
documented accuracy of the coarse distances themselves is 1e-5 relative.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensorfile

try:  # torch.topk is a faster row-wise selector than argpartition; optional
    import torch as _torch
except ImportError:  # pragma: no cover - environment without torch
    _torch = None

_QUERY_BLOCK = 256
_BANK_BLOCK = 131072
_CANDIDATE_PAD = 32
_RERANK_BLOCK_ELEMS = 8_000_000  # float64 elements per rerank gather
_GREEDY_CAST_ELEMS = 64_000_000  # precast bank to float64 below this size


class InsufficientBankError(ValueError):
    """Requested more neighbors than the bank holds."""


@dataclass
class NeighborSet:
    """K nearest bank rows for one query, skipping ``start_index - 1`` hits.

    Distances are nondecreasing; indices are distinct bank row numbers.
    """

    distances: np.ndarray
    indices: np.ndarray
    start_index: int = 1

    def __len__(self) -> int:
        return len(self.distances)


@dataclass
class MemoryBank:
    """N x D patch features with per-row provenance (image_id, w, h).

    Coordinates are 1-based grid positions, ``w`` the column. ``features``
    is float32; construction validates finiteness once, after which the bank
    is treated as immutable and safe for concurrent queries.
    """

    features: np.ndarray
    provenance: list[tuple[str, int, int]]
    subsample_ratio: float = 1.0
    seed: int = 0
    projection_dim: int | None = None

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ValueError("bank features must be a nonempty N x D matrix")
        if len(self.provenance) != self.features.shape[0]:
            raise ValueError("provenance length must match the row count")
        if not 0.0 < self.subsample_ratio <= 1.0:
            raise ValueError("subsample_ratio must be in (0, 1]")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("bank features must be finite")

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def _sqnorms32(self) -> np.ndarray:
        """Row squared norms, 64-bit reduction cached as float32."""
        cached = getattr(self, "_sqnorm_cache", None)
        if cached is None:
            cached = _row_sqnorms(self.features).astype(np.float32)
            self._sqnorm_cache = cached
        return cached


def assemble(maps) -> MemoryBank:
    """Stack every patch vector of every map into one bank.

    Rows follow map input order, locations row-major (w fastest), so the row
    at provenance (image_id, w, h) is exactly that map's vector at (w, h).
    """
    maps = list(maps)
    if not maps:
        raise ValueError("cannot assemble a bank from zero feature maps")
    dims = {m.values.shape[2] for m in maps}
    if len(dims) != 1:
        raise ValueError(f"feature dimension mismatch across maps: {sorted(dims)}")
    blocks = []
    provenance: list[tuple[str, int, int]] = []
    for m in maps:
        h, w, d = m.values.shape
        blocks.append(m.values.reshape(h * w, d))
        for y in range(1, h + 1):
            for x in range(1, w + 1):
                provenance.append((m.image_id, x, y))
    return MemoryBank(features=np.concatenate(blocks, axis=0), provenance=provenance)


def _row_sqnorms(x: np.ndarray) -> np.ndarray:
    out = np.empty(x.shape[0], dtype=np.float64)
    for lo in range(0, x.shape[0], _BANK_BLOCK):
        blk = x[lo : lo + _BANK_BLOCK].astype(np.float64)
        out[lo : lo + _BANK_BLOCK] = np.einsum("ij,ij->i", blk, blk)
    return out


def _smallest_per_row(values: np.ndarray, count: int) -> np.ndarray:
    """Column indices of the ``count`` smallest entries per row (unordered)."""
    if _torch is not None:
        sel = _torch.topk(_torch.from_numpy(values), count, dim=1, largest=False)
        return sel.indices.numpy()
    return np.argpartition(values, count - 1, axis=1)[:, :count]


def _coarse_topk(
    bank: np.ndarray, sqnorms: np.ndarray, queries: np.ndarray, count: int
) -> np.ndarray:
    """Indices of the ``count`` approximately nearest bank rows per query.

    Ranks by ``|b|^2 - 2 q.b`` in float32; the per-query ``|q|^2`` shift is
    constant within a row and dropped. The exact rerank downstream absorbs
    any float32 misordering, so this pass only has to land the true
    neighbors inside the candidate set.
    """
    n = bank.shape[0]
    if count >= n:
        return np.tile(np.arange(n, dtype=np.int64), (queries.shape[0], 1))
    block = max(_BANK_BLOCK, count)
    q32 = np.ascontiguousarray(queries, dtype=np.float32)
    best_v = None
    best_i = None
    for lo in range(0, n, block):
        blk = bank[lo : lo + block]
        vals = q32 @ blk.T
        np.multiply(vals, -2.0, out=vals)
        vals += sqnorms[lo : lo + block][None, :]
        take = min(count, vals.shape[1])
        part = _smallest_per_row(vals, take)
        v = np.take_along_axis(vals, part, axis=1)
        i = part.astype(np.int64) + lo
        if best_v is None:
            best_v, best_i = v, i
        else:
            v = np.concatenate([best_v, v], axis=1)
            i = np.concatenate([best_i, i], axis=1)
            keep = _smallest_per_row(v, count)
            best_v = np.take_along_axis(v, keep, axis=1)
            best_i = np.take_along_axis(i, keep, axis=1)
    return best_i


def query_knn_batch(
    bank: MemoryBank, queries: np.ndarray, k: int, start_index: int = 1
) -> list[NeighborSet]:
    """Exact k-nearest-neighbor search for a Q x D batch of queries.

    Equivalent to Q independent :func:`query_knn` calls: Euclidean distances
    to every bank row, ascending with ties broken by lower row index, the
    first ``start_index - 1`` entries dropped and the next ``k`` returned.
    """
    feats = bank.features
    n = feats.shape[0]
    queries = np.atleast_2d(np.asarray(queries))
    if queries.shape[0] == 0:
        return []
    if queries.shape[1] != feats.shape[1]:
        raise ValueError(
            f"query dim {queries.shape[1]} != bank dim {feats.shape[1]}"
        )
    if k < 1:
        raise ValueError("k must be >= 1")
    if start_index < 1:
        raise ValueError("start_index must be >= 1")
    need = start_index - 1 + k
    if need > n:
        raise InsufficientBankError(
            f"insufficient bank size: need {need} neighbors, bank has {n} rows"
        )

    results: list[NeighborSet] = []
    count = min(need + _CANDIDATE_PAD, n)
    sqnorms = bank._sqnorms32()
    rerank_rows = max(1, _RERANK_BLOCK_ELEMS // (count * feats.shape[1]))
    qblock = min(_QUERY_BLOCK, rerank_rows)
    for lo in range(0, queries.shape[0], qblock):
        qchunk = queries[lo : lo + qblock]
        cand = _coarse_topk(feats, sqnorms, qchunk, count)
        cand = np.sort(cand, axis=1)  # ascending index => stable sort ties break low
        gathered = feats[cand].astype(np.float64)
        diffs = gathered - qchunk[:, None, :].astype(np.float64)
        sqd = np.square(diffs).sum(axis=2)
        order = np.argsort(sqd, axis=1, kind="stable")
        for row in range(qchunk.shape[0]):
            sel = order[row, start_index - 1 : need]
            results.append(
                NeighborSet(
                    distances=np.sqrt(sqd[row, sel]),
                    indices=cand[row, sel].astype(np.int64),
                    start_index=start_index,
                )
            )
    return results


def query_knn(
    bank: MemoryBank, query: np.ndarray, k: int, start_index: int = 1
) -> NeighborSet:
    """K nearest bank rows for a single query vector."""
    return query_knn_batch(bank, np.asarray(query)[None, :], k, start_index)[0]


def _greedy_kcenter(points: np.ndarray, m: int, start: int) -> np.ndarray:
    """Greedy k-center selection order: repeatedly take the row farthest
    from the set selected so far (ties to the lower index)."""
    n = points.shape[0]
    sqnorms = _row_sqnorms(points)
    if points.size <= _GREEDY_CAST_ELEMS:
        pts64 = points.astype(np.float64)

        def sqdist_to(row):
            center = pts64[row]
            out = sqnorms + float(center @ center) - 2.0 * (pts64 @ center)
            return np.maximum(out, 0.0, out=out)

    else:

        def sqdist_to(row):
            center = points[row].astype(np.float64)
            cn = float(center @ center)
            out = np.empty(n, dtype=np.float64)
            for lo in range(0, n, _BANK_BLOCK):
                blk = points[lo : lo + _BANK_BLOCK].astype(np.float64)
                out[lo : lo + _BANK_BLOCK] = (
                    sqnorms[lo : lo + _BANK_BLOCK] + cn - 2.0 * (blk @ center)
                )
            return np.maximum(out, 0.0, out=out)

    selected = np.empty(m, dtype=np.int64)
    selected[0] = start
    min_sqd = sqdist_to(start)
    for t in range(1, m):
        nxt = int(np.argmax(min_sqd))
        selected[t] = nxt
        np.minimum(min_sqd, sqdist_to(nxt), out=min_sqd)
    return selected


def coreset_subsample(
    bank: MemoryBank,
    ratio: float,
    seed: int = 0,
    projection_dim: int | None = None,
) -> MemoryBank:
    """Reduce the bank to ``round(ratio * N)`` rows by greedy k-center.

    Selection starts at row ``seed mod N``. With ``projection_dim`` set,
    selection distances are measured in a seeded Gaussian random projection
    of that dimension, but the returned rows are the original vectors.
    A ratio of 1.0 returns the whole bank unchanged (in storage order).
    """
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"ratio must be in (0, 1], got {ratio}")
    n = bank.size
    m = max(1, round(ratio * n))
    if m >= n:
        return MemoryBank(
            features=bank.features.copy(),
            provenance=list(bank.provenance),
            subsample_ratio=ratio,
            seed=seed,
            projection_dim=projection_dim,
        )
    points = bank.features
    if projection_dim is not None:
        rng = np.random.default_rng(seed)
        proj = rng.standard_normal((bank.dim, projection_dim)) / np.sqrt(projection_dim)
        points = (bank.features.astype(np.float64) @ proj).astype(np.float32)
    selected = _greedy_kcenter(points, m, start=seed % n)
    return MemoryBank(
        features=bank.features[selected].copy(),
        provenance=[bank.provenance[i] for i in selected],
        subsample_ratio=ratio,
        seed=seed,
        projection_dim=projection_dim,
    )


def save_bank(bank: MemoryBank, tensor_path, meta_path) -> None:
    """Serialize a bank as an N x D tensor plus a JSON provenance sidecar."""
    tensorfile.write_tensor(tensor_path, bank.features)
    ids: list[str] = []
    id_index: dict[str, int] = {}
    rows = []
    for image_id, w, h in bank.provenance:
        if image_id not in id_index:
            id_index[image_id] = len(ids)
            ids.append(image_id)
        rows.append([id_index[image_id], w, h])
    doc = {
        "schema_version": 1,
        "subsample_ratio": bank.subsample_ratio,
        "seed": bank.seed,
        "projection_dim": bank.projection_dim,
        "image_ids": ids,
        "rows": rows,
    }
    Path(meta_path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def load_bank(tensor_path, meta_path) -> MemoryBank:
    feats = tensorfile.read_tensor(tensor_path)
    if feats.ndim != 2:
        raise ValueError("bank tensor must be 2-D")
    doc = json.loads(Path(meta_path).read_text())
    ids = doc["image_ids"]
    provenance = [(ids[i], int(w), int(h)) for i, w, h in doc["rows"]]
    return MemoryBank(
        features=feats,
        provenance=provenance,
        subsample_ratio=doc["subsample_ratio"],
        seed=doc["seed"],
        projection_dim=doc["projection_dim"],
    )
