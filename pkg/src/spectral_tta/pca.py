"""PCA on flattened feature maps: batch and incremental fitting,
transform/inverse transform, rank truncation, and serialization.

The incremental path keeps only a running mean plus a rank-L factor
(singular values and right singular vectors), so its memory footprint is
O(L * p) regardless of how many samples stream through.
"""

import json
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import linalg
from .errors import ContractViolationError, EmptyBasisError

# singular values at or below this are treated as zero and dropped
SV_DROP_THRESHOLD = 1e-12

BASIS_FORMAT_VERSION = 1


@dataclass(frozen=True)
class PcaBasis:
    """A fitted, immutable PCA basis.

    ``components`` holds the top right singular vectors as rows (L x p);
    ``singular_values`` are the matching singular values of the centered
    training matrix, all strictly positive.
    """

    mean: np.ndarray
    components: np.ndarray
    singular_values: np.ndarray
    n_fitted: int

    @property
    def p(self) -> int:
        return self.components.shape[1]

    @property
    def rank(self) -> int:
        return self.components.shape[0]

    def save(self, path) -> None:
        payload = {
            "version": BASIS_FORMAT_VERSION,
            "p": self.p,
            "rank": self.rank,
            "n_fitted": self.n_fitted,
            "mean": self.mean.tolist(),
            "singular_values": self.singular_values.tolist(),
            "components": self.components.ravel().tolist(),
        }
        # json writes floats with repr, which round-trips float64 exactly
        with open(path, "w") as fh:
            json.dump(payload, fh)

    @classmethod
    def load(cls, path) -> "PcaBasis":
        with open(path) as fh:
            payload = json.load(fh)
        if payload.get("version") != BASIS_FORMAT_VERSION:
            raise ContractViolationError(
                f"unsupported basis file version {payload.get('version')!r}"
            )
        p = payload["p"]
        rank = payload["rank"]
        mean = np.asarray(payload["mean"], dtype=np.float64)
        sv = np.asarray(payload["singular_values"], dtype=np.float64)
        comp = np.asarray(payload["components"], dtype=np.float64)
        return cls(
            mean=mean,
            components=comp.reshape(rank, p),
            singular_values=sv,
            n_fitted=payload["n_fitted"],
        )


def flatten_features(features: np.ndarray) -> np.ndarray:
    """(n, c, h, w) -> (n, c*h*w), channel-major per sample."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 4:
        raise ContractViolationError(
            f"expected 4-D features, got ndim={features.ndim}"
        )
    n = features.shape[0]
    return features.reshape(n, -1)


def unflatten_features(flat: np.ndarray, shape: tuple[int, int, int]) -> np.ndarray:
    """Inverse of :func:`flatten_features` for a known (c, h, w)."""
    flat = linalg.as_matrix(flat, "flat features")
    c, h, w = shape
    if flat.shape[1] != c * h * w:
        raise ContractViolationError(
            f"cannot unflatten {flat.shape[1]} columns into shape {(c, h, w)}"
        )
    return flat.reshape(flat.shape[0], c, h, w)


def _check_rank(rank: int, n: int, p: int) -> None:
    if not 1 <= rank <= min(n, p):
        raise ContractViolationError(
            f"rank must be in [1, min(n={n}, p={p})], got {rank}"
        )


def fit(features: np.ndarray, rank: int) -> PcaBasis:
    """Fit PCA on an N x p matrix, keeping at most ``rank`` components.

    Components with singular value at or below the drop threshold are
    discarded, so the effective rank can be lower than requested.
    """
    features = linalg.as_matrix(features, "features")
    n, p = features.shape
    if n < 2:
        raise ContractViolationError(f"need at least 2 samples to fit, got {n}")
    _check_rank(rank, n, p)
    centered, mean = linalg.mean_center(features)
    res = linalg.svd(centered)
    keep = min(rank, int(np.sum(res.s > SV_DROP_THRESHOLD)))
    if keep == 0:
        raise EmptyBasisError("all singular values below drop threshold")
    return PcaBasis(
        mean=mean,
        components=res.vt[:keep].copy(),
        singular_values=res.s[:keep].copy(),
        n_fitted=n,
    )


def fit_incremental(batches: Iterable[np.ndarray], rank: int) -> PcaBasis:
    """Fit PCA from a stream of row batches in O(rank * p) memory.

    Per batch, the retained factor diag(s) @ Vt is stacked with the
    centered new rows plus a mean-correction row, and re-decomposed. This
    reproduces the batch fit exactly whenever no variance is lost to the
    rank truncation, and closely otherwise.
    """
    if rank < 1:
        raise ContractViolationError(f"rank must be >= 1, got {rank}")
    mean = None
    s = None
    vt = None
    n = 0
    p = None
    for batch in batches:
        batch = linalg.as_matrix(batch, "batch")
        if p is None:
            p = batch.shape[1]
        elif batch.shape[1] != p:
            raise ContractViolationError(
                f"inconsistent feature count: expected {p}, got {batch.shape[1]}"
            )
        m = batch.shape[0]
        bmean = batch.mean(axis=0)
        if n == 0:
            mean = bmean
            stack = batch - bmean
        else:
            total = n + m
            corr = np.sqrt(n * m / total) * (mean - bmean)
            rows = [batch - bmean, corr[None, :]]
            if s is not None and len(s) > 0:
                rows.insert(0, s[:, None] * vt)
            stack = np.vstack(rows)
            mean = (n * mean + m * bmean) / total
        res = linalg.svd(stack)
        keep = min(rank, int(np.sum(res.s > SV_DROP_THRESHOLD)))
        s = res.s[:keep].copy()
        vt = res.vt[:keep].copy()
        n += m
    if n < 2:
        raise ContractViolationError(f"need at least 2 samples in total, got {n}")
    _check_rank(rank, n, p)
    if len(s) == 0:
        raise EmptyBasisError("all singular values below drop threshold")
    return PcaBasis(mean=mean, components=vt, singular_values=s, n_fitted=n)


def transform(basis: PcaBasis, x: np.ndarray) -> np.ndarray:
    """Project rows of x onto the basis: (x - mean) @ components.T."""
    x = linalg.as_matrix(x, "x")
    if x.shape[1] != basis.p:
        raise ContractViolationError(
            f"x has {x.shape[1]} columns, basis expects {basis.p}"
        )
    return (x - basis.mean) @ basis.components.T


def inverse_transform(basis: PcaBasis, scores: np.ndarray) -> np.ndarray:
    """Map scores back to feature space: scores @ components + mean."""
    scores = linalg.as_matrix(scores, "scores")
    if scores.shape[1] != basis.rank:
        raise ContractViolationError(
            f"scores have {scores.shape[1]} columns, basis rank is {basis.rank}"
        )
    return scores @ basis.components + basis.mean
