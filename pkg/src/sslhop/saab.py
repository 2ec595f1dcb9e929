"""Subspace approximation with adjusted bias.

A fitted kernel maps neighborhood unions of length D to F response
channels through one affine transform per channel: channel 0 projects
onto the constant (DC) direction, channels 1..F-1 project the
mean-centered DC-removed residual onto its leading principal directions,
estimated from training unions. Every channel shares the same bias
``bias_scale * sqrt(F)``.

Fitting runs in two accumulation passes over row batches (mean, then
centered scatter), so training unions never need to be materialized in
one matrix; a dense matrix is simply the single-batch case.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .errors import DegenerateInputError, DegenerateInputWarning, ShapeMismatchError

# Relative eigenvalue threshold below which residual directions are treated
# as numerically rank-deficient and zero-padded instead of kept.
RANK_RTOL = 1e-10


@dataclass(frozen=True)
class SaabKernel:
    """One fitted union-to-channels affine transform."""

    dc: np.ndarray        # (D,) constant direction, unit norm
    ac: np.ndarray        # (F-1, D) orthonormal rows; zero rows where padded
    bias: float           # shared additive offset, bias_scale * sqrt(F)
    mean_ac: np.ndarray   # (D,) training mean of the DC-removed unions
    energy: np.ndarray    # (F-1,) per-component explained-variance ratios
    padded: int = 0       # trailing AC rows beyond the training rank (zeros)
    degenerate: bool = False  # training unions had no residual variance

    @property
    def dim(self) -> int:
        return self.dc.shape[0]

    @property
    def channels(self) -> int:
        return self.ac.shape[0] + 1


def _as_rows(X) -> np.ndarray:
    """Accept a 2D array or anything with a ``.data`` row matrix."""
    rows = getattr(X, "data", X)
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise ShapeMismatchError(f"expected a 2D row matrix, got shape {rows.shape}")
    return rows


def _remove_dc(rows: np.ndarray, dc: np.ndarray) -> np.ndarray:
    return rows - np.outer(rows @ dc, dc)


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip each row so its largest-magnitude entry is positive."""
    out = vectors.copy()
    for i, v in enumerate(out):
        j = int(np.argmax(np.abs(v)))
        if v[j] < 0:
            out[i] = -v
    return out


def _descending_order(evals: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Sort indices by eigenvalue descending; break exact ties by comparing
    the sign-fixed eigenvector entries lexicographically."""
    order = np.argsort(-evals, kind="stable")
    vals = evals[order]
    if vals.size > 1 and np.any(vals[1:] == vals[:-1]):
        keyed = sorted(order, key=lambda i: (-evals[i], tuple(vectors[i])))
        order = np.asarray(keyed)
    return order


def fit_saab_batches(make_batches: Callable[[], Iterable[np.ndarray]],
                     channels: int, bias_scale: float = 0.0) -> SaabKernel:
    """Fit a kernel from repeated passes over row batches.

    ``make_batches`` must yield the same rows in the same order each time
    it is called; batch boundaries only bound memory, changing the result
    by nothing beyond summation roundoff versus a single dense fit.
    """
    channels = int(channels)
    n = 0
    dim = None
    sum_ac = None
    for batch in make_batches():
        rows = _as_rows(batch)
        if dim is None:
            dim = rows.shape[1]
            if channels < 1 or channels > dim:
                raise DegenerateInputError(
                    f"channels must lie in [1, {dim}], got {channels}")
            dc = np.full(dim, 1.0 / np.sqrt(dim))
            sum_ac = np.zeros(dim)
        elif rows.shape[1] != dim:
            raise ShapeMismatchError(f"batch width {rows.shape[1]} != {dim}")
        sum_ac += _remove_dc(rows, dc).sum(axis=0)
        n += rows.shape[0]
    if dim is None or n < 2:
        raise DegenerateInputError(f"need at least 2 training unions, got {n}")
    mean_ac = sum_ac / n

    scatter = np.zeros((dim, dim))
    for batch in make_batches():
        centered = _remove_dc(_as_rows(batch), dc) - mean_ac
        scatter += centered.T @ centered
    cov = scatter / (n - 1)

    n_ac = channels - 1
    ac = np.zeros((n_ac, dim))
    energy = np.zeros(n_ac)
    padded = n_ac
    degenerate = False
    evals, evecs = np.linalg.eigh(cov)
    evals = np.clip(evals, 0.0, None)
    total = float(evals.sum())
    if total <= 0.0:
        degenerate = True
        if n_ac:
            warnings.warn("training unions have no residual variance; "
                          "AC anchors zero-padded", DegenerateInputWarning)
    elif n_ac:
        vectors = _fix_signs(evecs.T)
        order = _descending_order(evals, vectors)
        rank = int(np.count_nonzero(evals > RANK_RTOL * evals.max()))
        keep = min(n_ac, rank)
        sel = order[:keep]
        ac[:keep] = vectors[sel]
        energy[:keep] = evals[sel] / total
        padded = n_ac - keep
        if padded:
            warnings.warn(f"{padded} requested components exceed the training "
                          f"rank {rank}; zero-padded", DegenerateInputWarning)
    else:
        padded = 0
    return SaabKernel(dc=dc, ac=ac, bias=float(bias_scale) * np.sqrt(channels),
                      mean_ac=mean_ac, energy=energy, padded=padded,
                      degenerate=degenerate)


def fit_saab(X, channels: int, bias_scale: float = 0.0) -> SaabKernel:
    """Fit a kernel from one dense union matrix (rows = unions)."""
    rows = _as_rows(X)
    return fit_saab_batches(lambda: (rows,), channels, bias_scale)


def apply_saab(kernel: SaabKernel, X) -> np.ndarray:
    """Project unions onto the kernel's channels.

    Column 0 is ``dc . x + bias``; column i >= 1 is
    ``ac_i . (x - mean_ac) + bias``.
    """
    rows = _as_rows(X)
    if rows.shape[1] != kernel.dim:
        raise ShapeMismatchError(
            f"union length {rows.shape[1]} != kernel dim {kernel.dim}")
    out = np.empty((rows.shape[0], kernel.channels))
    out[:, 0] = rows @ kernel.dc + kernel.bias
    if kernel.channels > 1:
        out[:, 1:] = (rows - kernel.mean_ac) @ kernel.ac.T + kernel.bias
    return out


def energy_curve(kernel: SaabKernel) -> np.ndarray:
    """Cumulative explained-variance ratios of the AC components."""
    return np.cumsum(kernel.energy)
