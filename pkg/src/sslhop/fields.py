"""Dense displacement-field containers and input assembly.

Layout conventions, fixed across the package:

* raw per-subject fields are direction-major ``(3, H, W, Z)`` arrays,
  one scalar displacement component per direction per voxel;
* two acquisition phases (end-diastole / end-systole) are merged along
  depth before feature extraction, either interlaced (default) or as
  plain blocks, giving ``(3, H, W, 2Z)``.

All operations are pure: they never mutate their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteValuesError, OutOfBoundsError, ShapeMismatchError

DIRECTIONS = 3


def validate_field(field: np.ndarray) -> np.ndarray:
    """Check the (3, H, W, Z) layout and finiteness of a displacement field."""
    arr = np.asarray(field)
    if arr.ndim != 4 or arr.shape[0] != DIRECTIONS:
        raise ShapeMismatchError(f"expected a (3, H, W, Z) field, got shape {arr.shape}")
    if min(arr.shape[1:]) < 1:
        raise ShapeMismatchError(f"field has an empty axis: {arr.shape}")
    if not np.isfinite(arr).all():
        raise NonFiniteValuesError("field contains non-finite values")
    return arr


def crop_roi(field: np.ndarray, origin: tuple[int, int, int],
             size: tuple[int, int, int]) -> np.ndarray:
    """Copy the (h, w, z) region of interest starting at voxel ``origin``.

    ``origin`` and ``size`` are (y, x, z) / (h, w, z) tuples in voxel
    units; the window must lie entirely inside the field.
    """
    arr = validate_field(field)
    y, x, z = (int(v) for v in origin)
    h, w, d = (int(v) for v in size)
    if min(h, w, d) < 1:
        raise OutOfBoundsError(f"crop size must be positive, got {size}")
    _, H, W, Z = arr.shape
    if y < 0 or x < 0 or z < 0 or y + h > H or x + w > W or z + d > Z:
        raise OutOfBoundsError(
            f"crop origin {origin} size {size} exceeds field dims {(H, W, Z)}")
    return arr[:, y:y + h, x:x + w, z:z + d].copy()


def centered_origin(dims: tuple[int, int, int],
                    size: tuple[int, int, int]) -> tuple[int, int, int]:
    """Origin that centers a crop window inside ``dims`` (floor on odd gaps)."""
    if any(s > d for s, d in zip(size, dims)):
        raise OutOfBoundsError(f"crop size {size} exceeds field dims {dims}")
    return tuple((d - s) // 2 for d, s in zip(dims, size))


def _check_phase_pair(ed: np.ndarray, es: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ed, es = validate_field(ed), validate_field(es)
    if ed.shape != es.shape:
        raise ShapeMismatchError(f"phase shapes differ: {ed.shape} vs {es.shape}")
    return ed, es


def interlace_concat(ed: np.ndarray, es: np.ndarray) -> np.ndarray:
    """Merge two phases along depth, alternating slices (ED_k, ES_k, ...).

    A depth-6 analysis window over the result spans three consecutive
    slice *pairs*, so phase contrast is visible to the earliest local
    features rather than only at block boundaries.
    """
    ed, es = _check_phase_pair(ed, es)
    out = np.empty(ed.shape[:3] + (2 * ed.shape[3],), dtype=np.result_type(ed, es))
    out[..., 0::2] = ed
    out[..., 1::2] = es
    return out


def plain_concat(ed: np.ndarray, es: np.ndarray) -> np.ndarray:
    """Merge two phases along depth as two contiguous blocks (ED then ES)."""
    ed, es = _check_phase_pair(ed, es)
    return np.concatenate([ed, es], axis=3)


def deinterlace(field: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`interlace_concat`; returns (ed, es) copies."""
    arr = validate_field(field)
    if arr.shape[3] % 2:
        raise ShapeMismatchError("interlaced depth must be even")
    return arr[..., 0::2].copy(), arr[..., 1::2].copy()


@dataclass(frozen=True)
class DeformationSample:
    """One subject's assembled two-phase field plus its class label."""

    interlaced: np.ndarray  # (3, H, W, 2Z), float64
    label: int
    subject_id: str

    def __post_init__(self) -> None:
        arr = validate_field(self.interlaced)
        if arr.shape[3] % 2:
            raise ShapeMismatchError("assembled depth must be even (two phases)")
        if self.label < 0:
            raise ShapeMismatchError(f"label must be a non-negative id, got {self.label}")
        object.__setattr__(self, "interlaced", np.ascontiguousarray(arr, dtype=np.float64))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.interlaced.shape[1:]
