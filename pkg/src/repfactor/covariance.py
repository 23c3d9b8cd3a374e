"""Cross-covariance slices between control and experimental representations."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateSample, MissingEntry, NonFiniteValue, RowCountMismatch
from .model_io import AnalysisSet, ReprMatrix


@dataclass(frozen=True, eq=False)
class CovarianceSlice:
    """``omega`` is the ``d_l x d`` matrix ``Z^T Y`` for one group."""

    group_id: str
    omega: np.ndarray
    m: int

    def __post_init__(self):
        omega = np.array(self.omega, dtype=np.float64, copy=True)
        if omega.ndim != 2:
            raise ValueError(f"omega must be 2-d, got shape {omega.shape}")
        if not np.isfinite(omega).all():
            raise NonFiniteValue(f"non-finite covariance for {self.group_id!r}")
        omega.setflags(write=False)
        object.__setattr__(self, "omega", omega)

    @property
    def shape(self) -> tuple[int, int]:
        return self.omega.shape


def center_columns(m: ReprMatrix) -> ReprMatrix:
    """Subtract each column's mean."""
    x = m.values.astype(np.float64)
    return m.with_values(x - x.mean(axis=0, keepdims=True))


def _is_centered(x: np.ndarray) -> bool:
    scale = max(float(np.abs(x).max()), 1.0)
    return bool(np.all(np.abs(x.sum(axis=0)) <= 1e-12 * x.shape[0] * scale))


def cross_covariance(
    z: ReprMatrix | np.ndarray,
    y: ReprMatrix | np.ndarray,
    normalize: bool = False,
    strict: bool = False,
    group_id: str | None = None,
) -> CovarianceSlice:
    """Return the slice ``Z^T Y``, optionally divided by ``m - 1``.

    Centering is the caller's job; with ``strict=True`` both inputs are
    checked to have zero column sums.
    """
    zv = np.asarray(z.values if isinstance(z, ReprMatrix) else z, dtype=np.float64)
    yv = np.asarray(y.values if isinstance(y, ReprMatrix) else y, dtype=np.float64)
    if zv.shape[0] != yv.shape[0]:
        raise RowCountMismatch(f"control has {zv.shape[0]} rows, experimental {yv.shape[0]}")
    m = zv.shape[0]
    if strict and not (_is_centered(zv) and _is_centered(yv)):
        raise ValueError("inputs are not column-centered")
    omega = zv.T @ yv
    if normalize:
        if m < 2:
            raise DegenerateSample(f"need at least 2 rows to normalize, got {m}")
        omega = omega / (m - 1)
    if group_id is None:
        group_id = z.group_id if isinstance(z, ReprMatrix) else ""
    return CovarianceSlice(group_id, omega, m)


def build_slices(
    aset: AnalysisSet,
    layer: int,
    category: str,
    center: bool = True,
    normalize: bool = False,
    groups: Sequence[str] | None = None,
) -> list[CovarianceSlice]:
    """One slice per group for ``(layer, category)``, in manifest group order.

    ``groups`` restricts the selection (still emitted in manifest order);
    by default every manifest group is required.
    """
    wanted = list(aset.groups) if groups is None else [g for g in aset.groups if g in set(groups)]
    slices = []
    for g in wanted:
        if (g, layer, category) not in aset.entries:
            raise MissingEntry(f"group {g!r} has no entry for layer {layer}, category {category!r}")
        y, z = aset.load_pair(g, layer, category)
        if center:
            y, z = center_columns(y), center_columns(z)
        slices.append(cross_covariance(z, y, normalize=normalize, group_id=g))
    return slices
