"""Supported manifolds, point canonicalization, flat distances and configurations."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

KINDS = ("euclidean", "flat_torus")
STRUCTURES = ("none", "symplectic", "volume", "contact")

#: separation of a one-point configuration (there are no pairs to measure)
UNBOUNDED = math.inf


class GeometryError(ValueError):
    """Invalid manifold, point or configuration."""


@dataclass(frozen=True)
class Manifold:
    """Euclidean space or a flat torus, optionally carrying a standard structure.

    Coordinates on a symplectic manifold are ordered ``(x_1..x_d, y_1..y_d)``
    with ``sigma = sum dx_i ^ dy_i``. A contact manifold is ``R^(2d+1)`` with
    coordinates ``(x_1..x_d, y_1..y_d, z)`` and ``alpha = dz - sum y_i dx_i``.
    """

    kind: str = "euclidean"
    dim: int = 2
    structure: str = "none"
    periods: tuple[float, ...] = field(default=())

    def __post_init__(self):
        if self.kind not in KINDS:
            raise GeometryError(f"unknown manifold kind {self.kind!r}")
        if self.structure not in STRUCTURES:
            raise GeometryError(f"unknown structure {self.structure!r}")
        if int(self.dim) != self.dim or self.dim < 2:
            raise GeometryError(f"dimension must be an integer >= 2, got {self.dim}")
        object.__setattr__(self, "dim", int(self.dim))
        if self.structure == "symplectic" and self.dim % 2:
            raise GeometryError("a symplectic manifold needs even dimension")
        if self.structure == "contact":
            if self.dim % 2 == 0 or self.dim < 3:
                raise GeometryError("a contact manifold needs odd dimension >= 3")
            if self.kind != "euclidean":
                raise GeometryError("the contact structure is only supported on R^(2d+1)")
        if self.kind == "flat_torus":
            periods = tuple(float(p) for p in self.periods) or (1.0,) * self.dim
            if len(periods) != self.dim:
                raise GeometryError(f"expected {self.dim} periods, got {len(periods)}")
            if not all(p > 0 and math.isfinite(p) for p in periods):
                raise GeometryError("torus periods must be positive and finite")
            object.__setattr__(self, "periods", periods)
        elif self.periods:
            raise GeometryError("periods are only meaningful on a flat torus")

    @property
    def is_torus(self) -> bool:
        return self.kind == "flat_torus"

    @property
    def half_dim(self) -> int:
        return self.dim // 2

    def period_array(self) -> np.ndarray:
        """Periods as an array; zeros stand for "not periodic"."""
        if self.is_torus:
            return np.asarray(self.periods, dtype=float)
        return np.zeros(self.dim)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "dim": self.dim, "structure": self.structure}
        if self.is_torus:
            out["periods"] = list(self.periods)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Manifold":
        try:
            return cls(
                kind=data.get("kind", "euclidean"),
                dim=data["dim"],
                structure=data.get("structure", "none"),
                periods=tuple(data.get("periods") or ()),
            )
        except KeyError as exc:
            raise GeometryError(f"manifold is missing key {exc}") from None


def _as_coords(M: Manifold, p) -> np.ndarray:
    arr = np.asarray(p, dtype=float)
    if arr.shape[-1:] != (M.dim,):
        raise GeometryError(f"expected {M.dim} coordinates, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise GeometryError("coordinates must be finite")
    return arr


def canonicalize(M: Manifold, p) -> np.ndarray:
    """Return the canonical coordinates of ``p`` (torus: each coordinate in ``[0, period)``).

    Works on a single point ``(m,)`` or a stack ``(k, m)``.
    """
    arr = _as_coords(M, p)
    if not M.is_torus:
        return arr.copy()
    P = M.period_array()
    out = np.mod(arr, P)
    # np.mod can round up to exactly P for tiny negative inputs
    return np.where(out >= P, 0.0, out)


def wrap_difference(M: Manifold, d) -> np.ndarray:
    """Shortest representative of a coordinate difference (identity on Euclidean space)."""
    d = np.asarray(d, dtype=float)
    if not M.is_torus:
        return d
    P = M.period_array()
    return d - P * np.round(d / P)


def distance(M: Manifold, p, q) -> float:
    """Flat-metric distance; on the torus, per-coordinate differences are wrapped first."""
    d = wrap_difference(M, _as_coords(M, q) - _as_coords(M, p))
    return float(np.sqrt(np.sum(d * d, axis=-1)))


def pairwise_distances(M: Manifold, points) -> np.ndarray:
    pts = _as_coords(M, points)
    diff = wrap_difference(M, pts[:, None, :] - pts[None, :, :])
    return np.sqrt(np.sum(diff * diff, axis=-1))


def frame(M: Manifold, p=None) -> np.ndarray:
    """Orthonormal frame of the tangent space at ``p``: the coordinate basis, one vector per row."""
    if p is not None:
        _as_coords(M, p)
    return np.eye(M.dim)


class Configuration:
    """Ordered tuple of pairwise-distinct points of ``M``, stored canonicalized as an ``(n, m)`` array."""

    def __init__(self, M: Manifold, points):
        pts = np.atleast_2d(_as_coords(M, points))
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise GeometryError("a configuration needs at least one point")
        self.manifold = M
        self.points = canonicalize(M, pts)
        self.points.setflags(write=False)
        dup = self.coincident_pairs()
        if dup:
            names = ", ".join(f"({i}, {j})" for i, j in dup)
            raise GeometryError(f"configuration has coincident points at indices {names}")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def __len__(self):
        return self.n

    def __getitem__(self, i):
        return self.points[i]

    def __iter__(self):
        return iter(self.points)

    def __repr__(self):
        return f"Configuration(n={self.n}, dim={self.manifold.dim})"

    def coincident_pairs(self) -> list[tuple[int, int]]:
        D = pairwise_distances(self.manifold, self.points)
        i, j = np.nonzero(np.triu(D == 0.0, k=1))
        return list(zip(i.tolist(), j.tolist()))

    def separation(self) -> float:
        return separation(self, self.manifold)

    def replace(self, i: int, p) -> "Configuration":
        pts = np.array(self.points)
        pts[i] = p
        return Configuration(self.manifold, pts)


def separation(c: Configuration, M: Manifold | None = None) -> float:
    """Minimum pairwise distance; :data:`UNBOUNDED` for a single point."""
    M = M or c.manifold
    if c.n == 1:
        return UNBOUNDED
    D = pairwise_distances(M, c.points)
    return float(np.min(D[np.triu_indices(c.n, k=1)]))
