"""Compactly supported bump vector fields in four structure classes, and field families.

Every constructed field takes the value ``scale * Y`` at its center exactly, vanishes
outside the closed ball of the given radius, and carries a closed-form bound on its
sup-norm. The Hamiltonian, divergence-free and contact fields are built from
generators (a Hamiltonian, an (m-2)-form, a contact Hamiltonian) and are exactly
structure preserving up to floating point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property, lru_cache

import numpy as np
from scipy.optimize import minimize_scalar

from . import _kernels as K
from . import forms
from .geometry import Configuration, GeometryError, Manifold, frame, separation, wrap_difference

CLASSES = ("general", "hamiltonian", "divergence_free", "contact")
PROFILES = ("exponential", "polynomial", "plateau")

_CLASS_CODE = {"general": K.GENERAL, "hamiltonian": K.HAMILTONIAN,
               "divergence_free": K.DIVFREE, "contact": K.CONTACT}
_PROFILE_CODE = {"exponential": K.EXPONENTIAL, "polynomial": K.POLYNOMIAL, "plateau": K.PLATEAU}
_REQUIRED_STRUCTURE = {"hamiltonian": "symplectic", "divergence_free": "volume",
                       "contact": "contact"}


class StructureMismatch(ValueError):
    """Field class not available on the given manifold."""


def check_compatible(M: Manifold, kind: str) -> None:
    if kind not in CLASSES:
        raise ValueError(f"unknown field class {kind!r}")
    need = _REQUIRED_STRUCTURE.get(kind)
    if need is not None and M.structure != need:
        raise StructureMismatch(f"{kind} fields need a {need} manifold, got structure {M.structure!r}")


# -- bump profiles ----------------------------------------------------------------------


@lru_cache(maxsize=None)
def _profile_constants(code: int) -> tuple[float, float]:
    return (_sup(lambda u: u * abs(K.bump(code, u)[1])),
            _sup(lambda u: abs(K.bump(code, u)[1])))


def _sup(fn) -> float:
    grid = np.linspace(0.0, 1.0, 20001)[:-1]
    vals = np.array([fn(s) for s in grid])
    i = int(np.argmax(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    res = minimize_scalar(lambda s: -fn(s), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-14})
    # small inflation: the bound is used as a certificate
    return max(vals[i], -res.fun) * (1.0 + 1e-9)


@dataclass(frozen=True)
class BumpProfile:
    """Radial cutoff phi with phi(0)=1, phi'(0)=0, support [0, 1).

    ``exponential`` is C-infinity; ``polynomial`` is the quintic smoothstep (C^2),
    cheaper but outside the smooth category.
    """

    kind: str = "exponential"

    def __post_init__(self):
        if self.kind not in PROFILES:
            raise ValueError(f"unknown bump profile {self.kind!r}")

    @property
    def code(self) -> int:
        return _PROFILE_CODE[self.kind]

    def __call__(self, s: float) -> tuple[float, float]:
        return bump_eval(self, s)

    @property
    def C(self) -> float:
        """sup over [0,1] of u*|phi'(u)|."""
        return _profile_constants(self.code)[0]

    @property
    def D(self) -> float:
        """sup over [0,1] of |phi'(u)|."""
        return _profile_constants(self.code)[1]


def bump_eval(profile: BumpProfile, s: float) -> tuple[float, float]:
    """Value and derivative of the profile at ``s >= 0``."""
    if s < 0:
        raise ValueError("bump profile is defined for s >= 0")
    phi, dphi, _ = K.bump(profile.code, float(s))
    return phi, dphi


# -- generators and fields ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GeneratorData:
    """Class-specific parameters that determine a field.

    hamiltonian: ``covector`` a with f = phi * <a, x - c>.
    contact: ``covector`` a and ``f0`` with f = phi * (f0 + <a, x - c>); ``w`` caches
    f0 - sum c_y a_y, the z-component at the center.
    divergence_free: ``frame`` (u_2..u_m) completing the direction to an orthonormal
    basis and the calibrated orientation ``sign`` of the Hodge-star route.
    """

    kind: str
    covector: np.ndarray | None = None
    f0: float = 0.0
    w: float = 0.0
    frame: np.ndarray | None = None
    sign: int = 1

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind}
        if self.covector is not None:
            out["covector"] = self.covector.tolist()
        if self.kind == "contact":
            out["f0"] = self.f0
            out["w"] = self.w
        if self.frame is not None:
            out["frame"] = self.frame.tolist()
            out["sign"] = self.sign
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorData":
        cov = d.get("covector")
        fr = d.get("frame")
        return cls(
            kind=d["kind"],
            covector=None if cov is None else np.asarray(cov, dtype=float),
            f0=float(d.get("f0", 0.0)),
            w=float(d.get("w", 0.0)),
            frame=None if fr is None else np.asarray(fr, dtype=float),
            sign=int(d.get("sign", 1)),
        )


@dataclass(frozen=True, eq=False)
class VectorField:
    """A compactly supported field ``X`` with ``X(center) = scale * direction``.

    ``unit_bound`` bounds sup|X| / scale analytically.
    """

    kind: str
    manifold: Manifold
    center: np.ndarray
    radius: float
    direction: np.ndarray
    profile: BumpProfile
    scale: float
    generator: GeneratorData
    unit_bound: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")

    @cached_property
    def params(self) -> np.ndarray:
        m = self.manifold.dim
        p = np.zeros(K.row_length(m))
        p[K.I_CLASS] = _CLASS_CODE[self.kind]
        p[K.I_PROFILE] = self.profile.code
        p[K.I_RADIUS] = self.radius
        p[K.I_SCALE] = self.scale
        p[K.I_TORUS] = 1.0 if self.manifold.is_torus else 0.0
        p[K.I_DIM] = m
        oc, op, o1, o2 = K.layout(m)
        p[oc:oc + m] = self.center
        p[op:op + m] = self.manifold.period_array()
        g = self.generator
        if self.kind == "general":
            p[o1:o1 + m] = self.direction
        elif self.kind == "hamiltonian":
            p[o1:o1 + m] = g.covector
        elif self.kind == "divergence_free":
            p[o1:o1 + m] = self.direction
            p[o2:o2 + m] = g.frame[0]
        else:
            p[o1:o1 + m] = g.covector
            p[K.I_F0] = g.f0
            p[K.I_W] = g.w
        p.setflags(write=False)
        return p

    @property
    def sup_bound(self) -> float:
        return self.scale * self.unit_bound

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return K.field_many(self.params, x[None, :])[0]
        return K.field_many(self.params, np.ascontiguousarray(x))

    def potential(self, x) -> np.ndarray:
        """Scaled generator value: f (hamiltonian, contact) or psi = phi <u_2, u> (divergence_free).

        Plain numpy, independent of the compiled field kernel.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        u = wrap_difference(self.manifold, x - self.center)
        s = np.linalg.norm(u, axis=1) / self.radius
        phi = np.array([bump_eval(self.profile, v)[0] for v in s])
        g = self.generator
        if self.kind == "hamiltonian":
            val = phi * (u @ g.covector)
        elif self.kind == "contact":
            val = phi * (g.f0 + u @ g.covector)
        elif self.kind == "divergence_free":
            val = phi * (u @ g.frame[0])
        else:
            raise ValueError("general fields have no generator")
        return self.scale * val

    def rescaled(self, scale: float) -> "VectorField":
        return replace(self, scale=float(scale))

    def with_direction(self, Y) -> "VectorField":
        """Copy evaluating ``scale * Y`` at the center (general class only: fault injection)."""
        if self.kind != "general":
            raise ValueError("direction override is only meaningful for general fields")
        return replace(self, direction=np.asarray(Y, dtype=float))

    def to_dict(self) -> dict:
        return {
            "class": self.kind,
            "center": self.center.tolist(),
            "radius": self.radius,
            "direction": self.direction.tolist(),
            "profile": self.profile.kind,
            "scale": self.scale,
            "unit_bound": self.unit_bound,
            "generator": self.generator.to_dict(),
        }

    @classmethod
    def from_dict(cls, M: Manifold, d: dict) -> "VectorField":
        return cls(
            kind=d["class"],
            manifold=M,
            center=np.asarray(d["center"], dtype=float),
            radius=float(d["radius"]),
            direction=np.asarray(d["direction"], dtype=float),
            profile=BumpProfile(d.get("profile", "exponential")),
            scale=float(d["scale"]),
            generator=GeneratorData.from_dict(d["generator"]),
            unit_bound=float(d["unit_bound"]),
        )

    def __eq__(self, other):
        if not isinstance(other, VectorField):
            return NotImplemented
        return self.manifold == other.manifold and self.to_dict() == other.to_dict()

    __hash__ = None


class FieldRule:
    """A vector field given by an evaluation rule (not necessarily compactly supported)."""

    def __init__(self, kind: str, fn, name: str = ""):
        self.kind = kind
        self.name = name or kind
        self._fn = fn

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return np.asarray(self._fn(x), dtype=float)
        return np.array([self._fn(row) for row in x])

    def __repr__(self):
        return f"FieldRule({self.name})"


def _validate_bump_args(M: Manifold, c, Y, r):
    c = np.asarray(c, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if c.shape != (M.dim,) or Y.shape != (M.dim,):
        raise GeometryError(f"center and direction need {M.dim} components")
    if not r > 0:
        raise ValueError("radius must be positive")
    if abs(np.linalg.norm(Y) - 1.0) > 1e-12:
        raise ValueError("direction must be a unit vector")
    if M.is_torus and r >= 0.5 * min(M.periods):
        raise ValueError("support radius must be below half the smallest torus period")
    return c, Y, float(r)


def make_general_field(M: Manifold, c, Y, r, profile: BumpProfile = BumpProfile()) -> VectorField:
    """X(x) = phi(dist(x, c) / r) * Y."""
    c, Y, r = _validate_bump_args(M, c, Y, r)
    return VectorField("general", M, c, r, Y, profile, 1.0, GeneratorData("general"), 1.0)


def _require(M: Manifold, structure: str):
    if M.structure != structure:
        raise StructureMismatch(f"needs a {structure} manifold, got {M.structure!r}")


def hamiltonian_field_from(M: Manifold, grad_f) -> FieldRule:
    """Field X with i_X sigma = df, i.e. X_x = df/dy and X_y = -df/dx."""
    _require(M, "symplectic")
    d = M.half_dim

    def X(x):
        g = np.asarray(grad_f(x), dtype=float)
        return np.concatenate([g[d:], -g[:d]])

    return FieldRule("hamiltonian", X)


def make_hamiltonian_bump(M: Manifold, c, Y, r, profile: BumpProfile = BumpProfile()):
    """Hamiltonian f = phi * <a, x - c> with a = (-Y_y, Y_x), so that grad^sigma f (c) = Y.

    Returns ``(generator, field)``; the field is scaled by 1/(1 + C_phi) so its sup
    is at most 1.
    """
    _require(M, "symplectic")
    c, Y, r = _validate_bump_args(M, c, Y, r)
    d = M.half_dim
    a = np.concatenate([-Y[d:], Y[:d]])
    gen = GeneratorData("hamiltonian", covector=a)
    bound = float(np.linalg.norm(a)) * (1.0 + profile.C)
    X = VectorField("hamiltonian", M, c, r, Y, profile, 1.0 / bound, gen, bound)
    return gen, X


def complete_frame(Y) -> np.ndarray:
    """Orthonormal u_2..u_m (rows) orthogonal to the unit vector Y."""
    Y = np.asarray(Y, dtype=float)
    m = Y.shape[0]
    Q, _ = np.linalg.qr(np.column_stack([Y, np.eye(m)]))
    U = Q[:, 1:m].T
    # re-orthogonalize against Y to keep <u_j, Y> at rounding level
    U = U - np.outer(U @ Y, Y)
    return U / np.linalg.norm(U, axis=1, keepdims=True)


def divfree_field_from(M: Manifold, gen: GeneratorData, c, r, profile: BumpProfile = BumpProfile()) -> FieldRule:
    """X = sign * (-1)^(m+1) * (*d beta)^sharp, beta = phi * <u_2, x - c> * u_3 ^ ... ^ u_m.

    Evaluated through the exterior-algebra route: d beta by the product rule and the
    combinatorial flat Hodge star. Slow; used to calibrate and cross-check the kernel.
    """
    _require(M, "volume")
    m = M.dim
    c = np.asarray(c, dtype=float)
    u2 = gen.frame[0]
    omega = forms.wedge_all([forms.one_form(u) for u in gen.frame[1:]], m)
    sgn = gen.sign * (-1) ** (m + 1)

    def X(x):
        u = wrap_difference(M, x - c)
        rho = float(np.linalg.norm(u))
        phi, dphi, g = K.bump(profile.code, rho / r)
        dpsi = phi * u2 + float(u2 @ u) * g / (r * r) * u
        dbeta = forms.wedge(forms.one_form(dpsi), omega)
        return sgn * forms.to_vector(forms.hodge_star(dbeta, m), m)

    return FieldRule("divergence_free", X)


@lru_cache(maxsize=4096)
def _calibrated_frame(Y: tuple[float, ...]) -> tuple[np.ndarray, int]:
    # the value at the center depends only on Y and the frame, not on c, r or the manifold
    Y = np.asarray(Y)
    m = len(Y)
    U = complete_frame(Y)
    M0 = Manifold("euclidean", m, "volume")
    probe = divfree_field_from(M0, GeneratorData("divergence_free", frame=U, sign=1), np.zeros(m), 1.0)(np.zeros(m))
    along = float(probe @ Y)
    if abs(along) < 0.5 or np.linalg.norm(probe - along * Y) > 1e-12:
        raise RuntimeError("divergence-free construction does not point along Y at the center")
    U.setflags(write=False)
    return U, 1 if along > 0 else -1


def make_divfree_bump(M: Manifold, c, Y, r, profile: BumpProfile = BumpProfile()):
    """Divergence-free bump with X(c) = scale * Y; the Hodge-star sign is calibrated at the center."""
    _require(M, "volume")
    c, Y, r = _validate_bump_args(M, c, Y, r)
    U, sign = _calibrated_frame(tuple(Y.tolist()))
    gen = GeneratorData("divergence_free", frame=U, sign=sign)
    bound = 1.0 + profile.C
    X = VectorField("divergence_free", M, c, r, Y, profile, 1.0 / bound, gen, bound)
    return gen, X


def reeb_field(M: Manifold) -> FieldRule:
    """The Reeb field of alpha = dz - sum y dx, which is d/dz."""
    _require(M, "contact")
    e = np.zeros(M.dim)
    e[-1] = 1.0
    return FieldRule("reeb", lambda x: e.copy(), "reeb")


def contact_field_from(M: Manifold, f, grad_f) -> FieldRule:
    """The contact field X with alpha(X) = f (Darboux coordinates).

    X_x = -df/dy, X_y = df/dx + y df/dz, X_z = f - <y, df/dy>; then
    L_X alpha = (df/dz) alpha.
    """
    _require(M, "contact")
    d = M.half_dim

    def X(x):
        g = np.asarray(grad_f(x), dtype=float)
        y = x[d:2 * d]
        return np.concatenate([-g[d:2 * d], g[:d] + y * g[2 * d], [f(x) - y @ g[d:2 * d]]])

    return FieldRule("contact", X)


def contact_jet_system(M: Manifold, c, Y) -> tuple[np.ndarray, np.ndarray]:
    """Linear system in (a, f0) expressing X(c) = Y for f = f0 + <a, x - c> near c, plus a_z = 0."""
    m = M.dim
    d = M.half_dim
    cy = np.asarray(c, dtype=float)[d:2 * d]
    A = np.zeros((m + 1, m + 1))
    b = np.zeros(m + 1)
    for i in range(d):
        A[i, d + i] = -1.0              # X_x = -a_y
        b[i] = Y[i]
        A[d + i, i] = 1.0               # X_y = a_x + c_y a_z
        A[d + i, 2 * d] = cy[i]
        b[d + i] = Y[d + i]
    A[2 * d, m] = 1.0                   # X_z = f0 - <c_y, a_y>
    A[2 * d, d:2 * d] = -cy
    b[2 * d] = Y[2 * d]
    A[m, 2 * d] = 1.0                   # a_z = 0: no Reeb-direction stretching at c
    return A, b


def make_contact_bump(M: Manifold, c, Y, r, profile: BumpProfile = BumpProfile()):
    """Contact bump f = phi * (f0 + <a, x - c>) solving the jet conditions X(c) = Y."""
    _require(M, "contact")
    c, Y, r = _validate_bump_args(M, c, Y, r)
    d = M.half_dim
    A, b = contact_jet_system(M, c, Y)
    # structural solution: a = (Y_y, -Y_x, 0), f0 = Y_z + <c_y, a_y>
    a = np.concatenate([Y[d:2 * d], -Y[:d], [0.0]])
    f0 = float(Y[2 * d] + c[d:2 * d] @ a[d:2 * d])
    if np.max(np.abs(A @ np.append(a, f0) - b)) > 1e-12:
        raise RuntimeError("contact jet system not satisfied by the structural solution")
    gen = GeneratorData("contact", covector=a, f0=f0, w=float(Y[2 * d]))
    ybar = float(np.linalg.norm(c[d:2 * d])) + r
    an = float(np.linalg.norm(a))
    G = an * (1.0 + profile.C) + profile.D * abs(f0) / r
    Fmax = abs(f0) + an * r
    bound = math.sqrt(G * G + (G * (1.0 + ybar)) ** 2 + (Fmax + ybar * G) ** 2)
    X = VectorField("contact", M, c, r, Y, profile, 1.0 / bound, gen, bound)
    return gen, X


_MAKERS = {
    "hamiltonian": make_hamiltonian_bump,
    "divergence_free": make_divfree_bump,
    "contact": make_contact_bump,
}


def make_bump(M: Manifold, kind: str, c, Y, r, profile: BumpProfile = BumpProfile()) -> VectorField:
    if kind == "general":
        return make_general_field(M, c, Y, r, profile)
    return _MAKERS[kind](M, c, Y, r, profile)[1]


# -- families ---------------------------------------------------------------------------------


@dataclass
class Conditions9Report:
    """Center, cross and sup-norm checks of a field family against the scaled frame."""

    max_center_error: float
    max_cross_error: float
    sup_bound: float
    pass_: bool
    tol_center: float = 0.0
    tol_cross: float = 0.0
    sampled_sup: float | None = None

    def to_dict(self) -> dict:
        return {
            "max_center_error": self.max_center_error,
            "max_cross_error": self.max_cross_error,
            "sup_bound": self.sup_bound,
            "sampled_sup": self.sampled_sup,
            "tol_center": self.tol_center,
            "tol_cross": self.tol_cross,
            "pass": self.pass_,
        }


@dataclass
class FieldFamily:
    """N = n*m fields; field k = i*m + j (0-based) sits at point i with frame direction j."""

    fields: list[VectorField]
    config: Configuration
    scale: float
    kind: str
    radius: float
    report: Conditions9Report = field(default=None)

    @property
    def manifold(self) -> Manifold:
        return self.config.manifold

    @property
    def N(self) -> int:
        return len(self.fields)

    def frame_vectors(self) -> np.ndarray:
        """Y_ij stacked as an (n, m, m) array."""
        m = self.manifold.dim
        return np.stack([frame(self.manifold, x) for x in self.config.points]).reshape(self.config.n, m, m)

    def values_at_centers(self) -> np.ndarray:
        """(N, n, m) array of X_k(x_i)."""
        pts = np.ascontiguousarray(self.config.points)
        return np.stack([K.field_many(X.params, pts) for X in self.fields])


def family_radius(config: Configuration, radius_factor: float, isolated_radius: float = 1.0) -> float:
    """Support radius: a fraction of the separation, capped on tori and for lone points."""
    M = config.manifold
    sep = separation(config, M)
    r = isolated_radius if math.isinf(sep) else radius_factor * sep
    if M.is_torus:
        r = min(r, 0.25 * min(M.periods))
    if not r > 0:
        raise GeometryError("zero separation: configuration points coincide")
    return r


def build_family(config: Configuration, M: Manifold, kind: str, radius_factor: float = 0.25,
                 profile: BumpProfile = BumpProfile(), isolated_radius: float = 1.0) -> FieldFamily:
    """Build the n*m bump fields at the configuration points with one shared scale.

    With ``radius_factor < 1/2`` the supports are pairwise disjoint, so every field
    vanishes at the other points and equals ``scale * Y_ij`` at its own.
    """
    check_compatible(M, kind)
    if not radius_factor > 0:
        raise ValueError("radius_factor must be positive")
    n, m = config.n, M.dim
    N = n * m
    if N > 100_000:
        raise OverflowError(f"family of {N} fields is too large")
    r = family_radius(config, radius_factor, isolated_radius)
    fields = []
    for i, x in enumerate(config.points):
        for Y in frame(M, x):
            fields.append(make_bump(M, kind, x, Y, r, profile))
    scale = min(X.scale for X in fields)
    fields = [X if X.scale == scale else X.rescaled(scale) for X in fields]
    fam = FieldFamily(fields, config, scale, kind, r)
    fam.report = _exact_report(fam)
    return fam


def _center_cross(fam: FieldFamily) -> tuple[float, float]:
    n, m = fam.config.n, fam.manifold.dim
    vals = fam.values_at_centers()                      # (N, n, m)
    own = np.arange(fam.N) // m
    expected = fam.scale * fam.frame_vectors().reshape(fam.N, m)
    center = np.linalg.norm(vals[np.arange(fam.N), own] - expected, axis=1)
    mask = np.ones((fam.N, n), dtype=bool)
    mask[np.arange(fam.N), own] = False
    cross = np.linalg.norm(vals, axis=2)[mask]
    return float(center.max()), float(cross.max()) if cross.size else 0.0


def _exact_report(fam: FieldFamily) -> Conditions9Report:
    center, cross = _center_cross(fam)
    sup = max(X.sup_bound for X in fam.fields)
    return Conditions9Report(center, cross, sup, center == 0.0 and cross == 0.0 and sup < 2.0)


def sample_ball(rng: np.random.Generator, c, r: float, k: int) -> np.ndarray:
    """Uniform samples in the closed ball of radius r about c."""
    m = len(c)
    v = rng.standard_normal((k, m))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    rad = r * rng.random(k) ** (1.0 / m)
    return np.asarray(c) + v * rad[:, None]


def check_conditions9(fam: FieldFamily, eps: float, samples_per_ball: int = 10_000,
                      seed: int = 0) -> Conditions9Report:
    """Re-check the center, cross and sup conditions with tolerance ``eps`` relative to the scaled frame."""
    center, cross = _center_cross(fam)
    rng = np.random.default_rng(seed)
    sampled = 0.0
    for X in fam.fields:
        pts = sample_ball(rng, X.center, X.radius, samples_per_ball)
        sampled = max(sampled, float(np.max(np.linalg.norm(X(pts), axis=1))))
    analytic = max(X.sup_bound for X in fam.fields)
    tol = eps * fam.scale
    ok = center <= tol and cross <= tol and max(analytic, sampled) < 2.0
    return Conditions9Report(center, cross, analytic, ok, tol, tol, sampled)
