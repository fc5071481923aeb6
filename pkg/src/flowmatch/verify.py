"""A-posteriori certificates: structure preservation, field oracles, roundtrip consistency."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import forms
from .fields import VectorField, divfree_field_from, sample_ball
from .flow import DiffeoProgram, apply, invert, jacobian, tangent_jacobian
from .geometry import Manifold, canonicalize, wrap_difference

_STRUCTURE_OF_CLASS = {"hamiltonian": "symplectic", "divergence_free": "volume", "contact": "contact"}


class StructureMismatch(ValueError):
    pass


@dataclass
class StructureReport:
    kind: str
    samples: int
    max_defect: float
    tol: float
    h: float
    method: str
    pass_: bool
    lambda_min: float | None = None
    lambda_max: float | None = None
    negative_lambda: bool = False
    composition: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pass"] = d.pop("pass_")
        return d


@dataclass
class OracleReport:
    kind: str
    samples: int
    max_discrepancy: float
    tol: float
    pass_: bool
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pass"] = d.pop("pass_")
        return d


@dataclass
class RoundtripReport:
    samples: int
    max_error: float
    tol: float
    pass_: bool

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pass"] = d.pop("pass_")
        return d


DEFAULT_TOLS = {"none": 0.0, "symplectic": 1e-5, "volume": 1e-5, "contact": 1e-4}


def sample_points(prog: DiffeoProgram, k: int = 200, seed: int = 0, anchors=None) -> tuple[np.ndarray, dict]:
    """Anchor points, then points inside stage supports, then uniform background."""
    M = prog.manifold
    rng = np.random.default_rng(seed)
    anchors = np.zeros((0, M.dim)) if anchors is None else np.atleast_2d(np.asarray(anchors, float))
    anchors = anchors[:k]
    rest = k - len(anchors)
    n_ball = rest // 2 if prog.stages else 0
    n_bg = rest - n_ball
    balls = []
    if n_ball:
        idx = rng.integers(0, len(prog.stages), n_ball)
        for i in idx:
            X = prog.stages[i][0]
            balls.append(sample_ball(rng, X.center, X.radius, 1)[0])
    balls = np.array(balls).reshape(-1, M.dim)
    if M.is_torus:
        bg = rng.random((n_bg, M.dim)) * M.period_array()
    else:
        pts = np.concatenate([anchors] + [X.center[None] for X, _ in prog.stages[:2000]])
        if not len(pts):
            pts = np.zeros((1, M.dim))
        rmax = max((X.radius for X, _ in prog.stages), default=1.0)
        lo, hi = pts.min(axis=0) - rmax, pts.max(axis=0) + rmax
        bg = lo + rng.random((n_bg, M.dim)) * (hi - lo)
    out = canonicalize(M, np.concatenate([anchors, balls, bg]))
    return out, {"anchors": len(anchors), "support": len(balls), "background": n_bg}


def structure_kind(prog: DiffeoProgram, M: Manifold | None = None) -> str:
    M = M or prog.manifold
    for X, _ in prog.stages:
        need = _STRUCTURE_OF_CLASS.get(X.kind)
        if need is not None and need != M.structure:
            raise StructureMismatch(f"{X.kind} stage on a {M.structure!r} manifold")
    return M.structure


def _contact_defect(J, p, q) -> tuple[float, float]:
    alpha_p = forms.contact_form(p)
    pulled = J.T @ forms.contact_form(q)
    lam = float(pulled @ alpha_p / (alpha_p @ alpha_p))
    return lam, float(np.linalg.norm(pulled - lam * alpha_p) / np.linalg.norm(alpha_p))


def lambda_hat(prog: DiffeoProgram, p, h: float | None = None) -> tuple[float, float]:
    """Conformal factor of the pulled-back contact form at p, and the defect.

    Uses the tangent map unless a finite-difference step ``h`` is given.
    """
    p = np.asarray(p, dtype=float)
    if h is None:
        q, J = tangent_jacobian(prog, p)
    else:
        q, J = apply(prog, p), jacobian(prog, p, h)
    return _contact_defect(J, p, q)


METHODS = ("tangent", "fd")


def check_structure(prog: DiffeoProgram, M: Manifold | None = None, samples=None, h: float = 1e-5,
                    tol: float | None = None, seed: int = 0, method: str = "tangent") -> StructureReport:
    """Defect of the preserved structure at sample points.

    symplectic: max |J^T Omega J - Omega|; volume: |det J - 1|;
    contact: |f*alpha - lambda alpha| / |alpha| with lambda fitted per sample.
    ``method="tangent"`` takes J from the variational equation, ``"fd"`` from central
    differences with step ``h``. The latter carries O(h^2) truncation error that grows
    like the fourth power of the local stretching, so it is only meaningful on mildly
    distorting programs.
    """
    if method not in METHODS:
        raise ValueError(f"unknown jacobian method {method!r}")
    if not h > 0:
        raise ValueError("finite-difference step must be positive")
    M = M or prog.manifold
    kind = structure_kind(prog, M)
    tol = DEFAULT_TOLS[kind] if tol is None else tol
    composition = {}
    if samples is None:
        samples, composition = sample_points(prog, 200, seed)
    samples = canonicalize(M, np.atleast_2d(np.asarray(samples, dtype=float)))
    worst = 0.0
    lams = []
    if kind != "none":
        if method == "tangent":
            imgs, jacs = tangent_jacobian(prog, samples)
        else:
            imgs = apply(prog, samples)
            jacs = np.array([jacobian(prog, p, h) for p in samples])
        if kind == "symplectic":
            Om = forms.symplectic_matrix(M.dim)
            defects = np.abs(np.einsum("kji,jl,klm->kim", jacs, Om, jacs) - Om).max(axis=(1, 2))
        elif kind == "volume":
            defects = np.abs(np.linalg.det(jacs) - 1.0)
        else:
            pairs = [_contact_defect(J, p, q) for J, p, q in zip(jacs, samples, imgs)]
            lams = [lam for lam, _ in pairs]
            defects = np.array([d for _, d in pairs])
        worst = float(defects.max()) if len(defects) else 0.0
    rep = StructureReport(kind, len(samples), worst, tol, h, method, worst <= tol, composition=composition)
    if lams:
        rep.lambda_min, rep.lambda_max = min(lams), max(lams)
        # flows stay in the identity component, so a non-positive factor is out of model
        rep.negative_lambda = rep.lambda_min <= 0
        rep.pass_ = rep.pass_ and not rep.negative_lambda
    return rep


def _central(fn, x, e, h, order):
    """Derivative of fn along e: central difference, Richardson-extrapolated when order is 4."""
    d1 = (fn(x + h * e) - fn(x - h * e)) / (2 * h)
    if order == 2:
        return d1
    h2 = 0.5 * h
    d2 = (fn(x + h2 * e) - fn(x - h2 * e)) / (2 * h2)
    return (4.0 * d2 - d1) / 3.0


def _central_grad(fn, x, h, order=4):
    return np.array([_central(fn, x, e, h, order) for e in np.eye(len(x))])


def oracle_field_check(X: VectorField, M: Manifold | None = None, samples=None, tol: float = 1e-6,
                       h: float | None = None, seed: int = 0, k: int = 100, order: int = 4) -> OracleReport:
    """Compare the closed-form field with its defining equations at sample points.

    hamiltonian: solve i_X sigma = df with df by central differences.
    contact: solve alpha(X) = f, i_X d(alpha) - mu alpha = -df for (X, mu).
    divergence_free: central-difference divergence, and agreement with the Hodge-star route.
    The default fd step is 1e-5, or 1e-4 * min(1, r) for the divergence stencil. ``order=2`` uses the
    plain central stencil, whose truncation error grows like (h / r)^2 on small supports;
    ``order=4`` (default) adds one Richardson step.
    """
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    M = M or X.manifold
    if h is None:
        h = 1e-4 * min(1.0, X.radius) if X.kind == "divergence_free" else 1e-5
    if X.kind == "general" or X.generator is None:
        raise ValueError("field carries no generator data to check against")
    if samples is None:
        samples = sample_ball(np.random.default_rng(seed), X.center, X.radius, k)
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    m = M.dim
    f = lambda x: float(X.potential(x)[0])  # noqa: E731
    worst = 0.0
    extra: dict = {"h": h, "order": order}
    if X.kind == "hamiltonian":
        Om = forms.symplectic_matrix(m)
        for x in samples:
            df = _central_grad(f, x, h, order)
            # (i_X sigma)_j = sum_i X_i Omega_ij
            ref = np.linalg.solve(Om.T, df)
            worst = max(worst, float(np.max(np.abs(ref - X(x)))))
    elif X.kind == "contact":
        dA = forms.contact_dalpha(m)
        alpha_err = 0.0
        for x in samples:
            df = _central_grad(f, x, h, order)
            a = forms.contact_form(x)
            A = np.zeros((m + 1, m + 1))
            A[0, :m] = a
            A[1:, :m] = dA.T
            A[1:, m] = -a
            rhs = np.concatenate([[f(x)], -df])
            sol = np.linalg.solve(A, rhs)
            val = X(x)
            worst = max(worst, float(np.max(np.abs(sol[:m] - val))))
            alpha_err = max(alpha_err, abs(float(a @ val) - f(x)))
        extra["alpha_minus_f"] = alpha_err
    elif X.kind == "divergence_free":
        ext = divfree_field_from(M, X.generator, X.center, X.radius, X.profile)
        div = 0.0
        route = 0.0
        for x in samples:
            dv = sum(_central(lambda p, j=j: X(p)[j], x, e, h, order) for j, e in enumerate(np.eye(m)))
            div = max(div, abs(dv))
            route = max(route, float(np.max(np.abs(X.scale * ext(x) - X(x)))))
        worst = div
        extra["hodge_route_discrepancy"] = route
    return OracleReport(X.kind, len(samples), worst, tol, worst <= tol, extra)


def roundtrip_check(prog: DiffeoProgram, samples=None, tol: float = 1e-7, seed: int = 0) -> RoundtripReport:
    """max |P^-1(P(p)) - p| over samples."""
    if samples is None:
        samples, _ = sample_points(prog, 200, seed)
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if not prog.stages:
        return RoundtripReport(len(samples), 0.0, tol, True)
    back = apply(invert(prog), apply(prog, samples))
    err = np.linalg.norm(wrap_difference(prog.manifold, back - canonicalize(prog.manifold, samples)), axis=1)
    worst = float(err.max())
    return RoundtripReport(len(samples), worst, tol, worst <= tol)


def point_match(prog: DiffeoProgram, source, target) -> float:
    """max_i distance(P(x_i), y_i)."""
    M = prog.manifold
    imgs = apply(prog, np.asarray(source, dtype=float))
    d = wrap_difference(M, imgs - canonicalize(M, np.asarray(target, dtype=float)))
    return float(np.max(np.linalg.norm(d, axis=1))) if len(d) else 0.0


def is_finite_report(d: dict) -> bool:
    return all(not (isinstance(v, float) and math.isnan(v)) for v in d.values())
