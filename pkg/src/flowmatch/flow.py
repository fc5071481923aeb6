"""Flows of bump fields and their compositions (diffeomorphism programs)."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .fields import FieldFamily, VectorField
from .geometry import Configuration, GeometryError, Manifold, canonicalize, wrap_difference

FORMAT_VERSION = 1
METHODS = ("rk45_adaptive", "rk4_fixed")


class IntegrationError(RuntimeError):
    """The integrator hit its step budget."""


@dataclass(frozen=True)
class IntegratorOptions:
    """``max_step`` doubles as the fixed step of ``rk4_fixed``."""

    method: str = "rk45_adaptive"
    abs_tol: float = 1e-10
    rel_tol: float = 1e-10
    max_step: float = math.inf
    max_steps: int = 200_000

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown integrator {self.method!r}")
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.method == "rk4_fixed" and not math.isfinite(self.max_step):
            raise ValueError("rk4_fixed needs a finite max_step")

    @property
    def _args(self):
        code = K.RK4 if self.method == "rk4_fixed" else K.RK45
        return code, self.abs_tol, self.rel_tol, float(self.max_step), int(self.max_steps)

    def to_dict(self) -> dict:
        return {"method": self.method, "abs_tol": self.abs_tol, "rel_tol": self.rel_tol,
                "max_step": None if math.isinf(self.max_step) else self.max_step,
                "max_steps": self.max_steps}

    @classmethod
    def from_dict(cls, d: dict) -> "IntegratorOptions":
        d = dict(d)
        if d.get("max_step") is None:
            d["max_step"] = math.inf
        return cls(**d)


DEFAULT_INTEGRATOR = IntegratorOptions()


def _check(status):
    if status != K.OK:
        raise IntegrationError("step budget exceeded; lower the stage time or loosen the tolerance")


def flow(X: VectorField, p, t: float, opts: IntegratorOptions = DEFAULT_INTEGRATOR) -> np.ndarray:
    """Time-``t`` flow of ``X`` from ``p``; exact identity for t = 0 and outside the support."""
    if not math.isfinite(t):
        raise ValueError("flow time must be finite")
    x = canonicalize(X.manifold, p)
    y, status = K.flow_one(X.params, x, x.shape[-1], float(t), *opts._args)
    _check(status)
    return y


@dataclass(eq=False)
class DiffeoProgram:
    """Composition ``Fl^{X_1}_{t_1} o ... o Fl^{X_N}_{t_N}``: the last stage acts first."""

    manifold: Manifold
    stages: list[tuple[VectorField, float]] = field(default_factory=list)
    integrator: IntegratorOptions = DEFAULT_INTEGRATOR
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.stages)

    def packed(self) -> tuple[np.ndarray, np.ndarray]:
        m = self.manifold.dim
        if not self.stages:
            return np.zeros((0, K.row_length(m))), np.zeros(0)
        P = np.stack([X.params for X, _ in self.stages])
        times = np.array([float(t) for _, t in self.stages])
        return P, times

    def __eq__(self, other):
        if not isinstance(other, DiffeoProgram):
            return NotImplemented
        return (self.manifold == other.manifold and self.integrator == other.integrator
                and len(self.stages) == len(other.stages)
                and all(X == Z and t == s for (X, t), (Z, s) in zip(self.stages, other.stages)))

    __hash__ = None

    def compose(self, other: "DiffeoProgram") -> "DiffeoProgram":
        """``self o other``: ``other`` acts first."""
        return DiffeoProgram(self.manifold, list(self.stages) + list(other.stages), self.integrator)

    def with_integrator(self, opts: IntegratorOptions) -> "DiffeoProgram":
        return DiffeoProgram(self.manifold, list(self.stages), opts, dict(self.meta))

    def __call__(self, p) -> np.ndarray:
        return apply(self, p)

    # serialization

    def to_dict(self) -> dict:
        out = {
            "version": FORMAT_VERSION,
            "manifold": self.manifold.to_dict(),
            "integrator": self.integrator.to_dict(),
            "stages": [{"field": X.to_dict(), "time": t} for X, t in self.stages],
        }
        out.update(self.meta)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "DiffeoProgram":
        if not isinstance(d, dict):
            raise ValueError("program must be a JSON object")
        if d.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported program version {d.get('version')!r}")
        M = Manifold.from_dict(d["manifold"])
        stages = [(VectorField.from_dict(M, s["field"]), float(s["time"])) for s in d["stages"]]
        meta = {k: v for k, v in d.items() if k not in ("version", "manifold", "integrator", "stages")}
        return cls(M, stages, IntegratorOptions.from_dict(d.get("integrator", {})), meta)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def loads(cls, text: str) -> "DiffeoProgram":
        return cls.from_dict(json.loads(text))


def apply(prog: DiffeoProgram, p) -> np.ndarray:
    """Image of a point ``(m,)`` or of a stack of points ``(k, m)``."""
    x = canonicalize(prog.manifold, p)
    if not prog.stages:
        return x
    P, times = prog.packed()
    if x.ndim == 1:
        y, status = K.apply_point(P, times, x, x.shape[0], *prog.integrator._args)
    else:
        y, status = K.apply_many(P, times, np.ascontiguousarray(x), *prog.integrator._args)
    _check(status)
    return y


def apply_config(prog: DiffeoProgram, c: Configuration) -> Configuration:
    imgs = apply(prog, c.points)
    try:
        return Configuration(prog.manifold, imgs)
    except GeometryError as exc:
        raise IntegrationError(f"images collided, integration is unreliable: {exc}") from None


def invert(prog: DiffeoProgram) -> DiffeoProgram:
    """Group inverse: stages reversed, times negated."""
    stages = [(X, -t) for X, t in reversed(prog.stages)]
    return DiffeoProgram(prog.manifold, stages, prog.integrator)


def jacobian(prog: DiffeoProgram, p, h: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian of the program at ``p`` (J[i, j] = d out_i / d in_j)."""
    if not h > 0:
        raise ValueError("finite-difference step must be positive")
    M = prog.manifold
    m = M.dim
    x = np.asarray(p, dtype=float)
    E = np.eye(m) * h
    probes = np.concatenate([x + E, x - E])
    if not prog.stages:
        return np.eye(m)
    # differentiate the displacement P(p) - p so the identity part is exact
    disp = wrap_difference(M, apply(prog, probes) - canonicalize(M, probes))
    return np.eye(m) + (disp[:m] - disp[m:]).T / (2.0 * h)


def tangent_jacobian(prog: DiffeoProgram, p) -> tuple[np.ndarray, np.ndarray]:
    """Images and Jacobians from the variational equation integrated alongside each stage.

    Free of finite-difference truncation; accurate to integrator tolerance. Accepts one
    point ``(m,)`` or a stack ``(k, m)``.
    """
    M = prog.manifold
    x = canonicalize(M, p)
    single = x.ndim == 1
    X = np.ascontiguousarray(np.atleast_2d(x))
    if not prog.stages:
        imgs, jacs = X.copy(), np.broadcast_to(np.eye(M.dim), (len(X), M.dim, M.dim)).copy()
    else:
        P, times = prog.packed()
        imgs, jacs, status = K.tangent_many(P, times, X, *prog.integrator._args)
        _check(status)
    return (imgs[0], jacs[0]) if single else (imgs, jacs)


def family_program(family: FieldFamily, t) -> DiffeoProgram:
    t = np.asarray(t, dtype=float)
    if t.shape != (family.N,):
        raise ValueError(f"expected {family.N} stage times, got shape {t.shape}")
    return DiffeoProgram(family.manifold, list(zip(family.fields, t.tolist())))


def eval_f(family: FieldFamily, t, opts: IntegratorOptions = DEFAULT_INTEGRATOR) -> Configuration:
    """The orbit map: images of the family's base points under the program built from ``t``."""
    prog = family_program(family, t).with_integrator(opts)
    return apply_config(prog, family.config)
