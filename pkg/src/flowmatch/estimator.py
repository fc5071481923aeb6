"""Scikit-learn style wrapper: ``fit(source, target)`` builds the program, ``transform`` applies it."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .fields import CLASSES
from .flow import IntegratorOptions, apply, invert
from .geometry import Configuration, Manifold, canonicalize, wrap_difference
from .solve import SolveOptions, solve
from .verify import check_structure, sample_points

_DEFAULT_STRUCTURE = {"general": "none", "hamiltonian": "symplectic",
                      "divergence_free": "volume", "contact": "contact"}


def check_points(X, dim: int | None = None, name: str = "X") -> np.ndarray:
    """Validate a (k, m) array of finite coordinates."""
    X = check_array(X, dtype=np.float64, ensure_2d=True, ensure_min_features=2,
                    input_name=name)
    if dim is not None and X.shape[1] != dim:
        raise ValueError(f"{name} has {X.shape[1]} coordinates, expected {dim}")
    return X


def check_pair(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = check_points(X, name="X")
    y = check_points(y, dim=X.shape[1], name="y")
    if len(X) != len(y):
        raise ValueError(f"source has {len(X)} points but target has {len(y)}")
    return X, y


class FlowMatcher(TransformerMixin, BaseEstimator):
    """Diffeomorphism of R^m or a flat torus carrying given source points onto targets.

    The map is a composition of flows of compactly supported bump fields of one
    class, so it preserves the corresponding structure (symplectic form, volume, or
    contact form up to a positive factor).

    Parameters
    ----------
    field_class : {"general", "hamiltonian", "divergence_free", "contact"}
    manifold : {"euclidean", "flat_torus"}
    periods : sequence of float, optional
        Torus periods; all ones when omitted.
    radius_factor, step_factor, newton_tol, max_newton_iters, profile
        Forwarded to :class:`~flowmatch.solve.SolveOptions`.
    tol : float
        Absolute and relative tolerance of the adaptive integrator.
    seed : int
        Seed of the path planner.

    Attributes
    ----------
    program_ : DiffeoProgram
    report_ : SolveReport
    manifold_ : Manifold
    n_features_in_ : int
    """

    def __init__(self, field_class="general", manifold="euclidean", periods=None,
                 radius_factor=0.25, step_factor=0.25, newton_tol=1e-9, max_newton_iters=25,
                 profile="exponential", tol=1e-10, seed=0):
        self.field_class = field_class
        self.manifold = manifold
        self.periods = periods
        self.radius_factor = radius_factor
        self.step_factor = step_factor
        self.newton_tol = newton_tol
        self.max_newton_iters = max_newton_iters
        self.profile = profile
        self.tol = tol
        self.seed = seed

    def _options(self) -> SolveOptions:
        return SolveOptions(radius_factor=self.radius_factor, step_factor=self.step_factor,
                            newton_tol=self.newton_tol, max_newton_iters=self.max_newton_iters,
                            profile=self.profile,
                            integrator=IntegratorOptions(abs_tol=self.tol, rel_tol=self.tol))

    def fit(self, X, y):
        """Solve for a program mapping row i of ``X`` onto row i of ``y``."""
        X, y = check_pair(X, y)
        if self.field_class not in CLASSES:
            raise ValueError(f"field_class must be one of {CLASSES}, got {self.field_class!r}")
        M = Manifold(self.manifold, X.shape[1], _DEFAULT_STRUCTURE[self.field_class],
                     tuple(self.periods or ()))
        src, tgt = Configuration(M, X), Configuration(M, y)
        self.program_, self.report_ = solve(src, tgt, M, self.field_class, self._options(), seed=self.seed)
        self.program_.meta.update({"class": self.field_class, "source": src.points.tolist(),
                                   "target": tgt.points.tolist(), "seed": self.seed})
        self.manifold_ = M
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        """Images of the rows of ``X``."""
        check_is_fitted(self, "program_")
        X = check_points(X, dim=self.n_features_in_)
        return apply(self.program_, X)

    def inverse_transform(self, X):
        check_is_fitted(self, "program_")
        X = check_points(X, dim=self.n_features_in_)
        return apply(invert(self.program_), X)

    def score(self, X, y):
        """Negative worst distance between images of ``X`` and ``y`` (0 is perfect)."""
        check_is_fitted(self, "program_")
        X, y = check_pair(X, y)
        d = wrap_difference(self.manifold_, self.transform(X) - canonicalize(self.manifold_, y))
        return -float(np.max(np.linalg.norm(d, axis=1)))

    def structure_report(self, n_samples: int = 200, seed: int = 0):
        """Certificate of structure preservation at sampled points."""
        check_is_fitted(self, "program_")
        pts, comp = sample_points(self.program_, n_samples, seed, anchors=self.program_.meta["source"])
        rep = check_structure(self.program_, samples=pts)
        rep.composition = comp
        return rep
