"""Constructive n-transitivity: local Newton solves for flow times chained along a planned path."""

from __future__ import annotations

import itertools
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels as K
from .fields import BumpProfile, FieldFamily, build_family, check_compatible, family_radius
from .flow import DEFAULT_INTEGRATOR, DiffeoProgram, IntegratorOptions, apply
from .geometry import Configuration, GeometryError, Manifold, distance, separation, wrap_difference

log = logging.getLogger(__name__)


class SolveError(RuntimeError):
    """A local step or the path planner failed after all retries."""


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class SolveOptions:
    radius_factor: float = 0.25
    step_factor: float = 0.25
    newton_tol: float = 1e-9
    max_newton_iters: int = 25
    fd_step: float = 1e-6
    separation_floor: float | None = None
    max_path_retries: int = 20
    max_stage_time: float = 4.0
    max_bisections: int = 8
    isolated_radius: float = 1.0
    profile: str = "exponential"
    integrator: IntegratorOptions = DEFAULT_INTEGRATOR

    def __post_init__(self):
        if not 0 < self.radius_factor < 0.5:
            raise ValueError("radius_factor must lie in (0, 1/2)")
        if not 0 < self.step_factor < 1:
            raise ValueError("step_factor must lie in (0, 1)")
        if not (self.newton_tol > 0 and self.fd_step > 0 and self.max_stage_time > 0):
            raise ValueError("tolerances must be positive")
        if self.separation_floor is not None and not self.separation_floor > 0:
            raise ValueError("separation_floor must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["integrator"] = self.integrator.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SolveOptions":
        d = dict(d)
        if "integrator" in d:
            d["integrator"] = IntegratorOptions.from_dict(d["integrator"])
        return cls(**d)


@dataclass
class StepReport:
    iterations: int
    residual: float
    condition: float
    converged: bool
    moved_points: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SolveReport:
    waypoints: list[Configuration]
    steps: list[StepReport]
    total_stages: int
    residual: float
    bisections: int = 0
    delta: float = math.inf
    elapsed: float = 0.0
    structure: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "residual": self.residual,
            "total_stages": self.total_stages,
            "n_steps": len(self.steps),
            "n_waypoints": len(self.waypoints),
            "bisections": self.bisections,
            "delta": None if math.isinf(self.delta) else self.delta,
            "elapsed_s": self.elapsed,
            "max_step_residual": max((s.residual for s in self.steps), default=0.0),
            "max_newton_iterations": max((s.iterations for s in self.steps), default=0),
            "max_condition": max((s.condition for s in self.steps), default=1.0),
            "waypoints": [w.points.tolist() for w in self.waypoints],
            "structure": self.structure,
        }


# -- linearization at zero ---------------------------------------------------------------------


def jacobian_at_zero(family: FieldFamily) -> tuple[np.ndarray, float]:
    """Matrix of <X_k(x_i), Y_ij> (row (i, j), column k) and its 2-norm condition number."""
    vals = family.values_at_centers()          # (N, n, m)
    Y = family.frame_vectors()                 # (n, m, m)
    A = np.einsum("kia,ija->ijk", vals, Y).reshape(family.N, family.N)
    return A, float(np.linalg.cond(A))


# -- local step ---------------------------------------------------------------------------------


def _block_solve(P, x0, target, M, c0, opts: SolveOptions, guess=None):
    """Damped Newton for the m flow times of one point's own fields.

    The forward-difference Jacobian is refreshed on the first iteration, after a
    stalled line search and after a weak contraction; in between it is carried by
    Broyden rank-one updates.
    """
    args = opts.integrator._args
    m = M.dim
    tmax = opts.max_stage_time

    def F(t):
        y, status = K.apply_point(P, t, x0, len(x0), *args)
        if status != K.OK:
            raise SolveError("integration failed inside a local step")
        return y, wrap_difference(M, y - target)

    def fd_jacobian(t, res):
        J = np.empty((m, m))
        for j in range(m):
            tj = t.copy()
            tj[j] += h
            J[:, j] = (F(tj)[1] - res) / h
        return J

    # frame is the coordinate basis, so <target - current, Y_j> / c0 is a plain division
    t = np.clip(wrap_difference(M, target - x0) / c0, -tmax, tmax)
    y, res = F(t)
    nr = float(np.linalg.norm(res))
    if guess is not None:
        # the previous leg of the same point is often a far better start than the linear one
        tg = np.clip(np.asarray(guess, dtype=float), -tmax, tmax)
        yg, rg = F(tg)
        ng = float(np.linalg.norm(rg))
        if ng < nr:
            t, y, res, nr = tg, yg, rg, ng
    cond = 1.0
    it = 0
    h = opts.fd_step
    J = None
    fresh = False
    while nr > opts.newton_tol:
        if it >= opts.max_newton_iters:
            raise SolveError(f"Newton did not converge (residual {nr:.3g})")
        if J is None:
            J = fd_jacobian(t, res)
            cond = max(cond, float(np.linalg.cond(J)))
            fresh = True
        try:
            delta = np.linalg.solve(J, -res)
        except np.linalg.LinAlgError:
            raise SolveError("singular Jacobian in local step") from None
        lam = 1.0
        while True:
            tn = np.clip(t + lam * delta, -tmax, tmax)
            yn, rn = F(tn)
            nrn = float(np.linalg.norm(rn))
            if nrn < nr:
                break
            lam *= 0.5
            if lam < 1e-6:
                break
        if nrn >= nr:
            if fresh:
                raise SolveError(f"line search stalled (residual {nr:.3g})")
            J = None
            it += 1
            continue
        s_ = tn - t
        ss = float(s_ @ s_)
        if nrn > 0.5 * nr or ss == 0.0:
            J = None
        else:
            J = J + np.outer(rn - res - J @ s_, s_) / ss
            fresh = False
        t, y, res, nr = tn, yn, rn, nrn
        it += 1
    return t, y, it, nr, cond


def local_step(current: Configuration, target: Configuration, M: Manifold, kind: str,
               opts: SolveOptions = SolveOptions(), guess=None) -> tuple[DiffeoProgram, StepReport, np.ndarray]:
    """Solve for N flow times moving ``current`` onto ``target`` within the trust region.

    Returns the N-stage program, its report and the achieved images. ``guess`` is an
    optional length-N vector of starting times, tried next to the linear guess.

    Supports are disjoint, so the orbit map splits into one m-dimensional map per
    point; the forward-difference Jacobian of the full map is block diagonal and is
    assembled block by block.
    """
    fam = build_family(current, M, kind, opts.radius_factor, BumpProfile(opts.profile),
                       opts.isolated_radius)
    rho = opts.step_factor * fam.radius
    cur = current.points
    tgt = target.points
    disp = np.linalg.norm(wrap_difference(M, tgt - cur), axis=1)
    if np.max(disp) > rho * (1.0 + 1e-9):
        raise PreconditionError(f"displacement {np.max(disp):.3g} exceeds trust region {rho:.3g}")
    n, m = current.n, M.dim
    t = np.zeros(n * m)
    images = np.array(cur)
    iters, worst, cond, moved = 0, 0.0, 1.0, 0
    for i in np.nonzero(disp > 0)[0]:
        P = np.stack([X.params for X in fam.fields[i * m:(i + 1) * m]])
        gi = None
        if guess is not None and np.any(guess[i * m:(i + 1) * m]):
            gi = guess[i * m:(i + 1) * m]
        ti, yi, it, nr, ci = _block_solve(P, cur[i], tgt[i], M, fam.scale, opts, gi)
        t[i * m:(i + 1) * m] = ti
        images[i] = yi
        iters, worst, cond = max(iters, it), max(worst, nr), max(cond, ci)
        moved += 1
    prog = DiffeoProgram(M, list(zip(fam.fields, t.tolist())), opts.integrator)
    return prog, StepReport(iters, worst, cond, True, moved), images


# -- path planning ------------------------------------------------------------------------------


def _lift(M: Manifold, a, b):
    """Representative of b in the cover closest to a."""
    return a + wrap_difference(M, np.asarray(b) - a)


def _obstacle_images(M: Manifold, pts, near):
    """Static points lifted around ``near`` (all neighbouring copies on a torus)."""
    pts = np.atleast_2d(pts)
    if len(pts) == 0:
        return np.zeros((0, M.dim))
    lifted = np.array([_lift(M, near, p) for p in pts])
    if not M.is_torus:
        return lifted
    P = M.period_array()
    shifts = np.array(list(itertools.product((-1, 0, 1), repeat=M.dim))) * P
    return (lifted[:, None, :] + shifts[None, :, :]).reshape(-1, M.dim)


def _arc_points(o, R, e1, e2, th0, th1, max_angle=math.radians(2.0)):
    k = max(2, int(math.ceil(abs(th1 - th0) / max_angle)) + 1)
    th = np.linspace(th0, th1, k)
    return o + R * (np.cos(th)[:, None] * e1 + np.sin(th)[:, None] * e2)


def _perpendicular(e1, rng):
    v = rng.standard_normal(len(e1))
    v -= (v @ e1) * e1
    return v / np.linalg.norm(v)


def _route_segment(a, b, obstacles, R, rng, jitter=False):
    """Polyline from a to b detouring on circular arcs of radius R around close obstacles."""
    L = float(np.linalg.norm(b - a))
    if L == 0.0:
        return np.array([a])
    e1 = (b - a) / L
    hits = []
    for o in obstacles:
        tau = float((o - a) @ e1)
        if not 0.0 < tau < L:
            continue
        foot = a + tau * e1
        off = foot - o
        h = float(np.linalg.norm(off))
        if h >= R:
            continue
        w = math.sqrt(R * R - h * h)
        hits.append((tau - w, tau + w, o, off, h))
    hits.sort(key=lambda z: z[0])
    pts = [a]
    last = 0.0
    for lo, hi, o, off, h in hits:
        if lo <= last or hi >= L:
            return None
        e2 = off / h if h > 1e-12 * R else _perpendicular(e1, rng)
        th_in = math.atan2(h, -math.sqrt(R * R - h * h))
        th_out = math.atan2(h, math.sqrt(R * R - h * h))
        short = _arc_points(o, R, e1, e2, th_in, th_out)
        long_ = _arc_points(o, R, e1, e2, th_in, th_out + 2 * math.pi)
        others = [q for q in obstacles if q is not o]

        def clearance(arc):
            if not others:
                return math.inf
            return float(np.min(np.linalg.norm(np.asarray(others)[:, None, :] - arc[None], axis=2)))

        cs, cl = clearance(short), clearance(long_)
        if jitter:
            arc = short if rng.random() < 0.5 else long_
        elif cs == cl:
            arc = short if rng.random() < 0.5 else long_
        else:
            arc = short if cs > cl else long_
        pts.extend(arc)
        last = hi
    pts.append(b)
    return np.array(pts)


def _walk(poly, base, i, M, opts, delta_end=None):
    """Waypoint configurations along the polyline, spaced by the local trust region."""
    seg = np.linalg.norm(np.diff(poly, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    out = []
    s = 0.0
    pts = np.array(base)
    while s < total:
        pts[i] = poly[0] if s == 0.0 else _interp(poly, cum, s)
        cfg = Configuration(M, pts)
        step = opts.step_factor * family_radius(cfg, opts.radius_factor, opts.isolated_radius)
        s = min(s + step, total)
        out.append(cfg)
    pts[i] = poly[-1]
    out.append(Configuration(M, pts))
    return out[1:]


def _interp(poly, cum, s):
    k = int(np.searchsorted(cum, s, side="right")) - 1
    k = min(max(k, 0), len(poly) - 2)
    seg = cum[k + 1] - cum[k]
    lam = 0.0 if seg == 0 else (s - cum[k]) / seg
    return poly[k] + lam * (poly[k + 1] - poly[k])


def _route(M, pts, i, goal, delta, rng, opts, attempt):
    """Move point i of ``pts`` to ``goal`` around the other points; returns waypoints or None."""
    a = pts[i]
    b = _lift(M, a, goal)
    statics = np.delete(pts, i, axis=0)
    obstacles = list(_obstacle_images(M, statics, a)) if len(statics) else []
    R = delta * (1.25 if attempt == 0 else rng.uniform(1.1, 1.4))
    if obstacles:
        ends = min(float(np.min(np.linalg.norm(np.asarray(obstacles) - a, axis=1))),
                   float(np.min(np.linalg.norm(np.asarray(obstacles) - b, axis=1))))
        R = min(R, 0.999 * ends)
    legs = [(a, b)]
    if attempt >= 2:
        mid = 0.5 * (a + b)
        span = max(float(np.linalg.norm(b - a)), delta)
        for _ in range(50):
            v = mid + rng.standard_normal(M.dim) * span * 0.5 * (1 + attempt / 4)
            if not obstacles or np.min(np.linalg.norm(np.asarray(obstacles) - v, axis=1)) >= 1.5 * delta:
                break
        legs = [(a, v), (v, b)]
    poly = []
    for p, q in legs:
        piece = _route_segment(p, q, obstacles, R, rng, jitter=attempt >= 1)
        if piece is None:
            return None
        poly.append(piece if not poly else piece[1:])
    poly = np.concatenate(poly)
    way = _walk(poly, pts, i, M, opts)
    if any(separation(w) < delta for w in way):
        return None
    return way


def _parking_spot(M, pts, i, goals, pending, delta, rng):
    others = np.delete(pts, i, axis=0)
    avoid = np.concatenate([others, goals[[j for j in pending if j != i]]]) if len(pending) > 1 else others
    for k in range(2, 200):
        for _ in range(20):
            v = rng.standard_normal(M.dim)
            q = pts[i] + (k * delta) * v / np.linalg.norm(v)
            d = np.linalg.norm(wrap_difference(M, avoid - q), axis=1) if len(avoid) else np.array([np.inf])
            if np.min(d) >= 2 * delta:
                return q
    raise SolveError("could not find a parking spot for a blocking point")


def plan_path(x: Configuration, y: Configuration, M: Manifold | None = None, delta: float | None = None,
              opts: SolveOptions = SolveOptions(), seed: int = 0) -> list[Configuration]:
    """Collision-free polyline in configuration space from x to y, one moving point at a time.

    Every returned waypoint has separation >= delta; consecutive waypoints differ in one
    point by at most the local trust region step_factor * radius_factor * separation.
    """
    M = M or x.manifold
    if x.n != y.n:
        raise GeometryError("source and target have different numbers of points")
    if delta is None:
        delta = default_delta(x, y, opts)
    # the endpoints themselves bound what delta can be
    delta = min(delta, 0.5 * min(separation(x), separation(y)))
    if np.array_equal(x.points, y.points):
        return [x]
    rng = np.random.default_rng(seed)
    for attempt in range(opts.max_path_retries + 1):
        path = _plan_once(x, y, M, delta, rng, opts, attempt)
        if path is not None:
            return path
    raise SolveError("path planner failed after all retries")


def default_delta(x: Configuration, y: Configuration, opts: SolveOptions) -> float:
    if opts.separation_floor is not None:
        return opts.separation_floor
    return 0.5 * min(separation(x), separation(y))


def _plan_once(x, y, M, delta, rng, opts, attempt):
    pts = np.array(x.points)
    goals = y.points
    pending = [i for i in range(x.n) if distance(M, pts[i], goals[i]) > 0]
    if attempt > 0:
        rng.shuffle(pending)
    parked = set()
    path = [x]
    guard = 0
    while pending:
        guard += 1
        if guard > 4 * x.n + 4:
            return None
        free = []
        for i in pending:
            others = [j for j in pending if j != i]
            if not others or min(distance(M, goals[i], pts[j]) for j in others) >= 1.5 * delta:
                free.append(i)
        final = bool(free)
        if final:
            i = free[0]
            goal = goals[i]
        else:
            blockers = [j for j in pending if j not in parked and any(
                distance(M, goals[i], pts[j]) < 1.5 * delta for i in pending if i != j)]
            if not blockers:
                return None
            i = blockers[0]
            goal = _parking_spot(M, pts, i, goals, pending, delta, rng)
            parked.add(i)
        way = _route(M, pts, i, goal, delta, rng, opts, attempt)
        if way is None:
            return None
        path.extend(way)
        pts = np.array(way[-1].points)
        if final:
            pending.remove(i)
    return path


# -- global driver -------------------------------------------------------------------------------


def _midpoint(M, a: Configuration, b: Configuration) -> Configuration:
    return Configuration(M, a.points + 0.5 * wrap_difference(M, b.points - a.points))


def solve(x: Configuration, y: Configuration, M: Manifold | None = None, kind: str = "general",
          opts: SolveOptions = SolveOptions(), seed: int = 0) -> tuple[DiffeoProgram, SolveReport]:
    """Program whose flow composition maps x_i onto y_i for every i."""
    t0 = time.perf_counter()
    M = M or x.manifold
    if x.manifold != M or y.manifold != M:
        raise GeometryError("configurations live on a different manifold")
    if x.n != y.n:
        raise GeometryError("source and target have different numbers of points")
    check_compatible(M, kind)
    delta = default_delta(x, y, opts)
    waypoints = plan_path(x, y, M, delta, opts, seed)
    step_stages: list[list] = []
    reports: list[StepReport] = []
    bisections = 0
    # legs are pre-split into 2**hint pieces; the hint grows on failure and relaxes
    # after a run of successes, so a hard region is not re-discovered on every leg
    hint = 0
    streak = 0
    last_t = np.zeros(x.n * M.dim)

    def leg(cur: Configuration, target: Configuration, depth: int) -> Configuration:
        nonlocal bisections, hint, streak
        try:
            prog, rep, images = local_step(cur, target, M, kind, opts, last_t)
        except (SolveError, PreconditionError) as exc:
            if depth >= opts.max_bisections:
                raise SolveError(f"local step failed after {depth} bisections: {exc}") from exc
            bisections += 1
            hint = max(hint, depth + 1)
            streak = 0
            log.debug("bisecting leg at depth %d: %s", depth, exc)
            mid = leg(cur, _midpoint(M, cur, target), depth + 1)
            return leg(mid, target, depth + 1)
        times = np.array([t for _, t in prog.stages])
        moved = times.reshape(x.n, M.dim).any(axis=1)
        last_t.reshape(x.n, M.dim)[moved] = times.reshape(x.n, M.dim)[moved]
        step_stages.append([(X, t) for X, t in prog.stages if t != 0.0])
        reports.append(rep)
        streak += 1
        if streak >= 8 and hint > 0:
            hint -= 1
            streak = 0
        return Configuration(M, images)

    current = x
    for w in waypoints[1:]:
        pieces = 2 ** hint
        start = current
        for k in range(1, pieces + 1):
            if k == pieces:
                sub = w
            else:
                sub = Configuration(M, start.points + (k / pieces) * wrap_difference(M, w.points - start.points))
            current = leg(current, sub, hint)

    stages = [s for block in reversed(step_stages) for s in block]
    prog = DiffeoProgram(M, stages, opts.integrator)
    imgs = apply(prog, x.points)
    residual = float(np.max(np.linalg.norm(wrap_difference(M, imgs - y.points), axis=1)))
    report = SolveReport(waypoints, reports, len(stages), residual, bisections, delta,
                         time.perf_counter() - t0)
    return prog, report
