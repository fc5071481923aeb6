"""End-to-end acceptance checks at their stated tolerances.

Each test records one pass/fail line, shown in the session summary.
"""
import time

import numpy as np
import pytest

from flowmatch.cli import DEMOS, Scenario
from flowmatch.fields import build_family, check_conditions9, make_bump
from flowmatch.flow import DiffeoProgram, DEFAULT_INTEGRATOR, apply, eval_f
from flowmatch.geometry import Configuration, Manifold, separation
from flowmatch.solve import SolveOptions, jacobian_at_zero, plan_path, solve
from flowmatch.verify import check_structure, oracle_field_check, roundtrip_check, sample_points

from helpers import random_config, record

# class -> compatible manifolds
CELLS = [
    ("general", Manifold("euclidean", 2)), ("general", Manifold("euclidean", 3)),
    ("general", Manifold("euclidean", 4)), ("general", Manifold("flat_torus", 2)),
    ("hamiltonian", Manifold("euclidean", 2, "symplectic")), ("hamiltonian", Manifold("euclidean", 4, "symplectic")),
    ("hamiltonian", Manifold("flat_torus", 2, "symplectic")),
    ("divergence_free", Manifold("euclidean", 2, "volume")), ("divergence_free", Manifold("euclidean", 3, "volume")),
    ("divergence_free", Manifold("euclidean", 4, "volume")), ("divergence_free", Manifold("flat_torus", 2, "volume")),
    ("contact", Manifold("euclidean", 3, "contact")), ("contact", Manifold("euclidean", 5, "contact")),
]
TOL = DEFAULT_INTEGRATOR.abs_tol


def cell_name(kind, M):
    return f"{kind}/{'T' if M.is_torus else 'R'}{M.dim}"


def residual(prog, x, y):
    from flowmatch.verify import point_match
    return point_match(prog, x.points, y.points)


def unit(v):
    return v / np.linalg.norm(v)


# 1 -----------------------------------------------------------------------------------------


@pytest.mark.slow
def test_c1_n_transitivity():
    worst_res, worst_time, failures = 0.0, (0.0, ""), []
    for kind, M in CELLS:
        for n in (1, 2, 3, 4, 6):
            rng = np.random.default_rng(1000 * M.dim + 10 * n + M.is_torus)
            t0 = time.perf_counter()
            res = 0.0
            for k in range(20):
                x, y = random_config(M, n, rng), random_config(M, n, rng)
                try:
                    prog, _ = solve(x, y, M, kind, seed=k)
                    res = max(res, residual(prog, x, y))
                except Exception as exc:  # noqa: BLE001 - any failure counts against the cell
                    failures.append(f"{cell_name(kind, M)} n={n} pair {k}: {exc}")
            dt = time.perf_counter() - t0
            worst_res = max(worst_res, res)
            if dt > worst_time[0]:
                worst_time = (dt, f"{cell_name(kind, M)} n={n}")
            if res > 1e-6 or dt > 60:
                failures.append(f"{cell_name(kind, M)} n={n}: residual {res:.1e}, {dt:.1f}s")
    ok = not failures
    record("C1 transitive", ok, f"65 cells x 20 pairs; max residual {worst_res:.1e} (<= 1e-6); "
                                f"slowest cell {worst_time[1]} {worst_time[0]:.1f}s (<= 60s)")
    assert ok, failures


# 2 -----------------------------------------------------------------------------------------


def test_c2_jacobian_at_zero():
    rng = np.random.default_rng(2)
    worst = 0.0
    for k in range(50):
        kind, M = CELLS[k % len(CELLS)]
        cfg = random_config(M, int(rng.integers(1, 7)), rng)
        fam = build_family(cfg, M, kind, radius_factor=rng.uniform(0.05, 0.45))
        A, _ = jacobian_at_zero(fam)
        worst = max(worst, float(np.max(np.abs(A - fam.scale * np.eye(fam.N)))))
    ok = worst <= 1e-12
    record("C2 jac-at-0", ok, f"50 families; max |A - c0 I| = {worst:.1e} (<= 1e-12)")
    assert ok


# 3 -----------------------------------------------------------------------------------------


def test_c3_conditions_certificate():
    rng = np.random.default_rng(3)
    cross = center = sup = 0.0
    passed = True
    for k in range(100):
        kind, M = CELLS[k % len(CELLS)]
        cfg = random_config(M, int(rng.integers(1, 7)), rng)
        fam = build_family(cfg, M, kind)
        rep = check_conditions9(fam, 0.0, samples_per_ball=400, seed=k)
        cross, center = max(cross, rep.max_cross_error), max(center, rep.max_center_error)
        sup = max(sup, rep.sampled_sup, rep.sup_bound)
        passed = passed and fam.report.pass_ and rep.pass_
    ok = passed and cross == 0.0 and center == 0.0 and sup < 2.0
    record("C3 conditions", ok, f"100 configurations; cross {cross:g}, center {center:g}, sup|X| {sup:.3f} (< 2)")
    assert ok


# 4 -----------------------------------------------------------------------------------------


def _demo_programs():
    out = {}
    for name, d in DEMOS.items():
        sc = Scenario.from_dict(d)
        prog, _ = solve(sc.source, sc.target, sc.manifold, sc.kind, sc.options, seed=sc.seed)
        assert prog.integrator.abs_tol == prog.integrator.rel_tol == 1e-10
        pts, _ = sample_points(prog, 200, 0, anchors=sc.source.points)
        out[name] = (prog, pts)
    return out


@pytest.fixture(scope="module")
def demos():
    return _demo_programs()


LIMITS = {"symplectic": 1e-5, "volume": 1e-5, "contact": 1e-4}


def _c4(demos, method):
    parts, ok = [], True
    for name, (prog, pts) in demos.items():
        rep = check_structure(prog, samples=pts, h=1e-5, method=method)
        good = rep.max_defect <= LIMITS[rep.kind] and rep.samples == 200
        s = f"{name} {rep.max_defect:.1e}"
        if rep.kind == "contact":
            good = good and 0.5 <= rep.lambda_min <= rep.lambda_max <= 2.0
            s += f" lambda [{rep.lambda_min:.2f}, {rep.lambda_max:.2f}]"
        ok = ok and good
        parts.append(s)
    return ok, "; ".join(parts)


def test_c4_structure_on_demos(demos):
    ok, detail = _c4(demos, "tangent")
    record("C4 structure", ok, f"tangent-map Jacobian: {detail}")
    assert ok


def test_c4_structure_on_demos_fd_jacobian(demos):
    # a central-difference Jacobian at h = 1e-5 cannot resolve the thin, strongly
    # compressed shells that swap paths leave behind; kept as a visible failure
    ok, detail = _c4(demos, "fd")
    record("C4 fd h=1e-5", ok, f"central-difference Jacobian: {detail}")
    assert ok


# 5 -----------------------------------------------------------------------------------------


def test_c5_field_oracles():
    rng = np.random.default_rng(5)
    worst = {}
    for kind, M in CELLS:
        if kind == "general":
            continue
        for _ in range(5):
            X = make_bump(M, kind, rng.random(M.dim), unit(rng.standard_normal(M.dim)), rng.uniform(0.02, 0.5))
            rep = oracle_field_check(X, k=100, seed=int(rng.integers(1 << 30)))
            assert rep.samples == 100
            worst[kind] = max(worst.get(kind, 0.0), rep.max_discrepancy)
    ok = all(v <= 1e-6 for v in worst.values())
    record("C5 oracles", ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + " (<= 1e-6)")
    assert ok


# 6 -----------------------------------------------------------------------------------------


@pytest.mark.slow
def test_c6_roundtrip_on_solver_outputs(demos):
    rows, worst, fails, total = [], 0.0, 0, 0
    for name, (prog, pts) in demos.items():
        e = roundtrip_check(prog, pts).max_error
        total += 1
        fails += e > 1e-7
        worst = max(worst, e)
        rows.append(f"{name} {e:.1e}")
    for kind, M in CELLS:
        rng = np.random.default_rng(600 + M.dim + 10 * M.is_torus)
        cell = 0.0
        for n in (1, 3, 6):
            for k in range(4):
                x, y = random_config(M, n, rng), random_config(M, n, rng)
                prog, _ = solve(x, y, M, kind, seed=k)
                pts, _ = sample_points(prog, 200, k, anchors=x.points)
                e = roundtrip_check(prog, pts).max_error
                total += 1
                fails += e > 1e-7
                cell = max(cell, e)
        worst = max(worst, cell)
        rows.append(f"{cell_name(kind, M)} {cell:.1e}")
    ok = fails == 0
    record("C6 roundtrip", ok, f"{total - fails}/{total} programs <= 1e-7, worst {worst:.1e}; " + ", ".join(rows))
    assert ok


def test_c6_disjoint_commutation():
    rng = np.random.default_rng(6)
    worst = 0.0
    for kind, M in CELLS:
        for _ in range(4):
            c1 = rng.random(M.dim)
            c2 = c1 + unit(rng.standard_normal(M.dim)) * 0.3
            if M.is_torus:
                c2 %= 1.0
            X1 = make_bump(M, kind, c1, unit(rng.standard_normal(M.dim)), 0.12)
            X2 = make_bump(M, kind, c2, unit(rng.standard_normal(M.dim)), 0.14)
            t1, t2 = rng.uniform(-2, 2, 2)
            pts = np.concatenate([c1 + 0.1 * rng.standard_normal((20, M.dim)),
                                  c2 + 0.1 * rng.standard_normal((20, M.dim)), rng.random((10, M.dim))])
            a = apply(DiffeoProgram(M, [(X1, t1), (X2, t2)]), pts)
            b = apply(DiffeoProgram(M, [(X2, t2), (X1, t1)]), pts)
            d = a - b
            if M.is_torus:
                d -= np.round(d)
            worst = max(worst, float(np.max(np.abs(d))))
    ok = worst <= 2 * TOL
    record("C6 commute", ok, f"13 cells x 4 pairs; max difference {worst:.1e} (<= {2 * TOL:g})")
    assert ok


# 7 -----------------------------------------------------------------------------------------


def test_c7_orbit_map_derivative():
    rng = np.random.default_rng(7)
    h = 1e-3
    worst = 0.0
    for kind, M in CELLS:
        cfg = random_config(M, int(rng.integers(1, 5)), rng)
        fam = build_family(cfg, M, kind)
        for k in range(fam.N):
            e = np.zeros(fam.N)
            e[k] = 1.0

            def D(s):
                d = eval_f(fam, s * e).points - eval_f(fam, -s * e).points
                if M.is_torus:
                    d -= np.round(d / np.asarray(M.periods)) * np.asarray(M.periods)
                return d / (2 * s)

            deriv = (4 * D(h / 2) - D(h)) / 3
            exact = fam.fields[k](cfg.points)
            worst = max(worst, float(np.max(np.abs(deriv - exact))))
    ok = worst <= 1e-8
    record("C7 orbit deriv", ok, f"all 13 cells, every k; max error {worst:.1e} (<= 1e-8)")
    assert ok


# 8 -----------------------------------------------------------------------------------------


def _segment_clearance(M, a, b, others):
    """Exact minimum distance from the segment a->b to a set of fixed points (nearest images on a torus)."""
    if not len(others):
        return np.inf
    d = b - a
    best = np.inf
    shifts = [np.zeros(M.dim)]
    if M.is_torus:
        P = np.asarray(M.periods)
        shifts = [np.array(s) * P for s in np.ndindex(*(3,) * M.dim)]
        shifts = [s - P for s in shifts]
    for s in shifts:
        q = others + s - a
        dd = d @ d
        u = np.clip(q @ d / dd, 0.0, 1.0) if dd > 0 else np.zeros(len(q))
        best = min(best, float(np.min(np.linalg.norm(q - u[:, None] * d, axis=1))))
    return best


def test_c8_planner_separation():
    rng = np.random.default_rng(8)
    opts = SolveOptions()
    worst_margin = np.inf
    swaps = 0
    for k in range(100):
        M = [Manifold("euclidean", 2), Manifold("euclidean", 3), Manifold("flat_torus", 2)][k % 3]
        if k % 4 == 0:
            # deliberate straight-line collisions: reverse or rotate collinear points
            n = 2 + k % 3
            base = rng.random(M.dim) * 0.3 + 0.1
            step = unit(rng.standard_normal(M.dim)) * rng.uniform(0.15, 0.25)
            pts = np.array([base + i * step for i in range(n)])
            x = Configuration(M, pts)
            y = Configuration(M, pts[::-1] if k % 8 == 0 else np.roll(pts, 1, axis=0))
            swaps += 1
        else:
            n = int(rng.integers(2, 7))
            x, y = random_config(M, n, rng), random_config(M, n, rng)
        delta = 0.5 * min(separation(x), separation(y))
        path = plan_path(x, y, M, delta, opts, seed=k)
        for a, b in zip(path, path[1:]):
            moved = np.flatnonzero(np.any(a.points != b.points, axis=1))
            assert len(moved) <= 1
            for i in moved:
                pa = a.points[i]
                pb = b.points[i]
                if M.is_torus:
                    pb = pa + (pb - pa) - np.round(pb - pa)
                others = np.delete(a.points, i, axis=0)
                worst_margin = min(worst_margin, _segment_clearance(M, pa, pb, others) / delta)
        for c in path:
            worst_margin = min(worst_margin, separation(c) / delta)
    ok = worst_margin >= 1.0
    record("C8 planner", ok, f"100 problems ({swaps} collision-forcing); min clearance / delta = {worst_margin:.3f} (>= 1)")
    assert ok
