"""Command-line front end: solve scenarios, verify programs, export deformation grids, run demos.

Files are JSON with a top-level ``"version": 1``; grids are CSV.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .fields import CLASSES, StructureMismatch, check_compatible
from .flow import FORMAT_VERSION, DiffeoProgram, IntegrationError, apply
from .geometry import Configuration, GeometryError, Manifold
from .solve import PreconditionError, SolveError, SolveOptions, solve
from .verify import check_structure, point_match, roundtrip_check, sample_points

log = logging.getLogger("flowmatch")

EXIT_OK, EXIT_INVALID, EXIT_SOLVER, EXIT_CHECK = 0, 1, 2, 3
SEED_ENV = "FLOWMATCH_SEED"
RESIDUAL_TOL = 1e-6
ROUNDTRIP_TOL = 1e-7


class ScenarioError(ValueError):
    """Malformed or inconsistent scenario file."""


# -- files ---------------------------------------------------------------------------------------


def atomic_write(path: str, text: str) -> None:
    """Write to a temporary sibling, then rename over the target."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: str, obj: dict) -> None:
    atomic_write(path, json.dumps(obj, indent=1) + "\n")


@dataclass
class Scenario:
    manifold: Manifold
    source: Configuration
    target: Configuration
    kind: str
    options: SolveOptions = field(default_factory=SolveOptions)
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        if not isinstance(d, dict):
            raise ScenarioError("scenario must be a JSON object")
        if d.get("version", FORMAT_VERSION) != FORMAT_VERSION:
            raise ScenarioError(f"unsupported scenario version {d.get('version')!r}")
        try:
            M = Manifold.from_dict(d["manifold"])
            kind = d.get("class", "general")
            if kind not in CLASSES:
                raise ScenarioError(f"unknown class {kind!r}")
            check_compatible(M, kind)
            src = np.asarray(d["source"], dtype=float)
            tgt = np.asarray(d["target"], dtype=float)
            if src.shape != tgt.shape:
                raise ScenarioError(f"source {src.shape} and target {tgt.shape} differ in shape")
            try:
                source = Configuration(M, src)
            except GeometryError as exc:
                raise ScenarioError(f"source: {exc}") from None
            try:
                target = Configuration(M, tgt)
            except GeometryError as exc:
                raise ScenarioError(f"target: {exc}") from None
            opts = SolveOptions.from_dict(d.get("options", {}))
            seed = int(d.get("seed", 0))
        except ScenarioError:
            raise
        except KeyError as exc:
            raise ScenarioError(f"missing key {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            raise ScenarioError(str(exc)) from None
        return cls(M, source, target, kind, opts, seed)

    def to_dict(self) -> dict:
        return {"version": FORMAT_VERSION, "manifold": self.manifold.to_dict(), "class": self.kind,
                "source": self.source.points.tolist(), "target": self.target.points.tolist(),
                "options": self.options.to_dict(), "seed": self.seed}


def load_scenario(path: str) -> Scenario:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioError(f"cannot read {path}: {exc}") from None
    return Scenario.from_dict(data)


def load_program(path: str) -> DiffeoProgram:
    with open(path) as fh:
        return DiffeoProgram.loads(fh.read())


def effective_seed(seed: int) -> int:
    env = os.environ.get(SEED_ENV)
    if env is None or env.strip() == "":
        return seed
    return int(env)


# -- built-in scenarios --------------------------------------------------------------------------


def _demo(manifold: dict, kind: str, source, target, **options) -> dict:
    return {"version": FORMAT_VERSION, "manifold": manifold, "class": kind,
            "source": source, "target": target, "options": options, "seed": 0}


DEMOS = {
    # two points exchange places with an area-preserving map
    "swap2d": _demo({"kind": "euclidean", "dim": 2, "structure": "volume"}, "divergence_free",
                    [[0.0, 0.0], [1.0, 0.0]], [[1.0, 0.0], [0.0, 0.0]]),
    # cyclic permutation of three collinear points by a symplectomorphism
    "braid3": _demo({"kind": "euclidean", "dim": 2, "structure": "symplectic"}, "hamiltonian",
                    [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], [[2.0, 0.0], [0.0, 0.0], [1.0, 0.0]]),
    "torus-swap": _demo({"kind": "flat_torus", "dim": 2, "structure": "symplectic", "periods": [1.0, 1.0]},
                        "hamiltonian", [[0.25, 0.5], [0.75, 0.5]], [[0.75, 0.5], [0.25, 0.5]]),
    # a contactomorphism rearranging three points of R^3
    "contact3d": _demo({"kind": "euclidean", "dim": 3, "structure": "contact"}, "contact",
                       [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
                       [[0.3, 0.2, 0.1], [1.2, -0.3, 0.1], [-0.2, 1.2, -0.1]]),
}


# -- commands --------------------------------------------------------------------------------------


def _structure_and_roundtrip(prog: DiffeoProgram, samples: int, tol: float | None, seed: int, anchors=None):
    pts, composition = sample_points(prog, samples, seed, anchors=anchors)
    srep = check_structure(prog, samples=pts, tol=tol)
    srep.composition = composition
    rrep = roundtrip_check(prog, samples=pts, tol=ROUNDTRIP_TOL)
    return srep, rrep


def run_scenario(sc: Scenario, samples: int = 200):
    """Solve and certify; returns (program, report dict, exit code)."""
    seed = effective_seed(sc.seed)
    try:
        prog, rep = solve(sc.source, sc.target, sc.manifold, sc.kind, sc.options, seed=seed)
    except (SolveError, IntegrationError, PreconditionError) as exc:
        log.error("solver failure: %s", exc)
        return None, {"version": FORMAT_VERSION, "error": str(exc)}, EXIT_SOLVER
    prog.meta.update({"class": sc.kind, "source": sc.source.points.tolist(),
                      "target": sc.target.points.tolist(), "seed": seed})
    srep, rrep = _structure_and_roundtrip(prog, samples, None, seed, anchors=sc.source.points)
    rep.structure = srep.to_dict()
    ok = rep.residual <= RESIDUAL_TOL and srep.pass_
    report = {"version": FORMAT_VERSION, "class": sc.kind, "seed": seed, "solve": rep.to_dict(),
              "roundtrip": rrep.to_dict(), "residual_tol": RESIDUAL_TOL, "pass": ok}
    return prog, report, EXIT_OK if ok else EXIT_CHECK


def _summary(report: dict) -> str:
    s = report["solve"]
    st = s["structure"]
    line = (f"residual={s['residual']:.3e} stages={s['total_stages']} steps={s['n_steps']} "
            f"structure[{st['kind']}]={st['max_defect']:.3e} roundtrip={report['roundtrip']['max_error']:.3e}")
    if st.get("lambda_min") is not None:
        line += f" lambda=[{st['lambda_min']:.3f}, {st['lambda_max']:.3f}]"
    return line + (" PASS" if report["pass"] else " FAIL")


def cmd_solve(args) -> int:
    try:
        sc = load_scenario(args.scenario)
    except ScenarioError as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_INVALID
    prog, report, code = run_scenario(sc, args.samples)
    if prog is not None:
        write_json(args.out, prog.to_dict())
    if args.report:
        write_json(args.report, report)
    if prog is not None:
        print(_summary(report))
    return code


def cmd_verify(args) -> int:
    try:
        prog = load_program(args.program)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"cannot parse program: {exc}", file=sys.stderr)
        return EXIT_INVALID
    seed = effective_seed(int(prog.meta.get("seed", 0)))
    src = prog.meta.get("source")
    tgt = prog.meta.get("target")
    anchors = np.asarray(src, dtype=float) if src else None
    try:
        srep, rrep = _structure_and_roundtrip(prog, args.samples, args.tol, seed, anchors=anchors)
        out = {"version": FORMAT_VERSION, "stages": len(prog), "structure": srep.to_dict(),
               "roundtrip": rrep.to_dict()}
        ok = srep.pass_ and rrep.pass_
        if src is not None and tgt is not None:
            res = point_match(prog, src, tgt)
            out["point_match"] = {"residual": res, "tol": RESIDUAL_TOL, "pass": res <= RESIDUAL_TOL}
            ok = ok and res <= RESIDUAL_TOL
    except (IntegrationError, StructureMismatch, GeometryError, ValueError) as exc:
        print(f"verification error: {exc}", file=sys.stderr)
        return EXIT_CHECK
    out["pass"] = ok
    print(json.dumps(out, indent=1))
    return EXIT_OK if ok else EXIT_CHECK


def parse_bbox(text: str, m: int) -> tuple[np.ndarray, np.ndarray]:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise ValueError(f"bbox must be comma-separated numbers, got {text!r}") from None
    if len(vals) != 2 * m:
        raise ValueError(f"bbox needs {2 * m} numbers for dimension {m}, got {len(vals)}")
    lo, hi = np.array(vals[:m]), np.array(vals[m:])
    if not np.all(np.isfinite(vals)) or np.any(hi <= lo):
        raise ValueError("bbox upper corner must exceed the lower corner in every coordinate")
    return lo, hi


def grid_rows(prog: DiffeoProgram, lo, hi, resolution: int) -> tuple[np.ndarray, np.ndarray]:
    """Grid vertices in lexicographic index order, and their images."""
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    axes = [np.linspace(a, b, resolution) for a, b in zip(lo, hi)]
    verts = np.array(list(itertools.product(*axes)), dtype=float)
    return verts, apply(prog, verts)


def grid_csv(verts: np.ndarray, imgs: np.ndarray) -> str:
    m = verts.shape[1]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{i}" for i in range(m)] + [f"y{i}" for i in range(m)])
    for v, y in zip(verts, imgs):
        w.writerow([repr(float(a)) for a in v] + [repr(float(b)) for b in y])
    return buf.getvalue()


def cmd_grid(args) -> int:
    try:
        prog = load_program(args.program)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"cannot parse program: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        lo, hi = parse_bbox(args.bbox, prog.manifold.dim)
        verts, imgs = grid_rows(prog, lo, hi, args.resolution)
    except ValueError as exc:
        print(f"invalid grid: {exc}", file=sys.stderr)
        return EXIT_INVALID
    atomic_write(args.out, grid_csv(verts, imgs))
    print(f"wrote {len(verts)} rows to {args.out}")
    return EXIT_OK


def cmd_demo(args) -> int:
    if args.name not in DEMOS:
        print(f"unknown demo {args.name!r}; choose from {', '.join(DEMOS)}", file=sys.stderr)
        return EXIT_INVALID
    sc = Scenario.from_dict(DEMOS[args.name])
    prog, report, code = run_scenario(sc, args.samples)
    if prog is not None and args.out:
        write_json(args.out, prog.to_dict())
    if args.report:
        write_json(args.report, report)
    if prog is not None:
        print(f"{args.name}: {_summary(report)}")
    return code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flowmatch", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve a scenario file")
    s.add_argument("scenario")
    s.add_argument("-o", "--out", required=True, help="program file to write")
    s.add_argument("-r", "--report", help="report file to write")
    s.add_argument("--samples", type=int, default=200, help="structure-check samples")
    s.set_defaults(func=cmd_solve)

    v = sub.add_parser("verify", help="certify a program file")
    v.add_argument("program")
    v.add_argument("--samples", type=int, default=200)
    v.add_argument("--tol", type=float, default=None, help="structure defect tolerance")
    v.set_defaults(func=cmd_verify)

    g = sub.add_parser("grid", help="export a deformation grid as CSV")
    g.add_argument("program")
    g.add_argument("--bbox", required=True, help="lower then upper corner: x0,y0,x1,y1[,...]")
    g.add_argument("--resolution", type=int, required=True)
    g.add_argument("-o", "--out", required=True)
    g.set_defaults(func=cmd_grid)

    d = sub.add_parser("demo", help="run a built-in scenario")
    d.add_argument("name", choices=sorted(DEMOS))
    d.add_argument("-o", "--out", help="program file to write")
    d.add_argument("-r", "--report", help="report file to write")
    d.add_argument("--samples", type=int, default=200)
    d.set_defaults(func=cmd_demo)
    return p


def _glue_bbox(argv: list[str]) -> list[str]:
    # "--bbox -1,0,1,2" would otherwise be read as an unknown option
    out = []
    it = iter(argv)
    for a in it:
        if a == "--bbox":
            nxt = next(it, None)
            out.append(a if nxt is None else f"--bbox={nxt}")
        else:
            out.append(a)
    return out


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(_glue_bbox(list(sys.argv[1:] if argv is None else argv)))
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
