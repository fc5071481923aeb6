import numpy as np

from flowmatch.geometry import Configuration, Manifold


def random_config(M: Manifold, n: int, rng: np.random.Generator, min_sep: float = 0.15, box: float = 1.0):
    """n points uniform in [0, box]^m (or the torus) with separation at least min_sep."""
    scale = np.asarray(M.periods) if M.is_torus else box
    while True:
        cfg = Configuration(M, rng.random((n, M.dim)) * scale)
        if n == 1 or cfg.separation() >= min_sep:
            return cfg


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE: list[str] = []


def record(tag: str, ok: bool, detail: str) -> None:
    ACCEPTANCE.append(f"{tag:<14} {'PASS' if ok else 'FAIL'}  {detail}")
