import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from flowmatch.geometry import (UNBOUNDED, Configuration, GeometryError, Manifold, canonicalize,
                                distance, frame, pairwise_distances, separation, wrap_difference)

R2 = Manifold("euclidean", 2)
T2 = Manifold("flat_torus", 2)

coord = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def test_canonicalize_examples():
    assert_array_equal(canonicalize(R2, [1.5, -2.0]), [1.5, -2.0])
    assert_allclose(canonicalize(T2, [1.25, -0.25]), [0.25, 0.75])
    T23 = Manifold("flat_torus", 2, periods=(2, 3))
    assert_array_equal(canonicalize(T23, [2.0, 3.0]), [0.0, 0.0])


def test_canonicalize_tiny_negative_stays_below_period():
    p = canonicalize(T2, [-1e-18, 0.5])
    assert 0.0 <= p[0] < 1.0


@given(st.lists(coord, min_size=2, max_size=2))
def test_canonicalize_is_idempotent_and_in_range(p):
    q = canonicalize(T2, p)
    assert np.all((q >= 0) & (q < 1))
    assert_array_equal(canonicalize(T2, q), q)


def test_distance_examples():
    assert distance(R2, [0, 0], [3, 4]) == 5.0
    assert distance(T2, [0.1, 0], [0.9, 0]) == pytest.approx(0.2)
    for M in (R2, T2):
        assert distance(M, [0.3, 0.7], [0.3, 0.7]) == 0.0


@settings(max_examples=60)
@given(st.lists(coord, min_size=6, max_size=6), st.sampled_from([R2, T2]))
def test_distance_is_a_metric(c, M):
    p, q, r = np.reshape(c, (3, 2))
    assert distance(M, p, q) == pytest.approx(distance(M, q, p))
    assert distance(M, p, r) <= distance(M, p, q) + distance(M, q, r) + 1e-9


def test_torus_distance_bounded_by_half_diagonal(rng):
    P = rng.random((200, 2)) * 10 - 5
    D = pairwise_distances(T2, P)
    assert D.max() <= math.sqrt(0.5) + 1e-12


def test_wrap_difference_shortest_representative():
    assert_allclose(wrap_difference(T2, [0.9, -0.7]), [-0.1, 0.3])
    assert_array_equal(wrap_difference(R2, [0.9, -0.7]), [0.9, -0.7])


def test_separation_examples():
    c = Configuration(R2, [[0, 0], [1, 0], [0, 2]])
    assert separation(c) == 1.0
    assert separation(Configuration(R2, [[0.3, 0.2]])) is UNBOUNDED
    t = Configuration(T2, [[0.05, 0], [0.95, 0]])
    assert t.separation() == pytest.approx(0.1)


def test_frame_is_standard_basis():
    assert_array_equal(frame(R2, [4.0, 1.0]), np.eye(2))
    assert_array_equal(frame(Manifold("flat_torus", 3), [0.1, 0.2, 0.3]), np.eye(3))
    S4 = Manifold("euclidean", 4, "symplectic")
    F = frame(S4, np.zeros(4))
    assert_allclose(F @ F.T, np.eye(4), atol=0)


def test_configuration_rejects_coincident_points_naming_indices():
    with pytest.raises(GeometryError, match=r"\(0, 2\)"):
        Configuration(R2, [[0, 0], [1, 0], [0, 0]])
    # coincident after wrapping
    with pytest.raises(GeometryError, match="coincident"):
        Configuration(T2, [[0.25, 0.5], [1.25, -0.5]])


def test_configuration_is_canonical_and_read_only():
    c = Configuration(T2, [[1.5, 0.25], [0.1, 0.1]])
    assert_allclose(c[0], [0.5, 0.25])
    with pytest.raises(ValueError):
        c.points[0, 0] = 3.0


@pytest.mark.parametrize("kwargs", [
    dict(kind="sphere", dim=2),
    dict(dim=1),
    dict(dim=2.5),
    dict(dim=3, structure="symplectic"),
    dict(dim=4, structure="contact"),
    dict(kind="flat_torus", dim=3, structure="contact"),
    dict(kind="flat_torus", dim=2, periods=(1.0,)),
    dict(kind="flat_torus", dim=2, periods=(1.0, -1.0)),
    dict(dim=2, periods=(1.0, 1.0)),
    dict(dim=2, structure="riemannian"),
])
def test_invalid_manifolds(kwargs):
    with pytest.raises(GeometryError):
        Manifold(**kwargs)


def test_invalid_coordinates():
    with pytest.raises(GeometryError):
        canonicalize(R2, [1.0, 2.0, 3.0])
    with pytest.raises(GeometryError):
        canonicalize(R2, [np.nan, 0.0])


def test_manifold_dict_roundtrip():
    for M in (R2, T2, Manifold("flat_torus", 3, periods=(1, 2, 3)), Manifold("euclidean", 5, "contact")):
        assert Manifold.from_dict(M.to_dict()) == M
    with pytest.raises(GeometryError):
        Manifold.from_dict({"kind": "euclidean"})
