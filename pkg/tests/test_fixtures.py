import json

import numpy as np
import pytest

from projdyn.domain import Ellipsoid, Simplex
from projdyn.fixtures import (
    FixtureError,
    builtin,
    fixture_from_json,
    fixture_to_json,
    load_fixture,
    triangle_reflection,
)
from projdyn.groups import orbit
from projdyn.projective import translation_length


@pytest.mark.parametrize("name", ["disk-schottky", "disk-schottky:s=2.0,gap=0.3", "cyclic:boost=1.5",
                                  "triangle-reflection:2,3,7", "simplex-lattice"])
def test_builtin_gallery(name):
    fx = builtin(name)
    X = fx.domain.random_interior(np.random.default_rng(0), 100)
    for g in fx.presentation.generators:
        assert np.all(fx.domain.inside(X @ g.T))
    assert fx.domain.inside(fx.basepoint)


def test_schottky_lengths():
    fx = builtin("disk-schottky:s=2.0,gap=0.3")
    ells = sorted(translation_length(g) for g in fx.presentation.generators)
    assert ells == pytest.approx([2.0, 2.0, 2.3, 2.3], abs=1e-12)
    with pytest.raises(FixtureError, match="ping-pong"):
        builtin("disk-schottky:s=1.0")


def test_triangle_group_relations():
    p, q, r = 2, 3, 7
    fx = triangle_reflection(p, q, r)
    gens = fx.presentation.generators
    assert len(gens) == 3

    def is_identity(m):
        # projective maps, so the sign of the matrix is free
        return np.allclose(m, np.eye(3), atol=1e-8) or np.allclose(m, -np.eye(3), atol=1e-8)

    for g in gens:
        assert is_identity(g @ g)
    # the products of pairs of reflections are rotations of order p, q, r
    orders = sorted(
        next(n for n in range(1, 20) if is_identity(np.linalg.matrix_power(gens[i] @ gens[j], n)))
        for i, j in ((0, 1), (1, 2), (0, 2))
    )
    assert orders == sorted([p, q, r])
    assert fx.cocompact
    with pytest.raises(FixtureError, match="hyperbolic"):
        triangle_reflection(3, 3, 3)


def test_triangle_basepoint_is_incentre():
    fx = builtin("triangle-reflection:4,4,4")
    ball = orbit(fx.presentation, fx.domain, fx.basepoint, 1)
    assert np.ptp(ball.dist[1:]) < 1e-10


def test_json_round_trip(tmp_path):
    for name in ("disk-schottky", "simplex-lattice"):
        fx = builtin(name)
        path = tmp_path / "fx.json"
        path.write_text(json.dumps(fixture_to_json(fx)))
        back = load_fixture(str(path))
        assert type(back.domain) is type(fx.domain)
        assert len(back.presentation.generators) == len(fx.presentation.generators)
        for a, b in zip(back.presentation.generators, fx.presentation.generators):
            assert np.allclose(a, b)


def test_json_defaults_to_disk():
    fx = fixture_from_json({"generators": [{"label": "a", "matrix": builtin("cyclic").presentation.generators[0].tolist()}],
                            "free": True})
    assert isinstance(fx.domain, Ellipsoid)
    assert fx.presentation.free


def test_json_syntax_error_reports_position(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"generators": [\n  {"matrix": [[1, 0], [0, 1]],}\n]}')
    with pytest.raises(FixtureError, match=r"line 2 column \d+"):
        load_fixture(str(path))


@pytest.mark.parametrize("data, message", [
    ({}, "generators"),
    ({"generators": [{"label": "a"}]}, r"generators\[0\]: missing field 'matrix'"),
    ({"generators": [{"matrix": [[1, 2], [2, 4]]}]}, r"generators\[0\].matrix: singular"),
    ({"generators": [{"matrix": [[1, 2, 3]]}]}, "not square"),
    ({"generators": [{"matrix": [["x", 0], [0, 1]]}]}, "not a numeric matrix"),
    ({"generators": [{"matrix": np.eye(3).tolist()}], "free": "yes"}, "free"),
    ({"generators": [{"matrix": np.diag([2.0, 1, 1]).tolist()}]}, "not an automorphism"),
    ({"generators": [{"matrix": np.eye(3).tolist()}], "domain": {"type": "sphere"}}, "domain"),
    ({"generators": [{"matrix": np.eye(3).tolist()}], "basepoint": [2, 0, 1]}, "basepoint"),
])
def test_json_validation(data, message):
    with pytest.raises(FixtureError, match=message):
        fixture_from_json(data)


def test_unknown_builtin():
    with pytest.raises(FixtureError, match="unknown"):
        builtin("torus")
    with pytest.raises(FixtureError, match="parameter"):
        builtin("disk-schottky:s")


def test_simplex_lattice_is_diagonal():
    fx = builtin("simplex-lattice")
    assert isinstance(fx.domain, Simplex)
    for g in fx.presentation.generators:
        assert np.allclose(g, np.diag(np.diag(g)))
