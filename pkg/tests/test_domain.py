import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from projdyn.checks import disk_points, klein_distance, simplex_distance
from projdyn.domain import (
    DomainError,
    OrbitHull,
    Polytope,
    ShadowSpec,
    Simplex,
    boundary_classify,
    contains,
    disk,
    distance_to_segment,
    domain_from_json,
    domain_to_json,
    dual_polytope,
    face_distance,
    hilbert_distance,
    locate,
    ray_boundary,
    shadow_contains,
    simplicial_distance,
)
from projdyn.fixtures import boost, disk_schottky, rotation
from projdyn.groups import orbit

D = disk()
S = Simplex()
ARTANH_HALF = 0.5 * np.log(3)


def pt(x, y):
    return np.array([x, y, 1.0])


def random_simplex_points(rng, n):
    X = rng.uniform(0.05, 1, size=(n, 3))
    return X / X.sum(1, keepdims=True)


def test_contains_examples():
    assert contains(D, pt(0, 0))
    assert not contains(D, pt(1, 0))
    assert locate(D, pt(1, 0)) == "near_boundary"
    assert locate(D, pt(1.5, 0)) == "outside"
    assert contains(S, [0.2, 0.3, 0.5])
    assert not contains(S, [0.2, -0.3, 0.5])


def test_ray_boundary_disk_diameter():
    a, b = ray_boundary(D, pt(0, 0), pt(0.5, 0))
    assert a.close_to(pt(-1, 0)) and b.close_to(pt(1, 0))


def test_ray_boundary_simplex_hits_facets():
    a, b = ray_boundary(S, [1, 1, 1], [4, 2, 1])
    for p in (a, b):
        assert np.min(np.abs(S.barycentric(p.coords))) < 1e-12
    with pytest.raises(DomainError):
        ray_boundary(D, pt(0, 0), pt(2, 0))


def test_hilbert_distance_examples():
    assert hilbert_distance(D, pt(0, 0), pt(0.5, 0)) == pytest.approx(ARTANH_HALF, abs=1e-12)
    assert hilbert_distance(S, [1, 1, 1], [4, 2, 1]) == pytest.approx(np.log(2), abs=1e-12)
    assert hilbert_distance(D, pt(0.3, 0.2), pt(0.3, 0.2)) == 0


def test_disk_matches_klein_oracle():
    rng = np.random.default_rng(0)
    X, Y = disk_points(rng, 1000), disk_points(rng, 1000)
    assert np.abs(D.pair_distances(X, Y) - klein_distance(X, Y)).max() <= 1e-9


def test_simplex_matches_max_log_ratio():
    rng = np.random.default_rng(1)
    X, Y = random_simplex_points(rng, 1000), random_simplex_points(rng, 1000)
    assert np.abs(S.pair_distances(X, Y) - simplex_distance(X, Y)).max() <= 1e-9


@pytest.mark.parametrize("dom", [D, S], ids=["disk", "simplex"])
def test_metric_axioms(dom):
    rng = np.random.default_rng(2)
    X, Y, Z = (dom.random_interior(rng, 1000) for _ in range(3))
    dxy, dyx = dom.pair_distances(X, Y), dom.pair_distances(Y, X)
    dxz, dyz = dom.pair_distances(X, Z), dom.pair_distances(Y, Z)
    assert np.abs(dxy - dyx).max() <= 1e-9
    assert (dxz - dxy - dyz).max() <= 1e-9
    assert dxy.min() >= 0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["disk", "simplex"]))
def test_additivity_along_lines(seed, which):
    dom = D if which == "disk" else S
    rng = np.random.default_rng(seed)
    x, z = dom.random_interior(rng, 2)
    y = x + rng.uniform(0.1, 0.9) * (z - x)
    lhs = hilbert_distance(dom, x, z)
    assert lhs == pytest.approx(hilbert_distance(dom, x, y) + hilbert_distance(dom, y, z), abs=1e-9)


def test_isometry_invariance():
    rng = np.random.default_rng(3)
    g = rotation(0.4) @ boost(1.7, 0.3)
    X, Y = disk_points(rng, 500, 0.8), disk_points(rng, 500, 0.8)
    moved = D.pair_distances(D.lift(X @ g.T), D.lift(Y @ g.T))
    assert np.abs(moved - D.pair_distances(X, Y)).max() <= 1e-8
    h = np.diag([3.0, 0.5, 2.0])
    X, Y = S.random_interior(rng, 500), S.random_interior(rng, 500)
    moved = S.pair_distances(S.lift(X @ h.T), S.lift(Y @ h.T))
    assert np.abs(moved - S.pair_distances(X, Y)).max() <= 1e-8


def constant_speed(dom, x, y, times):
    """Points on the straight geodesic from x to y at Hilbert distance t * d(x, y)."""
    from projdyn.domain import point_at_distance

    d = hilbert_distance(dom, x, y)
    return np.array([point_at_distance(dom, x, y - x, t * d) for t in times])


@pytest.mark.parametrize("dom", [D, S], ids=["disk", "simplex"])
def test_distance_convex_along_geodesic_pairs(dom):
    rng = np.random.default_rng(4)
    times = np.linspace(0, 1, 11)
    worst = -np.inf
    for _ in range(50):
        a, b, c, e = dom.random_interior(rng, 4)
        P, Q = constant_speed(dom, a, b, times), constant_speed(dom, c, e, times)
        d = dom.pair_distances(P, Q)
        worst = max(worst, (d - d[0] - d[-1]).max())
    assert worst <= 1e-9


def test_simplex_constant_displacement():
    rng = np.random.default_rng(5)
    lam = np.array([5.0, 1.3, 0.7])
    X = S.random_interior(rng, 500)
    d = S.pair_distances(X, S.lift(X * lam))
    assert np.abs(d - 0.5 * np.log(lam.max() / lam.min())).max() <= 1e-10


def test_distance_to_segment_examples():
    a, b = pt(-1, 0), pt(1, 0)
    assert distance_to_segment(D, a, b, pt(0.3, 0)) == pytest.approx(0, abs=1e-8)
    assert distance_to_segment(D, a, b, pt(0, 0.5)) == pytest.approx(ARTANH_HALF, abs=1e-9)
    rng = np.random.default_rng(6)
    y = pt(0.2, 0.4)
    m = distance_to_segment(D, pt(-0.5, -0.5), pt(0.6, -0.1), y)
    for s in rng.uniform(size=20):
        p = (1 - s) * pt(-0.5, -0.5) + s * pt(0.6, -0.1)
        assert m <= hilbert_distance(D, p, y) + 1e-10


def test_shadow_contains_examples():
    x, y = pt(0.1, -0.2), pt(0.4, 0.3)
    a, xi = ray_boundary(D, x, y)
    for r in (1e-3, 0.1, 1.0):
        assert shadow_contains(D, ShadowSpec(x, y, r), xi.coords)
    assert not shadow_contains(D, ShadowSpec(pt(0, 0), pt(0.9, 0), 0.5), pt(-1, 0))
    with pytest.raises(ValueError):
        ShadowSpec(x, y, 0.0)


def test_shadow_variants_nest():
    x, y = pt(0, 0), pt(0.5, 0.1)
    for theta in np.linspace(-0.6, 0.8, 8):
        xi = pt(np.cos(theta), np.sin(theta))
        plus = shadow_contains(D, ShadowSpec(x, y, 0.4, "plus"), xi)
        plain = shadow_contains(D, ShadowSpec(x, y, 0.4), xi)
        minus = shadow_contains(D, ShadowSpec(x, y, 0.4, "minus"), xi)
        assert plus >= plain >= minus


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 2 * np.pi), st.floats(0.05, 2.0), st.floats(0.0, 2.0))
def test_shadow_monotone_in_radius(theta, r, extra):
    x, y = pt(-0.2, 0.1), pt(0.5, 0.3)
    xi = pt(np.cos(theta), np.sin(theta))
    if shadow_contains(D, ShadowSpec(x, y, r), xi):
        assert shadow_contains(D, ShadowSpec(x, y, r + extra), xi)


def test_simplicial_distance():
    v = np.eye(3)
    assert simplicial_distance(S, v[0], v[1]) == 1
    assert simplicial_distance(S, (v[0] + v[1]) / 2, (v[1] + v[2]) / 2) == 2
    assert simplicial_distance(D, pt(1, 0), pt(0, 1)) == float("inf")
    assert simplicial_distance(D, pt(1, 0), pt(1, 0)) == 0


def test_boundary_classify():
    f = boundary_classify(D, pt(0.6, 0.8))
    assert f.smooth and f.extremal and f.strongly_extremal
    v = boundary_classify(S, [1, 0, 0])
    assert v.extremal and not v.smooth
    e = boundary_classify(S, [0.5, 0.5, 0])
    assert e.smooth and not e.extremal


def test_face_distance_on_an_edge():
    # the open edge is a segment with endpoints e1, e2; parameters 1/3 and 2/3
    d = face_distance(S, [2, 1, 0], [1, 2, 0])
    assert d == pytest.approx(np.log(2), abs=1e-12)
    assert face_distance(S, [1, 1, 0], [0, 1, 1]) == float("inf")


def square():
    return Polytope([[1, 1, 1], [-1, 1, 1], [-1, -1, 1], [1, -1, 1]], interior=[0, 0, 1])


def same_vertex_sets(A, B, dom):
    A, B = dom.lift(A), dom.lift(B)
    return len(A) == len(B) and all(np.min(np.linalg.norm(B - a, axis=1)) < 1e-8 for a in A)


def test_dual_of_simplex_and_square():
    assert len(dual_polytope(S).vertices) == 3
    d = dual_polytope(square())
    assert len(d.vertices) == 4
    # facet normals of the square are the axis directions, so the dual is rotated
    A = d.affine(d.vertices)
    ang = np.sort(np.mod(np.degrees(np.arctan2(A[:, 1] - A[:, 1].mean(), A[:, 0] - A[:, 0].mean())), 90))
    assert np.ptp(ang) < 1e-6


def test_double_dual_random_heptagon():
    rng = np.random.default_rng(7)
    theta = np.sort(rng.uniform(0, 2 * np.pi, 7))
    while np.diff(np.append(theta, theta[0] + 2 * np.pi)).max() > 2.5:
        theta = np.sort(rng.uniform(0, 2 * np.pi, 7))
    P = Polytope(np.column_stack([np.cos(theta), np.sin(theta), np.ones(7)]), interior=[0, 0, 1])
    PP = dual_polytope(dual_polytope(P))
    assert same_vertex_sets(PP.vertices, P.vertices, P)
    with pytest.raises(DomainError):
        Polytope(np.eye(3)[:2], chart=[0, 0, 1])


def test_orbit_hull_nested():
    fx = disk_schottky(2.0)
    o = fx.basepoint
    u = np.array([0.3, 0.7, 0.0])
    hits = []
    for L in (2, 3, 4):
        ball = orbit(fx.presentation, fx.domain, o, L)
        H = OrbitHull(ball.points, chart=fx.domain.chart, depth=L)
        _, hi = H.line_intervals(o, u)
        hits.append(hi[0])
        assert np.all(H.inside(ball.points.mean(axis=0)))
    assert hits[0] <= hits[1] + 1e-9 <= hits[2] + 2e-9
    assert hits[-1] * np.linalg.norm(u) < 1.0
    assert simplicial_distance(H, u, u) is None


def test_json_round_trip():
    for dom in (D, S, square()):
        back = domain_from_json(json.loads(json.dumps(domain_to_json(dom))))
        rng = np.random.default_rng(8)
        X, Y = dom.random_interior(rng, 20), dom.random_interior(rng, 20)
        assert np.allclose(back.pair_distances(X, Y), dom.pair_distances(X, Y), atol=1e-10)
    with pytest.raises(DomainError, match="unknown domain type"):
        domain_from_json({"type": "sphere"})
