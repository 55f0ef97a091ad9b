import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from projdyn.fixtures import boost, rotation
from projdyn.projective import (
    ProjectiveError,
    ProjectiveMap,
    ProjectivePoint,
    apply,
    canonical_matrix,
    classify_map,
    collinear_param,
    cross_ratio,
    translation_length,
)


def line_point(t):
    """Affine coordinate t on the line through e1 (t = 0) and e2 (t = inf)."""
    if np.isinf(t):
        return np.array([0.0, 1.0, 0.0])
    return np.array([1.0, t, 0.0])


def test_point_canonical_form():
    p = ProjectivePoint([0.0, -3.0, 4.0])
    assert np.allclose(p.coords, [0, 0.6, -0.8])
    assert p.close_to([0, -6, 8])
    with pytest.raises(ProjectiveError, match="zero"):
        ProjectivePoint([0.0, 0.0, 0.0])


def test_matrix_canonical_det():
    m = canonical_matrix(np.diag([8.0, 2, 1]))
    assert abs(abs(np.linalg.det(m)) - 1) < 1e-12
    with pytest.raises(ProjectiveError, match="singular"):
        canonical_matrix(np.zeros((3, 3)))


def test_cross_ratio_normalisation():
    t = 2.7
    assert cross_ratio(*(line_point(v) for v in (0, 1, t, np.inf))) == pytest.approx(t, rel=1e-12)


def test_cross_ratio_identity_case():
    pts = [line_point(v) for v in (-1, 0.3, 0.3, 1)]
    assert cross_ratio(*pts) == pytest.approx(1.0, abs=1e-12)


def test_cross_ratio_hand_value():
    pts = [line_point(v) for v in (-1, 0, 0.5, 1)]
    assert cross_ratio(*pts) == pytest.approx(3.0, rel=1e-12)


def test_cross_ratio_errors():
    with pytest.raises(ProjectiveError, match="not collinear"):
        cross_ratio([1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1])
    with pytest.raises(ProjectiveError, match="degenerate"):
        cross_ratio(line_point(0), line_point(1), line_point(2), line_point(0))


def random_collinear(rng, n=4):
    """n ordered points on a random line, one per equal slot of the parameter range."""
    a, b = rng.normal(size=(2, 3))
    ts = (np.arange(n) + rng.uniform(0.1, 0.9, size=n)) / n
    return [(1 - t) * a + t * b for t in ts]


def test_cross_ratio_projective_invariance():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(1000):
        pts = random_collinear(rng)
        g = rng.normal(size=(3, 3)) + 3 * np.eye(3)
        moved = [g @ p for p in pts]
        worst = max(worst, abs(cross_ratio(*moved) - cross_ratio(*pts)))
    assert worst <= 1e-9


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_cross_ratio_cocycle(seed):
    rng = np.random.default_rng(seed)
    a, x, y, z, b = random_collinear(rng, 5)
    lhs = cross_ratio(a, x, y, b) * cross_ratio(a, y, z, b)
    assert lhs == pytest.approx(cross_ratio(a, x, z, b), rel=1e-8)


def test_classify_diagonal():
    sp = classify_map(np.diag([4.0, 2, 1]))
    assert sp.ell == pytest.approx(np.log(2), abs=1e-12)
    assert sp.proximal and sp.biproximal
    assert sp.x_plus.close_to([1, 0, 0])
    assert sp.x_minus.close_to([0, 0, 1])
    assert sp.kappa == pytest.approx(sp.ell, abs=1e-12)


def test_classify_proximal_not_biproximal():
    sp = classify_map(np.diag([2.0, 1, 1]))
    assert sp.proximal and not sp.biproximal
    assert sp.x_minus is None


def test_classify_rotation():
    sp = classify_map(rotation(0.7))
    assert not sp.proximal
    assert sp.ell == pytest.approx(0, abs=1e-12)


def test_classify_boost():
    assert classify_map(boost(1.3)).ell == pytest.approx(1.3, abs=1e-12)


def test_translation_length_basics():
    assert translation_length(np.eye(3)) == 0
    assert translation_length(np.diag([4.0, 2, 1])) == pytest.approx(np.log(2), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_translation_length_conjugation(seed):
    rng = np.random.default_rng(seed)
    g = boost(rng.uniform(0.1, 3), rng.uniform(0, np.pi))
    h = rng.normal(size=(3, 3)) + 2 * np.eye(3)
    if abs(np.linalg.det(h)) < 0.1:
        h = h + 2 * np.eye(3)
    conj = h @ g @ np.linalg.inv(h)
    assert translation_length(conj) == pytest.approx(translation_length(g), abs=1e-7)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.1, 3.0), min_size=3, max_size=3), st.integers(1, 5))
def test_translation_length_powers(logs, n):
    g = np.diag(np.exp(logs))
    assert translation_length(np.linalg.matrix_power(g, n)) == pytest.approx(n * translation_length(g), rel=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_kappa_dominates_ell(seed):
    rng = np.random.default_rng(seed)
    g = rng.normal(size=(3, 3))
    if abs(np.linalg.det(g)) < 1e-3:
        return
    sp = classify_map(g)
    assert sp.kappa >= sp.ell - 1e-9


def test_collinear_param():
    a, b = np.array([1.0, 0, 1]), np.array([0.0, 1, 1])
    assert collinear_param(a, b, a) == pytest.approx(0, abs=1e-12)
    assert collinear_param(a, b, b) == pytest.approx(1, abs=1e-12)
    assert collinear_param(a, b, (a + b) / 2) == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(ProjectiveError):
        collinear_param(a, b, [0.0, 0, 1])


def test_apply_examples():
    g = np.diag([4.0, 2, 1])
    p = ProjectivePoint([0.3, -1, 2])
    assert apply(np.eye(3), p).close_to(p)
    assert apply(g, [0, 1, 0]).close_to([0, 1, 0])
    assert apply(g, [1, 1, 1]).close_to([4, 2, 1])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_apply_composition_and_inverse(seed):
    rng = np.random.default_rng(seed)
    g, h = (ProjectiveMap(rng.normal(size=(3, 3)) + 3 * np.eye(3)) for _ in range(2))
    p = ProjectivePoint(rng.normal(size=3))
    assert apply(g @ h, p).close_to(apply(g, apply(h, p)), tol=1e-8)
    assert apply(g, apply(g.inverse(), p)).close_to(p, tol=1e-8)
