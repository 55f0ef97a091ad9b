from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from projdyn.checks import disk_boundary, disk_points
from projdyn.density import (
    AtomicDensity,
    DensityError,
    Reducer,
    bm_mean,
    bm_sampler,
    build_density,
    cell_radius,
    constant,
    default_radius,
    entropy_estimate,
    equidistribution_report,
    equidistribution_trend,
    equivariance_defect,
    foot_halfplane,
    geodesic_average,
    liouville_pool,
    mixing_correlation,
    neighbour_ball,
    reweight,
    separated_count,
    shadow_lemma_report,
    shadow_masses,
    smooth_ball,
)
from projdyn.fixtures import builtin, disk_schottky
from projdyn.flow import gromov_batch
from projdyn.groups import BIPROXIMAL, RANK_ONE, conjugacy_classes, dirichlet_polygon, orbit

DELTA = 0.77  # critical exponent estimate of the s = 2 Schottky fixture


@pytest.fixture(scope="module")
def setup():
    fx = disk_schottky(2.0)
    ball = orbit(fx.presentation, fx.domain, fx.basepoint, 6)
    nu = build_density(ball, delta_hat=DELTA)
    nb = neighbour_ball(fx.presentation, fx.domain, fx.basepoint)
    return fx, ball, nu, nb


@pytest.fixture(scope="module")
def samples(setup):
    fx, ball, nu, nb = setup
    return bm_sampler(nu, DELTA, 4000, np.random.default_rng(0), cell=dirichlet_polygon(nb))


def test_build_density_normalised(setup):
    fx, ball, nu, _ = setup
    assert nu.total_mass == pytest.approx(1.0, abs=1e-12)
    assert nu.s == pytest.approx(DELTA + 1 / 6)
    assert len(nu.weights) == len(ball) - 1
    with pytest.raises(DensityError, match="need s"):
        build_density(ball)


def test_single_atom_and_empty_ball(setup):
    fx, ball, _, _ = setup
    keep = np.arange(2)
    one = replace(ball, words=ball.words[:2], matrices=ball.matrices[keep], inverses=ball.inverses[keep],
                  points=ball.points[keep], dist=ball.dist[keep], directions=ball.directions[keep])
    nu = build_density(one, s=1.0)
    assert np.array_equal(nu.weights, [1.0])
    none = replace(one, words=one.words[:1], dist=one.dist[:1], directions=one.directions[:1])
    with pytest.raises(DensityError, match="empty ball"):
        build_density(none, s=1.0)


def test_large_exponent_concentrates_on_nearest(setup):
    _, ball, _, _ = setup
    nu = build_density(ball, s=60.0)
    nearest = ball.dist[nu.carriers] <= ball.dist[1:].min() + 1e-9
    assert nu.weights[nearest].sum() == pytest.approx(1.0, abs=1e-12)


def test_reweight_identity(setup):
    _, _, nu, _ = setup
    same = reweight(nu, nu.basepoint)
    assert np.allclose(same.weights, nu.weights, rtol=1e-12)
    assert same.flagged == 0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_reweight_round_trips(seed):
    fx = disk_schottky(2.0)
    ball = orbit(fx.presentation, fx.domain, fx.basepoint, 3)
    nu = build_density(ball, s=0.9)
    x, y = disk_points(np.random.default_rng(seed), 2, 0.8)
    back = reweight(reweight(nu, x), nu.basepoint)
    assert np.allclose(back.weights, nu.weights, rtol=1e-6, atol=0)
    loop = reweight(reweight(reweight(nu, x), y), nu.basepoint)
    assert np.allclose(loop.weights, nu.weights, rtol=1e-6, atol=0)


def test_equivariance_defect_shrinks_with_depth():
    fx = disk_schottky(2.0)
    defects = []
    for L in (4, 6):
        ball = orbit(fx.presentation, fx.domain, fx.basepoint, L)
        nu = build_density(ball, s=0.8)
        defects.append(max(equivariance_defect(nu, g)["tv"] for g in range(1, 5)))
    assert defects[1] < defects[0] < 0.01


def test_shadow_masses(setup):
    _, ball, nu, _ = setup
    rows = np.arange(1, 60)
    huge = shadow_masses(nu, rows, 50.0)
    # every ray from o passes within d(o, g o) of g o
    assert np.allclose(huge, 1.0)
    small = shadow_masses(nu, rows, 0.5)
    mid = shadow_masses(nu, rows, 1.5)
    assert np.all((small >= 0) & (small <= mid + 1e-15) & (mid <= huge + 1e-15))


@settings(max_examples=20, deadline=None)
@given(st.floats(0.05, 3.0), st.floats(0.0, 3.0))
def test_shadow_masses_monotone_in_radius(r, extra):
    fx = disk_schottky(2.0)
    ball = orbit(fx.presentation, fx.domain, fx.basepoint, 3)
    nu = build_density(ball, s=0.9)
    rows = np.arange(1, len(ball))
    a, b = shadow_masses(nu, rows, r), shadow_masses(nu, rows, r + extra)
    assert np.all(a <= b + 1e-15)
    assert np.all((a >= 0) & (b <= 1 + 1e-12))


def test_shadow_report_fields(setup):
    _, ball, nu, _ = setup
    rep = shadow_lemma_report(nu, delta_hat=DELTA)
    assert rep.R == default_radius(ball)
    assert rep.summary["n"] == len(rep.dist) >= 3
    with pytest.raises(DensityError, match="need delta_hat"):
        shadow_lemma_report(nu)


def two_atoms(fx, directions):
    dom = fx.domain
    ball = orbit(fx.presentation, dom, fx.basepoint, 1)
    return AtomicDensity(ball, fx.basepoint, 1.0, 1, dom.lift(np.asarray(directions, float)),
                         np.full(len(directions), 1.0 / len(directions)), np.arange(1, len(directions) + 1))


def test_sampler_on_antipodal_atoms():
    fx = disk_schottky(2.0)
    nu = two_atoms(fx, disk_boundary([0.4, 0.4 + np.pi]))
    assert gromov_batch(fx.domain, nu.directions[:1], nu.directions[1:], fx.basepoint)[0] == pytest.approx(0, abs=1e-12)
    S = bm_sampler(nu, 1.0, 200, np.random.default_rng(1))
    half = len(S) // 2
    assert np.allclose(S.t[half:], -S.t[:half], atol=1e-9)
    with pytest.raises(DensityError, match="two atoms"):
        bm_sampler(two_atoms(fx, disk_boundary([0.4])), 1.0, 10, np.random.default_rng(1))


def test_sampler_flip_invariance(samples):
    S = samples
    half = len(S) // 2
    assert np.array_equal(S.xi[:half], S.eta[half:])
    assert np.allclose(S.feet[:half], S.feet[half:], atol=1e-12)
    assert np.array_equal(S.weight[:half], S.weight[half:])
    assert S.ess > 0.5 * len(S)


def test_sampler_time_uniform_without_cell(setup):
    _, _, nu, _ = setup
    S = bm_sampler(nu, DELTA, 2000, np.random.default_rng(2), t_window=3.0)
    forward = S.t[: len(S) // 2]
    assert stats.kstest(forward, stats.uniform(-3, 6).cdf).pvalue > 0.01
    assert np.abs(forward).max() <= 3 + 1e-8


def test_sampler_empty(setup):
    S = bm_sampler(setup[2], DELTA, 0, np.random.default_rng(0))
    assert len(S) == 0 and S.mode == "empty" and S.ess == 0


def test_geodesic_average(setup):
    fx, ball, _, nb = setup
    red = Reducer(nb)
    classes = conjugacy_classes(ball, fx.domain)
    cls = [c for c in classes if c.kind == RANK_ONE][7]
    f = smooth_ball(fx.domain, [0.2, 0.2], 0.5)
    assert geodesic_average(cls, constant(), red) == pytest.approx(1.0)
    # offset start so that no node sits exactly on a side of the cell, where two lifts tie
    base = geodesic_average(cls, f, red, 256, 0.1)
    assert 0 <= base <= 1
    # the trapezoid rule is periodic: shifting the start by a node or a period changes nothing
    for shift in (cls.ell, 3 * cls.ell / 256, -2 * cls.ell):
        assert geodesic_average(cls, f, red, 256, 0.1 + shift) == pytest.approx(base, abs=1e-8)
    half = geodesic_average(cls, foot_halfplane(fx.domain, [1, 1]), red)
    assert 0 <= half <= 1
    with pytest.raises(DensityError, match="rank-one"):
        geodesic_average(replace(cls, kind=BIPROXIMAL), f, red)


def test_equidistribution_constant_observable(setup, samples):
    fx, ball, _, nb = setup
    classes = conjugacy_classes(ball, fx.domain)
    rows = equidistribution_report(classes, samples, [6.0, 9.0], {"one": constant()}, Reducer(nb), max_classes=50)
    assert all(r["discrepancy"] == pytest.approx(0, abs=1e-12) for r in rows)
    assert equidistribution_trend(rows) == {"one": True}
    with pytest.raises(DensityError, match="fewer than five"):
        equidistribution_report(classes, samples, [0.5], {"one": constant()}, Reducer(nb))


def test_mixing_correlation(setup, samples):
    fx, _, _, nb = setup
    red = Reducer(nb)
    one = mixing_correlation(samples, constant(), constant(), [0, 2.5], red)
    assert all(r["C"] == pytest.approx(1.0) for r in one)
    A = foot_halfplane(fx.domain, [1, 1])
    rows = mixing_correlation(samples, A, A, [0.0, 6.0], red)
    # an indicator squared is itself, so the zero-time correlation is its mass
    assert rows[0]["C"] == pytest.approx(rows[0]["mA"], abs=1e-12)
    assert 0 < rows[0]["mA"] < 1
    never = constant(0.0)
    with pytest.raises(DensityError, match="degenerate"):
        mixing_correlation(samples, never, A, [0.0], red)


def test_bm_mean_of_constant(samples):
    mu, se = bm_mean(samples, constant(2.0))
    assert mu == pytest.approx(2.0) and se == pytest.approx(0, abs=1e-12)


def test_liouville_pool_lies_in_cell():
    fx = builtin("triangle-reflection:2,3,7")
    nb = neighbour_ball(fx.presentation, fx.domain, fx.basepoint, 0.3)
    X, U = liouville_pool(nb, 500, np.random.default_rng(0))
    assert len(X) == 500
    F = dirichlet_polygon(nb)
    assert np.all(X @ F.T <= 1e-12)
    q = fx.domain.q
    assert np.allclose(q(X), -1) and np.allclose(q(U), 1) and np.allclose(q(X, U), 0, atol=1e-12)
    o = fx.basepoint / np.sqrt(-q(fx.basepoint))
    assert np.arccosh(np.maximum(-q(X, o), 1)).max() <= cell_radius(nb) + 1e-6


def test_entropy_small_time_on_triangle_group():
    fx = builtin("triangle-reflection:2,3,7")
    nb = neighbour_ball(fx.presentation, fx.domain, fx.basepoint, 0.3)
    res = entropy_estimate(nb, lambda n, rng: liouville_pool(nb, n, rng), 4.0, 0.3, np.random.default_rng(0))
    assert res["saturated"]
    assert res["count"][1] > res["count"][0] > 1
    assert 0.6 <= res["estimate"] <= 1.3


def test_separated_count_grows_with_time():
    fx = builtin("triangle-reflection:2,3,7")
    nb = neighbour_ball(fx.presentation, fx.domain, fx.basepoint, 0.5)
    pool = liouville_pool(nb, 3000, np.random.default_rng(3))
    a = separated_count(nb, pool, 1.0, 0.5, ratio=0)
    b = separated_count(nb, pool, 3.0, 0.5, ratio=0)
    assert a["processed"] == b["processed"] == 3000
    assert 1 <= a["count"] <= b["count"] <= 3000
    with pytest.raises(DensityError, match="sample too small"):
        entropy_estimate(nb, (pool[0][:10], pool[1][:10]), 4.0, 0.5)
    with pytest.raises(DensityError, match="disk"):
        liouville_pool(orbit(builtin("simplex-lattice").presentation, builtin("simplex-lattice").domain,
                             builtin("simplex-lattice").basepoint, 1), 10, np.random.default_rng(0))
