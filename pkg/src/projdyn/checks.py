"""Named invariant checks with measured residuals, used by ``verify``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import Ellipsoid, Simplex, disk, shadow_mask
from .flow import busemann_batch, gromov_batch, hopf_batch, period_check
from .fixtures import boost, rotation
from .groups import displacement_minimum
from .projective import translation_length


@dataclass
class CheckResult:
    name: str
    residual: float
    threshold: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.residual) and self.residual <= self.threshold)

    def as_dict(self) -> dict:
        return {"name": self.name, "residual": float(self.residual), "threshold": self.threshold,
                "pass": self.passed}


def disk_boundary(theta) -> np.ndarray:
    theta = np.atleast_1d(theta)
    return np.column_stack([np.cos(theta), np.sin(theta), np.ones_like(theta)])


def disk_points(rng, n, radius=0.9) -> np.ndarray:
    r = radius * np.sqrt(rng.uniform(size=n))
    a = rng.uniform(0, 2 * np.pi, size=n)
    return np.column_stack([r * np.cos(a), r * np.sin(a), np.ones(n)])


def klein_distance(X, Y) -> np.ndarray:
    """Distance in the Klein model from chart coordinates, artanh form."""
    x, y = X[:, :2] / X[:, 2:], Y[:, :2] / Y[:, 2:]
    c = (1 - np.sum(x * y, axis=1)) ** 2
    a = (1 - np.sum(x * x, axis=1)) * (1 - np.sum(y * y, axis=1))
    return np.arctanh(np.sqrt(np.maximum(1 - a / c, 0.0)))


def simplex_distance(X, Y) -> np.ndarray:
    """Half the log of the largest ratio (x_i y_j) / (x_j y_i) of positive coordinates."""
    R = np.log(X) - np.log(Y)
    return 0.5 * (R.max(axis=1) - R.min(axis=1))


def random_disk_element(rng) -> np.ndarray:
    return rotation(rng.uniform(0, 2 * np.pi)) @ boost(rng.uniform(0.3, 2.5), rng.uniform(0, np.pi)) @ \
        rotation(rng.uniform(0, 2 * np.pi))


def random_hyperbolic(rng) -> np.ndarray:
    """Random disk isometry with translation length bounded below."""
    while True:
        g = random_disk_element(rng)
        if translation_length(g) > 0.2:
            return g


def check_disk_metric(rng, n=1000) -> float:
    D = disk()
    X, Y = disk_points(rng, n), disk_points(rng, n)
    return float(np.abs(D.pair_distances(X, Y) - klein_distance(X, Y)).max())


def check_simplex_metric(rng, n=1000) -> float:
    S = Simplex()
    X, Y = rng.uniform(0.05, 1, size=(n, 3)), rng.uniform(0.05, 1, size=(n, 3))
    X, Y = X / X.sum(1, keepdims=True), Y / Y.sum(1, keepdims=True)
    return float(np.abs(S.pair_distances(X, Y) - simplex_distance(X, Y)).max())


def check_translation_length(rng, n=10) -> float:
    D = disk()
    errs = []
    for _ in range(n):
        g = random_hyperbolic(rng)
        errs.append(abs(displacement_minimum(D, g, rng, n=2000) - translation_length(g)))
    return float(max(errs))


def check_constant_displacement(rng, n=500) -> float:
    S = Simplex()
    X = S.random_interior(rng, n)
    d = S.pair_distances(X, S.lift(X @ np.diag([4.0, 2, 1]).T))
    return float(np.abs(d - np.log(2)).max())


def check_period_identity(rng, domain=None, elements=None, n=100) -> float:
    domain = disk() if domain is None else domain
    errs = []
    for k in range(n):
        g = elements[k % len(elements)] if elements else random_hyperbolic(rng)
        xi = disk_boundary(rng.uniform(0, 2 * np.pi))[0]
        errs.append(abs(period_check(domain, g, xi) - 2 * translation_length(g)))
    return float(max(errs))


def _boundary_pairs(rng, n):
    a = rng.uniform(0, 2 * np.pi, size=n)
    b = a + rng.uniform(0.3, 2 * np.pi - 0.3, size=n)
    return disk_boundary(a), disk_boundary(b)


def check_gromov_on_chord(rng, n=200) -> float:
    D = disk()
    XI, ETA = _boundary_pairs(rng, n)
    s = rng.uniform(0.05, 0.95, size=n)
    X = (1 - s)[:, None] * XI + s[:, None] * ETA
    return float(np.abs(gromov_batch(D, XI, ETA, X)).max())


def check_gromov_basepoint(rng, n=200) -> float:
    D = disk()
    XI, ETA = _boundary_pairs(rng, n)
    X, Y = disk_points(rng, n), disk_points(rng, n)
    lhs = 2 * gromov_batch(D, XI, ETA, X)
    rhs = 2 * gromov_batch(D, XI, ETA, Y) + busemann_batch(D, XI, X, Y) + busemann_batch(D, ETA, X, Y)
    return float(np.abs(lhs - rhs).max())


def check_gromov_lipschitz(rng, n=200) -> float:
    """Largest excess of |<xi,eta>_x - <xi,eta>_y| over d(x, y); zero when the bound holds."""
    D = disk()
    XI, ETA = _boundary_pairs(rng, n)
    X, Y = disk_points(rng, n), disk_points(rng, n)
    diff = np.abs(gromov_batch(D, XI, ETA, X) - gromov_batch(D, XI, ETA, Y))
    return float(max((diff - D.pair_distances(X, Y)).max(), 0.0))


def check_busemann_cocycle(rng, domain=None, n=200) -> float:
    D = disk() if domain is None else domain
    XI = disk_boundary(rng.uniform(0, 2 * np.pi, size=n))
    X, Y, Z = (disk_points(rng, n) for _ in range(3))
    r = busemann_batch(D, XI, X, Z) - busemann_batch(D, XI, X, Y) - busemann_batch(D, XI, Y, Z)
    return float(np.abs(r).max())


def check_busemann_ray(rng, n=200) -> float:
    D = disk()
    XI = disk_boundary(rng.uniform(0, 2 * np.pi, size=n))
    X = disk_points(rng, n)
    s = rng.uniform(0.05, 0.95, size=n)
    Y = (1 - s)[:, None] * X + s[:, None] * XI
    return float(np.abs(busemann_batch(D, XI, X, Y) - D.pair_distances(X, Y)).max())


def check_shadow_bound(rng, n=400, r=0.5) -> tuple[float, int]:
    """Largest violation of d - 4r <= b_xi(x, y) <= d over shadow members, and their count."""
    D = disk()
    worst, members = 0.0, 0
    for _ in range(8):
        x, y = disk_points(rng, 1)[0], disk_points(rng, 1)[0]
        XI = disk_boundary(rng.uniform(0, 2 * np.pi, size=n // 8))
        m = shadow_mask(D, x, y, r, XI)
        if not m.any():
            continue
        b = busemann_batch(D, XI[m], x, y)
        d = float(D.pair_distances(x[None], y[None])[0])
        worst = max(worst, float(np.max(np.maximum(d - 4 * r - b, b - d - 1e-9))))
        members += int(m.sum())
    return max(worst, 0.0), members


def check_flip_time(rng, n=200) -> float:
    """Hopf time of the flipped vector is 2<xi, eta>_o - t."""
    D = disk()
    XI, ETA = _boundary_pairs(rng, n)
    o = D.interior_point
    T = rng.uniform(-3, 3, size=n)
    s = hopf_batch(D, o, XI, ETA, T)
    feet = (1 - s)[:, None] * XI + s[:, None] * ETA
    t_flip = busemann_batch(D, XI, o, feet)
    return float(np.abs(t_flip - (2 * gromov_batch(D, XI, ETA, o) - T)).max())


SUITE = {
    "disk_metric_oracle": (check_disk_metric, 1e-9),
    "simplex_metric_oracle": (check_simplex_metric, 1e-9),
    "translation_length": (check_translation_length, 1e-3),
    "constant_displacement": (check_constant_displacement, 1e-10),
    "period_identity": (check_period_identity, 1e-6),
    "gromov_on_chord": (check_gromov_on_chord, 1e-6),
    "gromov_basepoint_change": (check_gromov_basepoint, 1e-6),
    "gromov_lipschitz": (check_gromov_lipschitz, 1e-6),
    "busemann_cocycle": (check_busemann_cocycle, 1e-6),
    "busemann_on_rays": (check_busemann_ray, 1e-8),
    "flip_time": (check_flip_time, 1e-6),
}


def run_suite(seed: int = 0) -> list[CheckResult]:
    out = []
    for k, (name, (fn, tol)) in enumerate(SUITE.items()):
        out.append(CheckResult(name, fn(np.random.default_rng([seed, k])), tol))
    worst, members = check_shadow_bound(np.random.default_rng([seed, len(SUITE)]))
    out.append(CheckResult("shadow_busemann_bound", worst if members else float("nan"), 1e-9))
    return out


def fixture_checks(fx, seed: int = 0) -> list[CheckResult]:
    """Checks that use the fixture's own generators."""
    rng = np.random.default_rng([seed, 99])
    gens = [g for g in fx.presentation.generators]
    out = []
    if isinstance(fx.domain, Ellipsoid) and fx.domain.dim == 3:
        hyp = [g for g in gens if translation_length(g) > 1e-6]
        if hyp:
            out.append(CheckResult("fixture_period_identity",
                                   check_period_identity(rng, fx.domain, hyp, n=20 * len(hyp)), 1e-6))
    if isinstance(fx.domain, Simplex):
        errs = []
        X = fx.domain.random_interior(rng, 200)
        for g in gens:
            d = fx.domain.pair_distances(X, fx.domain.lift(X @ g.T))
            errs.append(float(np.abs(d - translation_length(g)).max()))
        out.append(CheckResult("constant_displacement", max(errs), 1e-10))
    return out
