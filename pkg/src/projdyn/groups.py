"""Word balls of matrix groups, orbit statistics and the closed geodesic census."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from .domain import ConvexDomain, DomainError, Ellipsoid, boundary_classify, simplicial_distance
from .flow import UnitTangent, flow_feet
from .projective import ProjectiveMap, as_map, canonical_matrix, classify_map, spectral_batch

ELEMENT_CAP = 200_000
KEY_DECIMALS = 8


class GroupError(ValueError):
    pass


def _batch_canonical(M: np.ndarray) -> np.ndarray:
    # generators already have |det| = 1, so only the sign is fixed here;
    # recomputing det for deep products would lose it to cancellation
    flat = M.reshape(len(M), -1)
    big = np.abs(flat) > 1e-8 * np.abs(flat).max(axis=1, keepdims=True)
    first = flat[np.arange(len(M)), big.argmax(axis=1)]
    return M * np.sign(first)[:, None, None]


def _half_keys(M):
    flat = _batch_canonical(M).reshape(len(M), -1)
    big = np.abs(flat).max(axis=1, keepdims=True)
    r = np.round(flat / big, KEY_DECIMALS) + 0.0
    s = np.round(np.log(big), 6) + 0.0
    return [row.tobytes() + sc.tobytes() for row, sc in zip(r, s)]


def _keys(M: np.ndarray, Minv=None) -> list[bytes]:
    """Hash keys from the normalised matrix, its scale, and the same for the inverse.

    Shape and scale are kept apart so deep powers with nearly parallel
    normalised matrices stay distinct; the inverse resolves entries too
    small to survive rounding in M.
    """
    if Minv is None:
        Minv = np.linalg.inv(M)
    return [a + b for a, b in zip(_half_keys(M), _half_keys(Minv))]


@dataclass
class GroupPresentation:
    """Generators closed under inverses; ``inverse[i]`` is the index of the inverse of i."""

    generators: list
    labels: list
    inverse: list
    free: bool = False

    @classmethod
    def from_matrices(cls, matrices, labels=None, free=False):
        mats = [canonical_matrix(m) for m in matrices]
        labels = list(labels) if labels is not None else [chr(ord("a") + i) for i in range(len(mats))]
        gens, labs, inv = [], [], []
        for m, lab in zip(mats, labels):
            gens.append(m)
            labs.append(lab)
        k = len(gens)
        inv = [None] * k
        for i in range(k):
            if inv[i] is not None:
                continue
            mi = canonical_matrix(np.linalg.inv(gens[i]))
            for j in range(k):
                if _mat_close(mi, gens[j]):
                    inv[i], inv[j] = j, i
                    break
            else:
                gens.append(mi)
                labs.append(labs[i].swapcase() if labs[i].swapcase() != labs[i] else labs[i] + "'")
                inv.append(i)
                inv[i] = len(gens) - 1
        pres = cls(gens, labs, inv, free)
        pres.check()
        return pres

    def check(self, tol=1e-10):
        for i, j in enumerate(self.inverse):
            prod = self.generators[i] @ self.generators[j]
            prod = prod / prod[np.unravel_index(np.abs(prod).argmax(), prod.shape)]
            if np.abs(prod - np.eye(len(prod)) * prod.trace() / len(prod)).max() > tol * 1e2:
                raise GroupError(f"generator {self.labels[i]}: inverse pair inconsistent")

    @property
    def dim(self):
        return self.generators[0].shape[0]

    def word_label(self, word) -> str:
        return "".join(self.labels[i] for i in word) or "e"

    def word_matrix(self, word) -> np.ndarray:
        m = np.eye(self.dim)
        for i in word:
            m = m @ self.generators[i]
        return _batch_canonical(m[None])[0]

    def invert_word(self, word) -> tuple:
        return tuple(self.inverse[i] for i in reversed(word))


def _mat_close(a, b, tol=1e-8):
    return np.abs(a - b).max() < tol or np.abs(a + b).max() < tol


@dataclass(eq=False)
class GroupElement:
    word: tuple
    matrix: np.ndarray
    inverse: Optional[np.ndarray] = None
    _map: Optional[ProjectiveMap] = field(default=None, repr=False)
    _spectral: object = field(default=None, repr=False)

    @property
    def map(self) -> ProjectiveMap:
        if self._map is None:
            self._map = ProjectiveMap(self.matrix)
        return self._map

    @property
    def spectral(self):
        if self._spectral is None:
            self._spectral = classify_map(self.matrix, self.inverse)
        return self._spectral


@dataclass(eq=False)
class OrbitBall:
    """Deduplicated word ball, with orbit geometry once ``orbit`` has run."""

    presentation: GroupPresentation
    depth: int
    words: list
    matrices: np.ndarray
    inverses: np.ndarray
    lengths: np.ndarray
    index: dict
    domain: Optional[ConvexDomain] = None
    basepoint: Optional[np.ndarray] = None
    points: Optional[np.ndarray] = None
    dist: Optional[np.ndarray] = None
    kappa: Optional[np.ndarray] = None
    directions: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.words)

    def element(self, i) -> GroupElement:
        return GroupElement(self.words[i], self.matrices[i], self.inverses[i])

    def find(self, matrix, inverse=None) -> Optional[int]:
        m = np.asarray(matrix, dtype=float)[None]
        mi = None if inverse is None else np.asarray(inverse, dtype=float)[None]
        return self.index.get(_keys(m, mi)[0])

    @property
    def completeness_radius(self) -> float:
        """Smallest orbit distance on the outer word sphere."""
        outer = self.lengths == self.depth
        return float(self.dist[outer].min()) if outer.any() else float(self.dist.max())


def enumerate_ball(pres: GroupPresentation, L: int, cap: int = ELEMENT_CAP) -> OrbitBall:
    if L < 0:
        raise GroupError("depth must be non-negative")
    n = pres.dim
    gens = np.stack(pres.generators)
    ginv = gens[pres.inverse]
    words = [()]
    mats = [np.eye(n)[None]]
    invs = [np.eye(n)[None]]
    lengths = [0]
    index = {_keys(mats[0], invs[0])[0]: 0}
    layer_words = [()]
    layer, layer_inv = mats[0], invs[0]
    for k in range(1, L + 1):
        new_words, new_mats, new_invs = [], [], []
        for j in range(len(gens)):
            keep = [i for i, w in enumerate(layer_words) if not w or pres.inverse[w[-1]] != j]
            if not keep:
                continue
            prod = layer[keep] @ gens[j]
            prod = _batch_canonical(prod)
            pinv = ginv[j] @ layer_inv[keep]
            for i, key, m, mi in zip(keep, _keys(prod, pinv), prod, pinv):
                if key in index:
                    continue
                index[key] = len(words)
                words.append(layer_words[i] + (j,))
                new_words.append(words[-1])
                new_mats.append(m)
                new_invs.append(mi)
                lengths.append(k)
                if len(words) > cap:
                    raise GroupError(f"element cap {cap} exceeded at depth {k}")
        if not new_mats:
            break
        layer_words = new_words
        layer = np.stack(new_mats)
        layer_inv = np.stack(new_invs)
        mats.append(layer)
        invs.append(layer_inv)
    return OrbitBall(pres, L, words, np.concatenate(mats), np.concatenate(invs), np.array(lengths), index)


def check_automorphisms(pres, domain, n=32, seed=0):
    rng = np.random.default_rng(seed)
    X = domain.random_interior(rng, n)
    for g, lab in zip(pres.generators, pres.labels):
        if not np.all(domain.inside(X @ g.T)):
            raise DomainError(f"not an automorphism: generator {lab}")


def _basepoint_distances(domain, o, mats):
    """d(o, g o) for a stack of automorphisms with |det| = 1.

    On an ellipsoid the form is preserved exactly, so cosh d = |q(o, g o)| / |q(o, o)|
    without renormalising g o; this keeps deep orbit points, whose chart
    images are no longer separable from the boundary, at full precision.
    The generic cross-ratio route is used wherever it is accurate.
    """
    G = mats @ o
    if isinstance(domain, Ellipsoid):
        c = np.abs(domain.q(np.broadcast_to(o, G.shape), G)) / abs(domain.q(o))
        out = np.arccosh(np.maximum(c, 1.0))
        near = c < 1e5
    elif hasattr(domain, "pair_distances_closed"):
        return domain.pair_distances_closed(np.broadcast_to(o, G.shape), G)
    else:
        out = np.zeros(len(G))
        near = np.ones(len(G), dtype=bool)
    near[0] = False
    P = domain.lift(G[near])
    out[near] = domain.pair_distances(np.broadcast_to(o, P.shape), P)
    out[0] = 0.0
    return out


def orbit(pres: GroupPresentation, domain: ConvexDomain, o, L: int, cap: int = ELEMENT_CAP) -> OrbitBall:
    o = domain.lift(np.asarray(getattr(o, "coords", o), dtype=float))
    if not domain.inside(o):
        raise DomainError("basepoint not in the domain")
    check_automorphisms(pres, domain)
    ball = enumerate_ball(pres, L, cap)
    P = domain.lift(ball.matrices @ o)
    ball.domain = domain
    ball.basepoint = o
    ball.points = P
    O = np.broadcast_to(o, P.shape)
    ball.dist = _basepoint_distances(domain, o, ball.matrices)
    _, ball.kappa = spectral_batch(ball.matrices, ball.inverses)
    U = P - O
    U[0] = domain.frame[:, 0]  # arbitrary direction for the identity
    _, hi = domain.line_intervals(O, U)
    ball.directions = O + hi[:, None] * U
    ball.directions[0] = np.nan
    return ball


# -- critical exponent ----------------------------------------------------------------


def _log_count_slope(values, lo, hi, n_grid=64):
    v = np.sort(values)
    r = np.linspace(lo, hi, n_grid)
    N = np.searchsorted(v, r, side="right")
    res = stats.linregress(r, np.log(N))
    return float(res.slope), float(res.stderr)


def critical_exponent(ball: OrbitBall, window=None) -> dict:
    """Slope of log #{d(o, g o) <= r} over the top half of the complete radii.

    A second estimate counts singular-value gaps kappa instead of orbit
    distances; both are returned.
    """
    r_max = ball.completeness_radius
    if window is None:
        window = (r_max / 2, r_max - 1)
    lo, hi = window
    if r_max < 5 or hi - lo < 1:
        raise GroupError("insufficient depth")
    d_slope, d_err = _log_count_slope(ball.dist, lo, hi)
    k_slope, k_err = _log_count_slope(ball.kappa, lo, hi)
    return {
        "delta_hat": d_slope,
        "stderr": d_err,
        "delta_kappa": k_slope,
        "stderr_kappa": k_err,
        "window": (float(lo), float(hi)),
    }


def poincare_series(ball: OrbitBall, s: float) -> float:
    return float(np.exp(-s * ball.dist).sum())


def divergence_diagnostic(balls, s: float) -> dict:
    """Partial Poincare sums at s over nested balls; increasing means divergence-consistent."""
    sums = [poincare_series(b, s) for b in balls]
    incs = np.diff(sums)
    return {
        "depths": [b.depth for b in balls],
        "partial_sums": sums,
        "increments": incs.tolist(),
        "verdict": "divergence-consistent" if np.all(incs > 0) else "convergence-consistent",
    }


# -- classification and census ------------------------------------------------------

RANK_ONE = "rank_one"
BIPROXIMAL = "biproximal_not_rank_one"
SINGULAR = "singular"
ELL_ZERO = 1e-9


def classify_element(domain: ConvexDomain, g) -> str:
    sp = g.spectral if isinstance(g, GroupElement) else as_map(g).spectral
    if sp.ell < ELL_ZERO or not sp.biproximal:
        return SINGULAR
    xp = domain.lift(sp.x_plus.coords)
    xm = domain.lift(sp.x_minus.coords)
    d = simplicial_distance(domain, xp, xm)
    if d is None:
        flags = [boundary_classify(domain, x) for x in (xp, xm)]
        good = all(f.smooth and f.strongly_extremal for f in flags)
        return RANK_ONE if good else BIPROXIMAL
    return RANK_ONE if d >= 3 else BIPROXIMAL


@dataclass
class ConjClass:
    representative: GroupElement
    ell: float
    kind: str
    multiplicity: int
    word_length: int


def _cyclically_reduced(pres, w):
    return len(w) < 2 or pres.inverse[w[0]] != w[-1]


def _min_rotation(w):
    return min(w[i:] + w[:i] for i in range(len(w))) if w else w


def _charpoly_key(m, ell):
    n = m.shape[0]
    if n % 2 and np.linalg.det(m) < 0:
        m = -m
    c = np.real(np.poly(np.linalg.eigvals(m)))
    if n % 2 == 0:
        odd = [c[k] for k in range(1, n + 1, 2) if abs(c[k]) > 1e-6]
        if odd and odd[0] < 0:
            c = c * np.array([(-1) ** k for k in range(n + 1)])
    return tuple(np.round(c, 6) + 0.0) + (round(ell, 6),)


def conjugacy_classes(ball: OrbitBall, domain: ConvexDomain, strategy: str = "free_cyclic") -> list:
    """Conjugacy classes met in the ball.

    ``free_cyclic`` is exact for free groups.  ``charpoly_merge`` merges by
    rounded characteristic polynomial and translation length, a heuristic
    that can merge distinct classes or split none.
    """
    pres = ball.presentation
    groups = defaultdict(list)
    if strategy == "free_cyclic":
        if not pres.free:
            raise GroupError("free_cyclic needs a group flagged free")
        for i, w in enumerate(ball.words):
            if _cyclically_reduced(pres, w):
                groups[_min_rotation(w)].append(i)
        ells, _ = spectral_batch(ball.matrices, ball.inverses)
    elif strategy == "charpoly_merge":
        ells, _ = spectral_batch(ball.matrices, ball.inverses)
        for i in range(len(ball)):
            groups[_charpoly_key(ball.matrices[i], ells[i])].append(i)
    else:
        raise GroupError(f"unknown strategy {strategy!r}")
    out = []
    for members in groups.values():
        i = min(members, key=lambda k: (ball.lengths[k], k))
        el = ball.element(i)
        ell = float(ells[i])
        kind = SINGULAR if ell < ELL_ZERO else classify_element(domain, el)
        out.append(ConjClass(el, ell, kind, len(members), int(ball.lengths[i])))
    out.sort(key=lambda c: (c.ell, c.word_length, c.representative.word))
    return out


def count_table(classes, T_grid, delta_hat=None) -> list[dict]:
    ell = np.array([c.ell for c in classes])
    kinds = np.array([c.kind for c in classes])
    rows = []
    for T in T_grid:
        sel = ell <= T + 1e-9
        total = int(sel.sum())
        row = {
            "T": float(T),
            "total": total,
            "rank_one": int((sel & (kinds == RANK_ONE)).sum()),
            "singular": int((sel & (kinds == SINGULAR)).sum()),
            "biproximal_not_rank_one": int((sel & (kinds == BIPROXIMAL)).sum()),
        }
        row["normalized_stat"] = float(T * total * np.exp(-delta_hat * T)) if delta_hat is not None else float("nan")
        rows.append(row)
    return rows


def counting_rate(table) -> dict:
    """Exponential rate of #[G]_T, fitted on log(T #[G]_T) to absorb the 1/T factor."""
    T = np.array([r["T"] for r in table])
    N = np.array([r["total"] for r in table], dtype=float)
    res = stats.linregress(T, np.log(T * N))
    return {"rate": float(res.slope), "stderr": float(res.stderr)}


def census_completeness(classes, depth) -> float:
    """Smallest translation length among classes whose shortest word has full length."""
    outer = [c.ell for c in classes if c.word_length == depth]
    return min(outer) if outer else float("inf")


# -- quotient tools ------------------------------------------------------------------------


def _orbit_distances(ball, X, chunk_pairs=2_000_000):
    """d(g o, x) for every ball element g (columns) and row x of X."""
    dom = ball.domain
    step = max(1, chunk_pairs // len(ball))
    out = []
    for k in range(0, len(X), step):
        Xa = X[k:k + step]
        P = np.broadcast_to(ball.points[None], (len(Xa),) + ball.points.shape).reshape(-1, X.shape[1])
        Q = np.repeat(Xa, len(ball), axis=0)
        out.append(dom.pair_distances(P, Q).reshape(len(Xa), len(ball)))
    return np.concatenate(out) if out else np.zeros((0, len(ball)))


def dirichlet_reduce_batch(ball: OrbitBall, X, max_iter: int = 256):
    """Move each x into the Dirichlet domain of the basepoint by greedy descent.

    At every step x is replaced by g^-1 x for the ball element g whose orbit
    point is closest to x, until the basepoint itself is closest.  Returns
    the reduced points, and matrices G, G^-1 with x = G x'.
    """
    dom = ball.domain
    X = dom.lift(np.atleast_2d(np.asarray(X, dtype=float))).copy()
    n = X.shape[1]
    total = np.repeat(np.eye(n)[None], len(X), axis=0)
    total_inv = total.copy()
    active = np.arange(len(X))
    for _ in range(max_iter):
        if not len(active):
            break
        D = _orbit_distances(ball, X[active])
        best = D.argmin(axis=1)
        move = D[np.arange(len(active)), best] < D[:, 0] - 1e-12
        if not move.any():
            break
        idx = active[move]
        g = best[move]
        X[idx] = dom.lift(np.einsum("nij,nj->ni", ball.inverses[g], X[idx]))
        total[idx] = np.einsum("nij,njk->nik", total[idx], ball.matrices[g])
        total_inv[idx] = np.einsum("nij,njk->nik", ball.inverses[g], total_inv[idx])
        active = idx
    return X, total, total_inv


def dirichlet_reduce(ball: OrbitBall, x):
    """(x', g) with x' = g^-1 x in the Dirichlet domain of the basepoint, g = id when x already is."""
    Xr, G, Gi = dirichlet_reduce_batch(ball, [np.asarray(getattr(x, "coords", x), dtype=float)])
    i = ball.find(G[0], Gi[0])
    word = ball.words[i] if i is not None else None
    return Xr[0], GroupElement(word, G[0], Gi[0])


def dirichlet_polygon(ball: OrbitBall) -> np.ndarray:
    """Rows f with the Dirichlet domain = {x : f . x <= 0 for all rows}, on an ellipsoid.

    For the hyperboloid form the bisector of o and g o is the plane
    q(x, g o^ - o^) = 0 with both points normalised to q = -1, so the
    domain cut out by the ball is a polytope in the chart.
    """
    dom = ball.domain
    if not isinstance(dom, Ellipsoid):
        raise GroupError("linear Dirichlet cells need an ellipsoid")
    o = ball.basepoint / np.sqrt(-dom.q(ball.basepoint))
    Y = ball.matrices[1:] @ o
    Y = Y * np.sign(-dom.q(Y, o))[:, None]  # same sheet as o
    Y = Y / np.sqrt(-dom.q(Y))[:, None]
    return (Y - o) @ dom.form


def tangent_distance(domain, v: UnitTangent, w: UnitTangent, n_sub: int = 5) -> float:
    """max over s in [0, 1] of the footpoint distance of phi_s v and phi_s w."""
    ss = np.linspace(0, 1, n_sub)
    fv = flow_feet(v.xi_minus, v.xi_plus, v.s, ss)
    fw = flow_feet(w.xi_minus, w.xi_plus, w.s, ss)
    return float(domain.pair_distances(fv, fw).max())


def closing_search(ball: OrbitBall, v: UnitTangent, t: float, eps: float):
    """Ball element g with g v within eps of phi_t v, its period and the defect |period - t|."""
    dom = ball.domain
    ss = np.linspace(0, 1, 5)
    target = flow_feet(v.xi_minus, v.xi_plus, v.s, t + ss)  # (5, n)
    feet = flow_feet(v.xi_minus, v.xi_plus, v.s, ss)
    moved = dom.lift(np.einsum("gij,sj->gsi", ball.matrices, feet).reshape(-1, feet.shape[1]))
    D = dom.pair_distances(moved, np.tile(target, (len(ball), 1))).reshape(len(ball), len(ss)).max(axis=1)
    order = np.argsort(D, kind="stable")
    for i in order:
        if D[i] >= eps:
            return None
        el = ball.element(i)
        sp = el.spectral
        if sp.biproximal and sp.ell > ELL_ZERO:
            return {"element": el, "period": sp.ell, "alpha": abs(sp.ell - t), "distance": float(D[i])}
    return None


def conical_witness(ball: OrbitBall, xi, R: float) -> dict:
    """Depth-limited conical test: orbit points within R of the ray from the basepoint to xi."""
    from .domain import distance_to_segments, point_at_distance

    dom = ball.domain
    o = ball.basepoint
    XI = dom.lift(np.asarray(xi, dtype=float))
    far = point_at_distance(dom, o, XI - o, float(ball.dist.max()) + R + 1)
    ds = np.array([distance_to_segments(dom, o, [far], p)[0] for p in ball.points[1:]])
    hits = ball.dist[1:][ds < R]
    return {
        "label": f"conical at depth ({R}, {ball.depth})",
        "witnesses": int(hits.size),
        "deepest": float(hits.max()) if hits.size else 0.0,
    }


def displacement_minimum(domain, g, rng, n=10_000, refine=True) -> float:
    """Smallest sampled d(x, g x); refined by a local search from the best sample."""
    from scipy.optimize import minimize

    m = as_map(g).matrix
    X = domain.random_interior(rng, n)
    d = domain.pair_distances(X, domain.lift(X @ m.T))
    best = float(d.min())
    if not refine:
        return best
    u0 = domain.affine(X[d.argmin()][None])[0]

    def f(u):
        x = domain.from_affine(np.asarray(u)[None])
        if not domain.inside(x)[0]:
            return 1e6
        return float(domain.pair_distances(x, domain.lift(x @ m.T))[0])

    res = minimize(f, u0, method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 4000})
    return min(best, float(res.fun))
