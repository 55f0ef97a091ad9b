"""Homogeneous coordinates, cross-ratios and spectral data of projective maps."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

PROXIMAL_GAP = 1e-8
REAL_TOL = 1e-10
POWER_GAP = 2.0
POWER_STEPS = 8
COLLINEAR_TOL = 1e-9


class ProjectiveError(ValueError):
    pass


def canonical_vector(v) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(-1)
    n = np.linalg.norm(v)
    if n == 0 or not np.isfinite(n):
        raise ProjectiveError("zero or non-finite vector has no projective class")
    v = v / n
    # sign fix on the first coordinate that is not numerically zero
    idx = np.flatnonzero(np.abs(v) > 1e-12)[0]
    if v[idx] < 0:
        v = -v
    return v


@dataclass(frozen=True, eq=False)
class ProjectivePoint:
    """A point of P(V), stored as a unit vector with a sign convention."""

    coords: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coords", canonical_vector(self.coords))
        self.coords.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.coords.size

    def close_to(self, other: "ProjectivePoint", tol: float = 1e-9) -> bool:
        return bool(np.linalg.norm(self.coords - as_point(other).coords) <= tol)

    def __repr__(self):
        return f"ProjectivePoint({np.array2string(self.coords, precision=6)})"


def as_point(p) -> ProjectivePoint:
    if isinstance(p, ProjectivePoint):
        return p
    return ProjectivePoint(np.asarray(p, dtype=float))


def canonical_matrix(m) -> np.ndarray:
    m = np.array(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ProjectiveError("projective map needs a square matrix")
    det = np.linalg.det(m)
    if not np.isfinite(det) or abs(det) < 1e-300:
        raise ProjectiveError("singular matrix")
    m = m / abs(det) ** (1.0 / m.shape[0])
    flat = m.reshape(-1)
    idx = np.flatnonzero(np.abs(flat) > 1e-8 * np.abs(flat).max())[0]
    if flat[idx] < 0:
        m = -m
    return m


@dataclass(frozen=True)
class SpectralClass:
    eigen_moduli: np.ndarray
    singular_values: np.ndarray
    ell: float
    kappa: float
    proximal: bool
    biproximal: bool
    x_plus: Optional[ProjectivePoint] = None
    x_minus: Optional[ProjectivePoint] = None
    x_zero: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class ProjectiveMap:
    matrix: np.ndarray
    _spectral: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        m = canonical_matrix(self.matrix)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def inverse(self) -> "ProjectiveMap":
        return ProjectiveMap(np.linalg.inv(self.matrix))

    def __matmul__(self, other: "ProjectiveMap") -> "ProjectiveMap":
        return ProjectiveMap(self.matrix @ other.matrix)

    @property
    def spectral(self) -> SpectralClass:
        if "s" not in self._spectral:
            self._spectral["s"] = classify_map(self)
        return self._spectral["s"]


def as_map(g) -> ProjectiveMap:
    if isinstance(g, ProjectiveMap):
        return g
    return ProjectiveMap(np.asarray(g, dtype=float))


def apply(g, p) -> ProjectivePoint:
    g = as_map(g)
    p = as_point(p)
    return ProjectivePoint(g.matrix @ p.coords)


def _line_basis(points: np.ndarray) -> np.ndarray:
    """Orthonormal 2-frame of the span of the rows, after a rank-2 check."""
    _, s, vt = np.linalg.svd(points, full_matrices=False)
    if s.size > 2 and s[2] > COLLINEAR_TOL * s[0]:
        raise ProjectiveError("not collinear")
    return vt[:2]


def cross_ratio(a, x, y, b) -> float:
    """[a, x, y, b] normalised so that [0, 1, t, inf] = t.

    For affine coordinates this is (y - a)(b - x) / ((x - a)(b - y)).
    """
    pts = np.stack([as_point(p).coords for p in (a, x, y, b)])
    basis = _line_basis(pts)
    u = pts @ basis.T  # 2-vectors in the plane of the line

    def det(p, q):
        return p[0] * q[1] - p[1] * q[0]

    ua, ux, uy, ub = u
    scale = np.linalg.norm(u, axis=1).prod()
    den = det(ux, ua) * det(ub, uy)
    if abs(det(ua, ub)) < 1e-12 or abs(den) < 1e-14 * scale:
        raise ProjectiveError("degenerate tuple")
    return float(det(uy, ua) * det(ub, ux) / den)


def collinear_param(a, b, p, chart=None) -> float:
    """Affine parameter t with p = (1 - t) a + t b in the chart ``chart``.

    ``chart`` is a linear functional positive on a, b and p; by default the
    functional is the one dual to a + b (after aligning signs).
    """
    a = as_point(a).coords
    b = as_point(b).coords
    p = as_point(p).coords
    if b @ a < 0:
        b = -b
    if chart is None:
        chart = a + b
    chart = np.asarray(chart, dtype=float)
    va, vb, vp = (v / (chart @ v) for v in (a, b, p))
    _line_basis(np.stack([va, vb, vp]))
    d = vb - va
    t = float((vp - va) @ d / (d @ d))
    if np.linalg.norm(va + t * d - vp) > 1e-7 * (1 + np.linalg.norm(vp)):
        raise ProjectiveError("point off the line")
    return t


def _real_eigvec(vec: np.ndarray) -> np.ndarray:
    # a simple real eigenvalue's eigenvector is real up to a complex phase
    k = np.argmax(np.abs(vec))
    v = vec * np.conj(vec[k]) / abs(vec[k])
    return np.real(v)


def _sorted_eig(m):
    try:
        w, vecs = np.linalg.eig(m)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise ProjectiveError("spectral failure") from exc
    if not np.all(np.isfinite(w)):
        raise ProjectiveError("spectral failure")
    order = np.argsort(-np.abs(w), kind="stable")
    return w[order], vecs[:, order]


def _gap_ok(w):
    top = abs(w[0])
    return top / abs(w[1]) > 1 + PROXIMAL_GAP and abs(w[0].imag) <= REAL_TOL * top


def classify_map(g, inverse=None) -> SpectralClass:
    """Spectral data of g.

    ``inverse`` may carry an accurately known inverse matrix (for instance
    the reversed product of inverse generators); the repelling data is then
    read off it, which stays accurate for products whose smallest
    eigenvalue is below machine precision relative to the largest.
    """
    if inverse is None or isinstance(g, ProjectiveMap):
        m = as_map(g).matrix
    else:
        m = np.asarray(g, dtype=float)  # trusted |det| = 1, det itself may be lost
    n = m.shape[0]
    w, vecs = _sorted_eig(m)
    mi = np.linalg.inv(m) if inverse is None else np.asarray(inverse, dtype=float)
    wi, vecs_i = _sorted_eig(mi)
    try:
        sv = np.linalg.svd(m, compute_uv=False)
        sv_i = np.linalg.svd(mi, compute_uv=False)
    except np.linalg.LinAlgError as exc:  # pragma: no cover
        raise ProjectiveError("spectral failure") from exc
    mod = np.abs(w)
    # |det| = 1, so the moduli of g^-1 are the reciprocals of those of g
    ell = 0.5 * float(np.log(_top_modulus(m[None])[0]) + np.log(_top_modulus(mi[None])[0]))
    kappa = 0.5 * float(np.log(sv[0]) + np.log(sv_i[0]))
    proximal = n > 1 and _gap_ok(w)
    inv_prox = n > 1 and _gap_ok(wi)
    x_plus = ProjectivePoint(_real_eigvec(vecs[:, 0])) if proximal else None
    x_minus = ProjectivePoint(_real_eigvec(vecs_i[:, 0])) if inv_prox else None
    x_zero = None
    if proximal and inv_prox and n > 2:
        mid = vecs[:, 1:-1]
        span = np.concatenate([mid.real, mid.imag], axis=1)
        u, s, _ = np.linalg.svd(span, full_matrices=False)
        x_zero = u[:, s > 1e-9 * max(s[0], 1e-300)]
    return SpectralClass(
        eigen_moduli=mod,
        singular_values=sv,
        ell=max(ell, 0.0),
        kappa=max(kappa, 0.0),
        proximal=bool(proximal),
        biproximal=bool(proximal and inv_prox),
        x_plus=x_plus,
        x_minus=x_minus,
        x_zero=x_zero,
    )


def translation_length(g) -> float:
    return as_map(g).spectral.ell


def _top_modulus(mats: np.ndarray) -> np.ndarray:
    """Largest eigenvalue modulus of each matrix in a stack.

    The dense solver's value is polished by power steps from its own
    eigenvector when the top eigenvalue is real and well separated: for badly
    scaled products it can be off by 1e-6 relative, while matrix-vector
    products stay accurate to machine precision relative to the norm.
    """
    w, V = np.linalg.eig(mats)
    order = np.argsort(-np.abs(w), axis=-1, kind="stable")
    w = np.take_along_axis(w, order, axis=-1)
    top = np.abs(w[..., 0])
    if w.shape[-1] < 2:
        return top
    v = np.take_along_axis(V, order[..., None, :1], axis=-1)[..., 0]
    sep = (top > POWER_GAP * np.abs(w[..., 1])) & (np.abs(w[..., 0].imag) <= REAL_TOL * top)
    if not sep.any():
        return top
    M = mats[sep]
    k = np.argmax(np.abs(v[sep]), axis=-1)
    x = np.real(v[sep] * np.conj(v[sep][np.arange(len(k)), k])[:, None])
    x /= np.linalg.norm(x, axis=-1, keepdims=True)
    for _ in range(POWER_STEPS):
        y = np.einsum("nij,nj->ni", M, x)
        nrm = np.linalg.norm(y, axis=-1)
        x = y / nrm[:, None]
    top = top.copy()
    top[sep] = nrm
    return top


def spectral_batch(matrices: np.ndarray, inverses=None) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised (ell, kappa) for a stack of matrices with |det| = 1.

    With ``inverses`` the smallest modulus and singular value are taken as
    reciprocals of the top ones of the inverse, which avoids cancellation.
    """
    mats = np.asarray(matrices, dtype=float)
    top = _top_modulus(mats)
    sv = np.linalg.svd(mats, compute_uv=False)
    if inverses is None:
        bottom = np.abs(np.linalg.eigvals(mats)).min(axis=-1)
        ell = 0.5 * np.log(top / bottom)
        kappa = 0.5 * np.log(sv[..., 0] / sv[..., -1])
    else:
        inv = np.asarray(inverses, dtype=float)
        ell = 0.5 * np.log(top * _top_modulus(inv))
        kappa = 0.5 * np.log(sv[..., 0] * np.linalg.svd(inv, compute_uv=False)[..., 0])
    return np.maximum(ell, 0.0), np.maximum(kappa, 0.0)
