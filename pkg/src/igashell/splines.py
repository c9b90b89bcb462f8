"""B-spline and NURBS evaluation kernel.

Basis evaluation follows the usual non-zero-span formulation: for a parameter
``u`` only the ``p + 1`` functions ``N_{span-p} .. N_{span}`` are non-zero and
are computed by the triangular Cox-de Boor scheme.  Every routine exists in a
scalar form (mirroring textbook signatures) and, where it matters for speed,
a vectorised form operating on arrays of parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "SplineDomainError",
    "RefinementError",
    "KnotVector",
    "NurbsCurve",
    "NurbsSurface",
    "uniform_knots",
    "find_span",
    "find_spans",
    "basis_funs",
    "basis_derivs",
    "basis_derivs_vec",
    "rational_basis_2d",
    "curve_point",
    "curve_derivs",
    "surface_point",
    "surface_derivs",
    "surface_derivs_vec",
    "refine_knots",
    "refine_uniform",
]

_DOMAIN_TOL = 1e-12


class SplineDomainError(ValueError):
    """A parameter value lies outside the valid spline domain."""


class RefinementError(ValueError):
    """Knot insertion request is invalid."""


@dataclass(frozen=True)
class KnotVector:
    """Non-decreasing knot sequence together with the spline degree."""

    knots: np.ndarray
    degree: int

    def __post_init__(self) -> None:
        k = np.asarray(self.knots, dtype=float)
        object.__setattr__(self, "knots", k)
        p = int(self.degree)
        if p < 0:
            raise ValueError("degree must be non-negative")
        if k.ndim != 1:
            raise ValueError("knots must be one-dimensional")
        if k.size < 2 * (p + 1):
            raise ValueError(f"need at least {2 * (p + 1)} knots for degree {p}, got {k.size}")
        if np.any(np.diff(k) < 0):
            raise ValueError("knots must be non-decreasing")
        if not (np.all(k[: p + 1] == k[0]) and np.all(k[-(p + 1):] == k[-1])):
            raise ValueError("only clamped knot vectors are supported")
        if k[-1] <= k[0]:
            raise ValueError("knot vector spans an empty domain")

    @property
    def n_basis(self) -> int:
        return self.knots.size - self.degree - 1

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.knots[self.degree]), float(self.knots[-self.degree - 1])

    @property
    def breakpoints(self) -> np.ndarray:
        """Distinct knot values (element boundaries)."""
        return np.unique(self.knots)

    @property
    def n_spans(self) -> int:
        return self.breakpoints.size - 1

    def multiplicity(self, u: float) -> int:
        return int(np.count_nonzero(self.knots == u))


def uniform_knots(n_spans: int, degree: int, a: float = 0.0, b: float = 1.0) -> KnotVector:
    """Clamped knot vector with ``n_spans`` equal spans on ``[a, b]``."""
    if n_spans < 1:
        raise ValueError("n_spans must be positive")
    inner = np.linspace(a, b, n_spans + 1)
    knots = np.concatenate([np.full(degree, a), inner, np.full(degree, b)])
    return KnotVector(knots, degree)


def _as_kv(kv: KnotVector | Sequence[float], degree: int | None = None) -> KnotVector:
    if isinstance(kv, KnotVector):
        return kv
    if degree is None:
        raise TypeError("degree required when passing raw knots")
    return KnotVector(np.asarray(kv, dtype=float), degree)


def find_spans(kv: KnotVector, u: np.ndarray) -> np.ndarray:
    """Vectorised span search; see :func:`find_span`."""
    u = np.asarray(u, dtype=float)
    k, p = kv.knots, kv.degree
    lo, hi = kv.domain
    tol = _DOMAIN_TOL * (hi - lo)
    if np.any(u < lo - tol) or np.any(u > hi + tol):
        bad = u[(u < lo - tol) | (u > hi + tol)]
        raise SplineDomainError(f"parameter {bad.flat[0]!r} outside domain [{lo}, {hi}]")
    last = k.size - p - 2  # last non-degenerate span index
    span = np.searchsorted(k, u, side="right") - 1
    return np.clip(span, p, last)


def find_span(kv: KnotVector, u: float) -> int:
    """Index ``i`` with ``knots[i] <= u < knots[i+1]``.

    At the right end of the domain the last non-degenerate span is returned.
    """
    return int(find_spans(kv, np.array([u]))[0])


def basis_derivs_vec(kv: KnotVector, u: np.ndarray, order: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Non-zero basis functions and derivatives at many parameters.

    Returns
    -------
    spans : (n,) int array
    ders : (n, order + 1, p + 1) array
        ``ders[:, k, j]`` is the k-th derivative of ``N_{span - p + j}``.
        Rows with ``k > p`` are zero.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    spans = find_spans(kv, u)
    return spans, _ders_at_spans(kv, spans, u, order)


def _ders_at_spans(kv: KnotVector, spans: np.ndarray, u: np.ndarray, order: int) -> np.ndarray:
    k, p = kv.knots, kv.degree
    n = u.size
    left = np.zeros((n, p + 1))
    right = np.zeros((n, p + 1))
    ndu = np.zeros((n, p + 1, p + 1))
    ndu[:, 0, 0] = 1.0
    for j in range(1, p + 1):
        left[:, j] = u - k[spans + 1 - j]
        right[:, j] = k[spans + j] - u
        saved = np.zeros(n)
        for r in range(j):
            ndu[:, j, r] = right[:, r + 1] + left[:, j - r]
            temp = _safe_div(ndu[:, r, j - 1], ndu[:, j, r])
            ndu[:, r, j] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        ndu[:, j, j] = saved

    ders = np.zeros((n, order + 1, p + 1))
    ders[:, 0, :] = ndu[:, :, p]
    top = min(order, p)
    for r in range(p + 1):
        a = np.zeros((n, 2, p + 1))
        a[:, 0, 0] = 1.0
        s1, s2 = 0, 1
        for kk in range(1, top + 1):
            d = np.zeros(n)
            rk, pk = r - kk, p - kk
            if r >= kk:
                a[:, s2, 0] = _safe_div(a[:, s1, 0], ndu[:, pk + 1, rk])
                d = a[:, s2, 0] * ndu[:, rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = kk - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[:, s2, j] = _safe_div(a[:, s1, j] - a[:, s1, j - 1], ndu[:, pk + 1, rk + j])
                d = d + a[:, s2, j] * ndu[:, rk + j, pk]
            if r <= pk:
                a[:, s2, kk] = _safe_div(-a[:, s1, kk - 1], ndu[:, pk + 1, r])
                d = d + a[:, s2, kk] * ndu[:, r, pk]
            ders[:, kk, r] = d
            s1, s2 = s2, s1
    fac = p
    for kk in range(1, top + 1):
        ders[:, kk, :] *= fac
        fac *= p - kk
    return ders


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    # 0/0 := 0 convention of the recursion
    out = np.zeros_like(num)
    nz = den != 0.0
    out[nz] = num[nz] / den[nz]
    return out


def _check_span(kv: KnotVector, span: int, u: float) -> None:
    k, p = kv.knots, kv.degree
    if not (p <= span <= k.size - p - 2):
        raise ValueError(f"span {span} out of range for knot vector with {k.size} knots")
    lo, hi = k[span], k[span + 1]
    if not (lo <= u <= hi) or lo == hi:
        raise ValueError(f"span {span} does not contain u={u}")


def basis_funs(kv: KnotVector, span: int, u: float) -> np.ndarray:
    """The ``p + 1`` non-zero basis values at ``u``."""
    _check_span(kv, span, u)
    return _ders_at_spans(kv, np.array([span]), np.array([float(u)]), 0)[0, 0]


def basis_derivs(kv: KnotVector, span: int, u: float, order: int) -> np.ndarray:
    """Derivatives of the non-zero basis functions, shape ``(order + 1, p + 1)``."""
    _check_span(kv, span, u)
    return _ders_at_spans(kv, np.array([span]), np.array([float(u)]), order)[0]


@dataclass(frozen=True)
class NurbsCurve:
    knots: KnotVector
    control_points: np.ndarray
    weights: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        cp = np.asarray(self.control_points, dtype=float)
        if cp.ndim != 2:
            raise ValueError("control_points must be (n, dim)")
        w = np.ones(cp.shape[0]) if self.weights is None else np.asarray(self.weights, dtype=float)
        if cp.shape[0] != self.knots.n_basis or w.shape != (cp.shape[0],):
            raise ValueError(
                f"expected {self.knots.n_basis} control points and weights, got {cp.shape[0]} / {w.shape}"
            )
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
        object.__setattr__(self, "control_points", cp)
        object.__setattr__(self, "weights", w)

    @property
    def degree(self) -> int:
        return self.knots.degree


def curve_derivs(c: NurbsCurve, u: np.ndarray | float, order: int = 0) -> np.ndarray:
    """Point and parametric derivatives of a NURBS curve.

    Returns an array of shape ``(n, order + 1, dim)`` (``n`` parameters).
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    p = c.degree
    spans, ders = basis_derivs_vec(c.knots, u, order)
    idx = spans[:, None] - p + np.arange(p + 1)[None, :]
    w = c.weights[idx]  # (n, p+1)
    pw = c.control_points[idx] * w[..., None]  # (n, p+1, dim)
    a = np.einsum("nkj,njd->nkd", ders, pw)
    wd = np.einsum("nkj,nj->nk", ders, w)
    out = np.zeros_like(a)
    from math import comb

    for k in range(order + 1):
        v = a[:, k, :].copy()
        for i in range(1, k + 1):
            v -= comb(k, i) * wd[:, i, None] * out[:, k - i, :]
        out[:, k, :] = v / wd[:, 0, None]
    return out


def curve_point(c: NurbsCurve, u: float) -> np.ndarray:
    """Evaluate the curve at a single parameter."""
    return curve_derivs(c, np.array([u]), 0)[0, 0]


@dataclass(frozen=True)
class NurbsSurface:
    """Tensor-product NURBS surface.

    ``control_net`` has shape ``(m + 1, n + 1, 3)``; index ``i`` runs along
    ``s`` and ``j`` along ``t``.
    """

    knots_s: KnotVector
    knots_t: KnotVector
    control_net: np.ndarray
    weights: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        cp = np.asarray(self.control_net, dtype=float)
        shape = (self.knots_s.n_basis, self.knots_t.n_basis)
        if cp.ndim != 3 or cp.shape[:2] != shape:
            raise ValueError(f"control net must have shape {shape + (3,)}, got {cp.shape}")
        w = np.ones(shape) if self.weights is None else np.asarray(self.weights, dtype=float)
        if w.shape != shape:
            raise ValueError(f"weights must have shape {shape}, got {w.shape}")
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
        object.__setattr__(self, "control_net", cp)
        object.__setattr__(self, "weights", w)

    @property
    def degrees(self) -> tuple[int, int]:
        return self.knots_s.degree, self.knots_t.degree

    @property
    def shape(self) -> tuple[int, int]:
        return self.control_net.shape[0], self.control_net.shape[1]

    @property
    def domain(self) -> tuple[tuple[float, float], tuple[float, float]]:
        return self.knots_s.domain, self.knots_t.domain

    def bbox_diagonal(self) -> float:
        pts = self.control_net.reshape(-1, 3)
        return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))


@dataclass
class RationalBasis2D:
    """Non-zero bivariate rational basis values at a batch of points.

    ``index`` holds flat control-point indices ``i * (n + 1) + j``;
    ``R``, ``dRs``, ``dRt`` (and second derivatives if requested) have shape
    ``(npts, (p + 1) * (q + 1))``.
    """

    index: np.ndarray
    R: np.ndarray
    dRs: np.ndarray | None = None
    dRt: np.ndarray | None = None
    dRss: np.ndarray | None = None
    dRst: np.ndarray | None = None
    dRtt: np.ndarray | None = None


def rational_basis_vec(surf: NurbsSurface, s: np.ndarray, t: np.ndarray, order: int = 1) -> RationalBasis2D:
    """Vectorised bivariate NURBS basis with derivatives up to ``order`` (0, 1 or 2)."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    p, q = surf.degrees
    ncol = surf.shape[1]
    ss, ds = basis_derivs_vec(surf.knots_s, s, order)
    st, dt = basis_derivs_vec(surf.knots_t, t, order)
    ii = ss[:, None] - p + np.arange(p + 1)[None, :]
    jj = st[:, None] - q + np.arange(q + 1)[None, :]
    index = (ii[:, :, None] * ncol + jj[:, None, :]).reshape(s.size, -1)
    w = surf.weights.reshape(-1)[index]

    def tp(a: int, b: int) -> np.ndarray:
        return (ds[:, a, :, None] * dt[:, b, None, :]).reshape(s.size, -1) * w

    N = tp(0, 0)
    W = N.sum(axis=1, keepdims=True)
    R = N / W
    out = RationalBasis2D(index=index, R=R)
    if order >= 1:
        Ns, Nt = tp(1, 0), tp(0, 1)
        Ws, Wt = Ns.sum(axis=1, keepdims=True), Nt.sum(axis=1, keepdims=True)
        out.dRs = (Ns - R * Ws) / W
        out.dRt = (Nt - R * Wt) / W
        if order >= 2:
            Nss, Nst, Ntt = tp(2, 0), tp(1, 1), tp(0, 2)
            Wss, Wst, Wtt = (a.sum(axis=1, keepdims=True) for a in (Nss, Nst, Ntt))
            out.dRss = (Nss - 2 * out.dRs * Ws - R * Wss) / W
            out.dRtt = (Ntt - 2 * out.dRt * Wt - R * Wtt) / W
            out.dRst = (Nst - out.dRs * Wt - out.dRt * Ws - R * Wst) / W
    return out


def rational_basis_2d(surf: NurbsSurface, s: float, t: float, order: int = 1) -> RationalBasis2D:
    """Non-zero ``R_ij`` and their parametric derivatives at a single point."""
    b = rational_basis_vec(surf, np.array([s]), np.array([t]), order)
    return RationalBasis2D(
        index=b.index[0],
        R=b.R[0],
        dRs=None if b.dRs is None else b.dRs[0],
        dRt=None if b.dRt is None else b.dRt[0],
        dRss=None if b.dRss is None else b.dRss[0],
        dRst=None if b.dRst is None else b.dRst[0],
        dRtt=None if b.dRtt is None else b.dRtt[0],
    )


def surface_derivs_vec(surf: NurbsSurface, s: np.ndarray, t: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Points ``S`` and tangents ``S_s``, ``S_t``, each of shape ``(n, 3)``."""
    b = rational_basis_vec(surf, s, t, 1)
    P = surf.control_net.reshape(-1, 3)[b.index]
    S = np.einsum("nk,nkd->nd", b.R, P)
    Ss = np.einsum("nk,nkd->nd", b.dRs, P)
    St = np.einsum("nk,nkd->nd", b.dRt, P)
    return S, Ss, St


def surface_point(surf: NurbsSurface, s: float, t: float) -> np.ndarray:
    b = rational_basis_vec(surf, np.array([s]), np.array([t]), 0)
    P = surf.control_net.reshape(-1, 3)[b.index[0]]
    return b.R[0] @ P


def surface_derivs(surf: NurbsSurface, s: float, t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(S, S_s, S_t)`` at a single parameter pair."""
    S, Ss, St = surface_derivs_vec(surf, np.array([s]), np.array([t]))
    return S[0], Ss[0], St[0]


# --------------------------------------------------------------------------
# knot insertion (Boehm)


def _insert_knot(knots: np.ndarray, p: int, Pw: np.ndarray, u: float) -> tuple[np.ndarray, np.ndarray]:
    """Insert ``u`` once.  ``Pw`` holds homogeneous points along axis 0."""
    k = find_span(KnotVector(knots, p), u)
    n = Pw.shape[0]
    new = np.empty((n + 1,) + Pw.shape[1:])
    new[: k - p + 1] = Pw[: k - p + 1]
    new[k + 1:] = Pw[k:]
    for i in range(k - p + 1, k + 1):
        denom = knots[i + p] - knots[i]
        a = (u - knots[i]) / denom
        new[i] = a * Pw[i] + (1.0 - a) * Pw[i - 1]
    return np.insert(knots, k + 1, u), new


def _refine_axis(kv: KnotVector, Pw: np.ndarray, new_knots: Sequence[float]) -> tuple[KnotVector, np.ndarray]:
    knots = kv.knots.copy()
    p = kv.degree
    lo, hi = kv.domain
    for u in sorted(float(x) for x in new_knots):
        if not (lo < u < hi):
            raise RefinementError(f"knot {u} not strictly inside domain ({lo}, {hi})")
        if np.count_nonzero(knots == u) + 1 > p:
            raise RefinementError(f"inserting {u} would exceed multiplicity {p}")
        knots, Pw = _insert_knot(knots, p, Pw, u)
    return KnotVector(knots, p), Pw


def refine_knots(surf: NurbsSurface, new_knots_s: Sequence[float] = (), new_knots_t: Sequence[float] = ()) -> NurbsSurface:
    """Insert knots in each direction; the geometry is unchanged."""
    if len(new_knots_s) == 0 and len(new_knots_t) == 0:
        return surf
    w = surf.weights[..., None]
    Pw = np.concatenate([surf.control_net * w, w], axis=-1)
    ks, Pw = _refine_axis(surf.knots_s, Pw, new_knots_s)
    kt, Pw_t = _refine_axis(surf.knots_t, np.swapaxes(Pw, 0, 1), new_knots_t)
    Pw = np.swapaxes(Pw_t, 0, 1)
    weights = Pw[..., 3]
    return NurbsSurface(ks, kt, Pw[..., :3] / weights[..., None], weights)


def _uniform_insertions(kv: KnotVector, n_spans: int) -> list[float]:
    lo, hi = kv.domain
    present = set(np.round(kv.breakpoints, 14))
    target = np.linspace(lo, hi, n_spans + 1)[1:-1]
    missing = [float(u) for u in target if round(float(u), 14) not in present]
    if len(present) - 1 + len(missing) != n_spans:
        raise RefinementError(
            f"cannot reach {n_spans} uniform spans from breakpoints {sorted(present)}"
        )
    return missing


def refine_uniform(surf: NurbsSurface, spans_s: int, spans_t: int) -> NurbsSurface:
    """Refine to ``spans_s x spans_t`` uniform knot spans.

    Existing breakpoints must be a subset of the uniform target grid.
    """
    return refine_knots(
        surf,
        _uniform_insertions(surf.knots_s, spans_s),
        _uniform_insertions(surf.knots_t, spans_t),
    )
