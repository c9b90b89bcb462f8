"""Boundary extraction and fairing of an optimised density field.

The projected density is sampled on a uniform parametric grid, the 0.5
iso-contours are extracted with marching squares and chained into ordered
point sequences, and every sequence is approximated by a cubic B-spline that
balances the least-squares residual against its bending energy

    sum_l |Z(eta_l) - Q_l|^2 + lam * int |Z''(xi)|^2 dxi.

Closed loops use a periodic uniform cubic; open paths (ending on the domain
boundary) a clamped uniform cubic.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .density import DensityField, eval_density, heaviside
from .splines import basis_derivs_vec, surface_derivs_vec, uniform_knots

log = logging.getLogger(__name__)

__all__ = [
    "FairingError",
    "FairingConfig",
    "DensityGrid",
    "Contour",
    "FairCurve",
    "ContourCurve",
    "sample_grid",
    "marching_squares",
    "centripetal_params",
    "fit_fair_bspline",
    "fairing_matrix",
    "default_n_ctrl",
    "fair_boundaries",
    "point_curve_distances",
    "inside_closed_curve",
    "curves_to_dict",
    "write_curves_json",
    "write_svg",
]


class FairingError(ValueError):
    pass


@dataclass(frozen=True)
class FairingConfig:
    resolution: tuple[int, int] = (200, 200)
    lam: float = 0.01
    iso: float = 0.5
    min_points: int = 8
    n_ctrl: int | None = None
    samples: int = 200
    kind: str = "span_integral"

    def __post_init__(self) -> None:
        if min(self.resolution) < 2:
            raise FairingError("grid resolution must be at least 2 in each direction")
        if self.lam < 0:
            raise FairingError("fairing weight must be non-negative")
        if self.min_points < 2:
            raise FairingError("min_points must be >= 2")
        if self.kind not in FAIRING_KINDS:
            raise FairingError(f"fairing kind must be one of {FAIRING_KINDS}, got {self.kind!r}")


# --------------------------------------------------------------------------
# sampling and contour extraction


@dataclass
class DensityGrid:
    s: np.ndarray
    t: np.ndarray
    values: np.ndarray  # (len(s), len(t))

    @property
    def spacing(self) -> float:
        return float(max(np.diff(self.s).max(), np.diff(self.t).max()))


def sample_grid(fld: DensityField, tau: float | None = None, kappa: float | None = None, resolution=(200, 200)) -> DensityGrid:
    """Projected density at the ``(G_s + 1) x (G_t + 1)`` uniform parametric nodes."""
    gs, gt = (int(r) for r in resolution)
    if gs < 2 or gt < 2:
        raise FairingError("grid resolution must be at least 2 in each direction")
    tau = fld.tau if tau is None else tau
    kappa = fld.kappa if kappa is None else kappa
    (s0, s1), (t0, t1) = fld.basis.domain
    s = np.linspace(s0, s1, gs + 1)
    t = np.linspace(t0, t1, gt + 1)
    S, T = np.meshgrid(s, t, indexing="ij")
    raw = eval_density(fld, S.ravel(), T.ravel()).reshape(S.shape)
    return DensityGrid(s, t, heaviside(raw, tau, kappa))


@dataclass
class Contour:
    points: np.ndarray  # (k, 2) parametric points
    closed: bool


# corner bits: a=(i,j) 1, b=(i+1,j) 2, c=(i+1,j+1) 4, d=(i,j+1) 8
# local edges: 0 = a-b, 1 = b-c, 2 = d-c, 3 = a-d


def _cell_segments(case: int, center_above: bool) -> list[tuple[int, int]]:
    if case in (0, 15):
        return []
    if case == 5:  # a, c above
        return [(0, 1), (2, 3)] if center_above else [(3, 0), (1, 2)]
    if case == 10:  # b, d above
        return [(3, 0), (1, 2)] if center_above else [(0, 1), (2, 3)]
    edges = [e for e, (u, v) in enumerate(((0, 1), (1, 2), (3, 2), (0, 3))) if ((case >> u) & 1) != ((case >> v) & 1)]
    return [tuple(edges)]


def marching_squares(grid: DensityGrid, iso: float = 0.5) -> list[Contour]:
    """Iso-contours as ordered point sequences.

    Segments from the 16-case table (saddles resolved by the cell-center
    average) are chained through shared grid edges.  Chains that reach the
    domain boundary become open paths; all others close into loops.  Node
    values equal to ``iso`` are nudged up by 1e-9.
    """
    v = np.where(grid.values == iso, iso + 1e-9, grid.values)
    if not np.all(np.isfinite(v)):
        raise FairingError("density grid contains non-finite values")
    above = v > iso
    ns, nt = v.shape
    case = (
        above[:-1, :-1] * 1 + above[1:, :-1] * 2 + above[1:, 1:] * 4 + above[:-1, 1:] * 8
    ).astype(np.int64)
    center = 0.25 * (v[:-1, :-1] + v[1:, :-1] + v[1:, 1:] + v[:-1, 1:]) > iso

    def edge_key(i: int, j: int, e: int) -> tuple[int, int, int]:
        # global edge ids: (0, i, j) runs along s from node (i, j); (1, i, j) along t
        return {0: (0, i, j), 1: (1, i + 1, j), 2: (0, i, j + 1), 3: (1, i, j)}[e]

    def edge_point(key: tuple[int, int, int]) -> np.ndarray:
        d, i, j = key
        i2, j2 = (i + 1, j) if d == 0 else (i, j + 1)
        w = (iso - v[i, j]) / (v[i2, j2] - v[i, j])
        return np.array([grid.s[i] + w * (grid.s[i2] - grid.s[i]), grid.t[j] + w * (grid.t[j2] - grid.t[j])])

    adj: dict[tuple, list[tuple]] = {}
    for i, j in zip(*np.nonzero((case != 0) & (case != 15))):
        for e1, e2 in _cell_segments(int(case[i, j]), bool(center[i, j])):
            k1, k2 = edge_key(i, j, e1), edge_key(i, j, e2)
            adj.setdefault(k1, []).append(k2)
            adj.setdefault(k2, []).append(k1)

    def on_boundary(key: tuple[int, int, int]) -> bool:
        d, i, j = key
        return (d == 0 and j in (0, nt - 1)) or (d == 1 and i in (0, ns - 1))

    seen: set[tuple] = set()
    out: list[Contour] = []

    def walk(start: tuple) -> list[tuple]:
        chain = [start]
        seen.add(start)
        cur = start
        while True:
            nxt = [k for k in adj[cur] if k not in seen]
            if not nxt:
                return chain
            cur = nxt[0]
            seen.add(cur)
            chain.append(cur)

    for key in sorted(k for k in adj if on_boundary(k)):
        if key not in seen:
            chain = walk(key)
            out.append(Contour(np.array([edge_point(k) for k in chain]), False))
    for key in sorted(adj):
        if key not in seen:
            chain = walk(key)
            out.append(Contour(np.array([edge_point(k) for k in chain]), True))
    return out


# --------------------------------------------------------------------------
# fitting


def _dedupe(points: np.ndarray, closed: bool) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    keep = np.ones(len(pts), bool)
    keep[1:] = np.any(pts[1:] != pts[:-1], axis=1)
    pts = pts[keep]
    if closed and len(pts) > 1 and np.all(pts[0] == pts[-1]):
        pts = pts[:-1]
    return pts


def centripetal_params(points: np.ndarray, closed: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Parameters with increments proportional to sqrt(chord length).

    Repeated consecutive points are dropped first; returns ``(points, eta)``.
    Open sequences get ``eta`` from 0 to 1; closed loops include the closing
    chord, so ``eta`` runs over ``[0, 1)``.
    """
    pts = _dedupe(points, closed)
    if len(pts) < 2:
        raise FairingError("need at least two distinct points")
    seq = np.vstack([pts, pts[:1]]) if closed else pts
    d = np.sqrt(np.linalg.norm(np.diff(seq, axis=0), axis=1))
    cum = np.concatenate([[0.0], np.cumsum(d)])
    eta = cum / cum[-1]
    return pts, (eta[:-1] if closed else eta)


def default_n_ctrl(n_points: int) -> int:
    """``b = max(8, round(c / 4))`` for ``c + 1`` data points."""
    return max(8, int(round((n_points - 1) / 4)))


_G2 = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])


def _uniform_cubic(u: np.ndarray, deriv: int) -> np.ndarray:
    """The four uniform cubic B-spline pieces (or derivatives) at local ``u`` in [0, 1]."""
    u = np.asarray(u, dtype=float)[:, None]
    if deriv == 0:
        return np.hstack([(1 - u) ** 3, 3 * u**3 - 6 * u**2 + 4, -3 * u**3 + 3 * u**2 + 3 * u + 1, u**3]) / 6.0
    if deriv == 1:
        return np.hstack([-3 * (1 - u) ** 2, 9 * u**2 - 12 * u, -9 * u**2 + 6 * u + 3, 3 * u**2]) / 6.0
    if deriv == 2:
        return np.hstack([6 * (1 - u), 18 * u - 12, -18 * u + 6, 6 * u]) / 6.0
    raise ValueError("deriv must be 0, 1 or 2")


@dataclass
class FairCurve:
    """Cubic B-spline; ``control_points`` lists the ``b + 1`` points (wrapped for closed curves)."""

    control_points: np.ndarray
    closed: bool

    @property
    def n_ctrl(self) -> int:
        return len(self.control_points)

    @property
    def n_spans(self) -> int:
        return self.n_ctrl - 3

    @property
    def knots(self) -> np.ndarray:
        m = self.n_spans
        if self.closed:
            # unclamped uniform knots xi_k = (k - 3) / m, domain [0, 1]
            return (np.arange(self.n_ctrl + 4) - 3.0) / m
        return uniform_knots(m, 3).knots

    def basis_matrix(self, xi: np.ndarray, deriv: int = 0) -> np.ndarray:
        """Dense ``(len(xi), b + 1)`` matrix of basis values (or derivatives)."""
        xi = np.asarray(xi, dtype=float)
        m = self.n_spans
        A = np.zeros((xi.size, self.n_ctrl))
        if self.closed:
            x = np.mod(xi, 1.0) * m
            span = np.minimum(np.floor(x).astype(np.int64), m - 1)
            vals = _uniform_cubic(x - span, deriv) * float(m) ** deriv
            cols = span[:, None] + np.arange(4)
        else:
            spans, ders = basis_derivs_vec(uniform_knots(m, 3), np.clip(xi, 0.0, 1.0), deriv)
            vals = ders[:, deriv, :]
            cols = spans[:, None] - 3 + np.arange(4)
        np.add.at(A, (np.repeat(np.arange(xi.size), 4), cols.ravel()), vals.ravel())
        return A

    def evaluate(self, xi: np.ndarray, deriv: int = 0) -> np.ndarray:
        return self.basis_matrix(xi, deriv) @ self.control_points

    def bending_energy(self, kind: str = "exact") -> float:
        """Fairing term of the control polygon; see :func:`fairing_matrix` for ``kind``."""
        M = fairing_matrix(self.n_ctrl, self.closed, kind)
        return float(np.sum(M * (self.control_points @ self.control_points.T)))


FAIRING_KINDS = ("span_integral", "exact")


def fairing_matrix(n_ctrl: int, closed: bool, kind: str = "span_integral") -> np.ndarray:
    """Matrix ``M`` with fairing term ``trace(P^T M P)``, from two-point Gauss per span.

    ``'exact'`` integrates ``|Z''|^2`` (exact for cubics).  ``'span_integral'``
    sums, per span, the square of the Gauss approximation of ``int Z''``,
    i.e. ``[(h/2)(Z''(g1) + Z''(g2))]^2`` with unit Gauss weights; it weighs
    bending by roughly one span length less than the exact energy.
    """
    c = FairCurve(np.zeros((n_ctrl, 2)), closed)
    m = c.n_spans
    h = 1.0 / m
    xi = ((np.arange(m)[:, None] + _G2[None, :]) * h).ravel()
    B2 = c.basis_matrix(xi, 2)
    if kind == "exact":
        w = np.full(xi.size, 0.5 * h)
        return B2.T @ (w[:, None] * B2)
    if kind == "span_integral":
        G = 0.5 * h * (B2[0::2] + B2[1::2])
        return G.T @ G
    raise FairingError(f"fairing kind must be one of {FAIRING_KINDS}, got {kind!r}")


def _wrap(n_free: int) -> np.ndarray:
    """Map ``n_free + 3`` wrapped control points onto ``n_free`` free ones."""
    T = np.zeros((n_free + 3, n_free))
    T[np.arange(n_free + 3), np.arange(n_free + 3) % n_free] = 1.0
    return T


def fit_fair_bspline(
    points: np.ndarray, eta: np.ndarray, b: int, lam: float, closed: bool = False, kind: str = "span_integral"
) -> FairCurve:
    """Least-squares cubic B-spline with ``b + 1`` control points and a bending penalty.

    Solves the normal equations ``(A^T A + lam M) P = A^T Q`` where ``A`` holds
    the basis values at ``eta`` and ``M`` is the fairing matrix of ``kind``.
    For closed curves the last three control points are tied to the first
    three.
    """
    Q = np.asarray(points, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if lam < 0:
        raise FairingError("fairing weight must be non-negative")
    if b < 3 + (3 if closed else 0):
        raise FairingError(f"too few control points (b = {b})")
    if not closed and b > len(Q) - 1:
        raise FairingError(f"b + 1 = {b + 1} control points exceed {len(Q)} data points")
    proto = FairCurve(np.zeros((b + 1, Q.shape[1])), closed)
    A = proto.basis_matrix(eta)
    M = fairing_matrix(b + 1, closed, kind)
    T = _wrap(b - 2) if closed else np.eye(b + 1)
    At = A @ T
    N = At.T @ At + lam * (T.T @ M @ T)
    rhs = At.T @ Q
    try:
        cf = sla.cho_factor(N)
    except np.linalg.LinAlgError:
        raise FairingError(f"normal matrix is singular for b = {b}; use fewer control points") from None
    free = sla.cho_solve(cf, rhs)
    return FairCurve(T @ free, closed)


# --------------------------------------------------------------------------
# algorithm driver


@dataclass
class ContourCurve:
    points: np.ndarray
    closed: bool
    params: np.ndarray
    curve: FairCurve
    physical: np.ndarray = field(repr=False)

    def residual_rms(self) -> float:
        return float(np.sqrt(np.mean(point_curve_distances(self.curve, self.points) ** 2)))


def point_curve_distances(curve: FairCurve, points: np.ndarray, samples: int = 4000) -> np.ndarray:
    """Distance from each point to the curve, by dense sampling plus local refinement."""
    xi = np.linspace(0.0, 1.0, samples + 1)
    C = curve.evaluate(xi)
    pts = np.asarray(points, dtype=float)
    d2 = ((pts[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)
    k = d2.argmin(axis=1)
    # refine with a few Newton steps on the squared distance
    u = xi[k]
    h = 1.0 / samples
    for _ in range(5):
        Z, Z1, Z2 = (curve.evaluate(u, d) for d in (0, 1, 2))
        r = Z - pts
        g = (r * Z1).sum(axis=1)
        H = (Z1 * Z1).sum(axis=1) + (r * Z2).sum(axis=1)
        step = np.where(H > 0, -g / np.where(H > 0, H, 1.0), 0.0)
        u = np.clip(u + np.clip(step, -h, h), xi[np.maximum(k - 1, 0)], xi[np.minimum(k + 1, samples)])
    dist = np.linalg.norm(curve.evaluate(u) - pts, axis=1)
    return np.minimum(dist, np.sqrt(d2[np.arange(len(pts)), k]))


def fair_boundaries(fld: DensityField, cfg: FairingConfig | None = None, tau: float | None = None) -> tuple[DensityGrid, list[ContourCurve]]:
    """Grid sampling, contour extraction and fairing of every contour.

    Contours with fewer than ``min_points`` points are dropped as noise.  Each
    fitted curve is also mapped to the mid-surface as a polyline.
    """
    cfg = cfg or FairingConfig()
    grid = sample_grid(fld, tau, None, cfg.resolution)
    curves = []
    for c in marching_squares(grid, cfg.iso):
        pts, eta = centripetal_params(c.points, c.closed)
        if len(pts) < cfg.min_points:
            log.debug("dropped contour with %d points", len(pts))
            continue
        b = cfg.n_ctrl or default_n_ctrl(len(pts))
        if not c.closed:
            b = min(b, len(pts) - 1)
        fit = fit_fair_bspline(pts, eta, b, cfg.lam, c.closed, cfg.kind)
        xi = np.linspace(0.0, 1.0, cfg.samples)
        uv = fit.evaluate(xi)
        (s0, s1), (t0, t1) = fld.basis.domain
        S, _, _ = surface_derivs_vec(fld.basis, np.clip(uv[:, 0], s0, s1), np.clip(uv[:, 1], t0, t1))
        curves.append(ContourCurve(pts, c.closed, eta, fit, S))
    return grid, curves


def inside_closed_curve(curve: FairCurve, points: np.ndarray, samples: int = 400) -> np.ndarray:
    """Even-odd test of parametric points against a closed fitted curve."""
    if not curve.closed:
        raise FairingError("region test needs a closed curve")
    poly = curve.evaluate(np.linspace(0.0, 1.0, samples, endpoint=False))
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    x, y = pts[:, 0:1], pts[:, 1:2]
    x0, y0 = poly[:, 0], poly[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    crosses = (y0 > y) != (y1 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xc = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
    return np.count_nonzero(crosses & (x < xc), axis=1) % 2 == 1


# --------------------------------------------------------------------------
# outputs


def curves_to_dict(curves: Sequence[ContourCurve], meta: dict | None = None) -> dict:
    d = {
        "curves": [
            {
                "closed": c.closed,
                "degree": 3,
                "knots": c.curve.knots.tolist(),
                "control_points": c.curve.control_points.tolist(),
                "n_data_points": int(len(c.points)),
                "physical_polyline": c.physical.tolist(),
            }
            for c in curves
        ]
    }
    if meta is not None:
        d["meta"] = meta
    return d


def write_curves_json(path: str | Path, curves: Sequence[ContourCurve], meta: dict | None = None) -> None:
    Path(path).write_text(json.dumps(curves_to_dict(curves, meta)))


def write_svg(path: str | Path, grid: DensityGrid, curves: Sequence[ContourCurve], size: int = 600, samples: int = 400) -> None:
    """Parametric-domain picture: extracted points in grey, faired curves in red."""
    s0, s1, t0, t1 = grid.s[0], grid.s[-1], grid.t[0], grid.t[-1]

    def xy(p: np.ndarray) -> str:
        X = (p[:, 0] - s0) / (s1 - s0) * size
        Y = (1.0 - (p[:, 1] - t0) / (t1 - t0)) * size
        return " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(X, Y))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white" stroke="black"/>',
    ]
    for c in curves:
        tag = "polygon" if c.closed else "polyline"
        parts.append(f'<{tag} points="{xy(c.points)}" fill="none" stroke="#999" stroke-width="1"/>')
        fit = c.curve.evaluate(np.linspace(0.0, 1.0, samples))
        parts.append(f'<polyline points="{xy(fit)}" fill="none" stroke="#c00" stroke-width="1.5"/>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
