"""NURBS density field, Heaviside projection and local volume measures.

The design variables are control coefficients ``rho_ij`` in [0, 1] on a design
basis that shares the mid-surface geometry.  The density at a parameter point
is the rational-basis combination of the coefficients, so it stays in [0, 1].
A smooth Heaviside projection sharpens it towards 0/1 before it enters the
SIMP interpolation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .geometry import surface_from_dict, surface_to_dict
from .splines import NurbsSurface, rational_basis_vec, refine_knots

__all__ = [
    "DensityConfigError",
    "DensityField",
    "LocalVolumeSpec",
    "heaviside",
    "heaviside_deriv",
    "eval_density",
    "design_projection",
    "element_densities",
    "total_volume",
    "mean_element_length",
    "neighborhood_matrix",
    "local_average",
    "aggregate_pmean",
    "refine_field",
    "field_to_dict",
    "field_from_dict",
    "save_field",
    "load_field",
]


class DensityConfigError(ValueError):
    pass


@dataclass
class DensityField:
    """Design coefficients on ``basis`` plus the projection parameters."""

    basis: NurbsSurface
    coefficients: np.ndarray
    tau: float = 2.0
    kappa: float = 0.5

    def __post_init__(self) -> None:
        c = np.asarray(self.coefficients, dtype=float)
        if c.ndim == 1 and c.size == self.basis.shape[0] * self.basis.shape[1]:
            c = c.reshape(self.basis.shape)
        if c.shape != self.basis.shape:
            raise DensityConfigError(f"coefficient grid {c.shape} does not match design basis {self.basis.shape}")
        if not np.all(np.isfinite(c)) or c.min() < 0.0 or c.max() > 1.0:
            raise DensityConfigError("density coefficients must lie in [0, 1]")
        self.coefficients = c
        _check_projection(self.tau, self.kappa)

    @classmethod
    def uniform(cls, basis: NurbsSurface, value: float, tau: float = 2.0, kappa: float = 0.5) -> "DensityField":
        return cls(basis, np.full(basis.shape, float(value)), tau, kappa)

    @property
    def vector(self) -> np.ndarray:
        """Coefficients flattened in control-point order ``i * (n + 1) + j``."""
        return self.coefficients.ravel()

    def with_vector(self, x: np.ndarray, tau: float | None = None) -> "DensityField":
        return DensityField(self.basis, np.asarray(x, float).reshape(self.basis.shape), self.tau if tau is None else tau, self.kappa)


def _check_projection(tau: float, kappa: float) -> None:
    if not tau > 0:
        raise DensityConfigError(f"projection sharpness tau must be positive, got {tau}")
    if not 0.25 <= kappa <= 0.75:
        raise DensityConfigError(f"projection threshold kappa must lie in [0.25, 0.75], got {kappa}")


def heaviside(rho, tau: float, kappa: float = 0.5):
    """Smooth projection ``(tanh(tau/2) + tanh(tau (rho - kappa))) / (2 tanh(tau/2))``.

    Maps 0 to 0 and 1 to 1 exactly only for ``kappa = 0.5``; it is strictly
    increasing for every admissible ``tau`` and ``kappa``.
    """
    if not tau > 0:
        raise DensityConfigError(f"projection sharpness tau must be positive, got {tau}")
    th = np.tanh(0.5 * tau)
    return (th + np.tanh(tau * (np.asarray(rho, dtype=float) - kappa))) / (2.0 * th)


def heaviside_deriv(rho, tau: float, kappa: float = 0.5):
    """Derivative ``tau sech^2(tau (rho - kappa)) / (2 tanh(tau/2))``."""
    if not tau > 0:
        raise DensityConfigError(f"projection sharpness tau must be positive, got {tau}")
    ch = np.cosh(tau * (np.asarray(rho, dtype=float) - kappa))
    return tau / (ch * ch * 2.0 * np.tanh(0.5 * tau))


def eval_density(fld: DensityField, s, t):
    """Unprojected density ``sum R_ij rho_ij`` at parameter points."""
    scalar = np.ndim(s) == 0 and np.ndim(t) == 0
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    b = rational_basis_vec(fld.basis, s_arr, t_arr, 0)
    val = np.sum(b.R * fld.vector[b.index], axis=1)
    return float(val[0]) if scalar else val


def design_projection(basis: NurbsSurface, points: np.ndarray) -> sp.csr_matrix:
    """Sparse matrix ``P`` with ``P[k, ij] = R_ij(points[k])``.

    ``P @ rho`` gives the unprojected density at each point; the same matrix
    carries the basis factor of the chain rule back to the coefficients.
    """
    pts = np.asarray(points, dtype=float)
    b = rational_basis_vec(basis, pts[:, 0], pts[:, 1], 0)
    n_pts, nloc = b.R.shape
    rows = np.repeat(np.arange(n_pts), nloc)
    n_basis = basis.shape[0] * basis.shape[1]
    P = sp.csr_matrix((b.R.ravel(), (rows, b.index.ravel())), shape=(n_pts, n_basis))
    P.sum_duplicates()
    P.sort_indices()
    return P


def element_densities(fld: DensityField, centers: np.ndarray, P: sp.csr_matrix | None = None) -> np.ndarray:
    """Projected densities ``H(rho(center_e))`` at analysis element centers."""
    if P is None:
        P = design_projection(fld.basis, centers)
    return heaviside(P @ fld.vector, fld.tau, fld.kappa)


def total_volume(rho_e: np.ndarray, Ve0: np.ndarray) -> float:
    """Material volume ``sum_e V_e^0 rho_e`` from solid element volumes."""
    return float(np.dot(Ve0, rho_e))


# --------------------------------------------------------------------------
# local volume


@dataclass(frozen=True)
class LocalVolumeSpec:
    """Neighborhood radius multiplier, local bound and aggregation exponent."""

    radius: float
    alpha: float
    gamma: float = 16.0

    def __post_init__(self) -> None:
        if not self.radius > 0:
            raise DensityConfigError(f"neighborhood radius multiplier must be positive, got {self.radius}")
        if not 0 < self.alpha < 1:
            raise DensityConfigError(f"local volume bound alpha must lie in (0, 1), got {self.alpha}")
        if not self.gamma > 0:
            raise DensityConfigError(f"aggregation exponent gamma must be positive, got {self.gamma}")


def mean_element_length(areas: np.ndarray) -> float:
    """Average element length, taken as the mean of sqrt(mid-surface area)."""
    return float(np.mean(np.sqrt(areas)))


def neighborhood_matrix(centroids: np.ndarray, Ve0: np.ndarray, radius: float) -> sp.csr_matrix:
    """Row-normalised averaging matrix over the ball ``|x_e - x_f| <= radius``.

    Row ``e`` holds ``V_f / sum_{f in N_e} V_f`` for every ``f`` in the
    neighborhood of ``e``; every element belongs to its own neighborhood.
    """
    tree = cKDTree(centroids)
    # relative slack so that lattice-exact distances are included reliably
    lists = tree.query_ball_point(centroids, r=radius * (1.0 + 1e-9), return_sorted=True)
    counts = np.fromiter((len(x) for x in lists), dtype=np.int64, count=len(lists))
    cols = np.concatenate([np.asarray(x, dtype=np.int64) for x in lists])
    rows = np.repeat(np.arange(len(lists)), counts)
    w = Ve0[cols]
    sums = np.bincount(rows, weights=w, minlength=len(lists))
    W = sp.csr_matrix((w / sums[rows], (rows, cols)), shape=(len(lists), len(lists)))
    W.sort_indices()
    return W


def local_average(rho_e: np.ndarray, W: sp.csr_matrix) -> np.ndarray:
    """Neighborhood-averaged densities ``rho_bar = W rho``."""
    return W @ np.asarray(rho_e, dtype=float)


def aggregate_pmean(rho_bar: np.ndarray, gamma: float) -> float:
    """Power mean ``((1/N) sum rho_bar**gamma)**(1/gamma)``.

    Evaluated relative to the maximum to avoid underflow at large ``gamma``.
    """
    if not gamma > 0:
        raise DensityConfigError(f"aggregation exponent gamma must be positive, got {gamma}")
    x = np.asarray(rho_bar, dtype=float)
    if np.any(x < 0):
        raise ValueError("power mean needs non-negative values")
    top = x.max()
    if top == 0.0:
        return 0.0
    return float(top * np.mean((x / top) ** gamma) ** (1.0 / gamma))


# --------------------------------------------------------------------------
# refinement and persistence


def refine_field(fld: DensityField, new_knots_s=(), new_knots_t=()) -> DensityField:
    """Insert knots into the design basis without changing the density function.

    The coefficients are refined as an extra coordinate in homogeneous space,
    exactly like control points, so the rational density is preserved.
    """
    basis = refine_knots(fld.basis, new_knots_s, new_knots_t)
    carrier = np.zeros(fld.basis.control_net.shape)
    carrier[..., 0] = fld.coefficients
    aux = NurbsSurface(fld.basis.knots_s, fld.basis.knots_t, carrier, fld.basis.weights)
    coef = refine_knots(aux, new_knots_s, new_knots_t).control_net[..., 0]
    return DensityField(basis, np.clip(coef, 0.0, 1.0), fld.tau, fld.kappa)


def field_to_dict(fld: DensityField) -> dict:
    return {
        "basis": surface_to_dict(fld.basis),
        "coefficients": fld.coefficients.tolist(),
        "tau": fld.tau,
        "kappa": fld.kappa,
    }


def field_from_dict(d: dict) -> DensityField:
    missing = {"basis", "coefficients"} - set(d)
    if missing:
        raise DensityConfigError(f"density field missing keys {sorted(missing)}")
    extra = set(d) - {"basis", "coefficients", "tau", "kappa", "meta"}
    if extra:
        raise DensityConfigError(f"unknown density field keys {sorted(extra)}")
    return DensityField(
        surface_from_dict(d["basis"]),
        np.asarray(d["coefficients"], dtype=float),
        float(d.get("tau", 2.0)),
        float(d.get("kappa", 0.5)),
    )


def save_field(fld: DensityField, path: str | Path, meta: dict | None = None) -> None:
    d = field_to_dict(fld)
    if meta is not None:
        d["meta"] = meta
    with open(path, "w") as fh:
        json.dump(d, fh)


def load_field(path: str | Path) -> DensityField:
    with open(path) as fh:
        return field_from_dict(json.load(fh))
