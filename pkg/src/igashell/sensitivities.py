"""Adjoint gradients with respect to the design coefficients.

All three gradients share the same chain

    rho_ij  --P-->  rho(center_e)  --H-->  rho_tilde_e  --> response

where ``P`` holds the design-basis functions at the analysis element centers.
Compliance is self-adjoint, so its adjoint vector is ``U`` itself.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .analysis import AnalysisModel
from .density import aggregate_pmean, heaviside, heaviside_deriv

__all__ = [
    "compliance_gradient",
    "volume_gradient",
    "local_volume_gradient",
    "FDReport",
    "fd_gradient_check",
    "write_gradient_csv",
]


def _raw_and_slope(P: sp.csr_matrix, x: np.ndarray, tau: float, kappa: float) -> tuple[np.ndarray, np.ndarray]:
    raw = P @ x
    return heaviside(raw, tau, kappa), heaviside_deriv(raw, tau, kappa)


def compliance_gradient(
    model: AnalysisModel, U: np.ndarray, P: sp.csr_matrix, x: np.ndarray, tau: float, kappa: float = 0.5
) -> np.ndarray:
    """``dC/drho_ij = -sum_e U_e^T dK_e/drho_ij U_e``.

    ``U`` must be the equilibrium solution for the densities obtained from
    ``x``; a stale ``U`` is not detected.
    """
    rho_e, slope = _raw_and_slope(P, x, tau, kappa)
    mat = model.mat
    dscale = mat.penal * np.power(rho_e, mat.penal - 1.0) * (1.0 - mat.stiffness_floor)
    dC_drho = -dscale * model.element_energies(U)
    return P.T @ (dC_drho * slope)


def volume_gradient(Ve0: np.ndarray, P: sp.csr_matrix, x: np.ndarray, tau: float, kappa: float = 0.5) -> np.ndarray:
    """``dV/drho_ij = sum_e V_e^0 H'(rho_e) R_ij(center_e)``."""
    _, slope = _raw_and_slope(P, x, tau, kappa)
    return P.T @ (Ve0 * slope)


def local_volume_gradient(
    W: sp.csr_matrix, P: sp.csr_matrix, x: np.ndarray, tau: float, kappa: float, gamma: float
) -> tuple[float, np.ndarray]:
    """Aggregated local volume ``V_bar`` and its gradient.

    ``W`` is the neighborhood averaging matrix.  Returns ``(V_bar, dV_bar/drho)``;
    the gradient is defined as zero when every density vanishes.
    """
    rho_e, slope = _raw_and_slope(P, x, tau, kappa)
    rho_bar = W @ rho_e
    vbar = aggregate_pmean(rho_bar, gamma)
    if vbar == 0.0:
        return 0.0, np.zeros(P.shape[1])
    # d vbar / d rho_bar_e = (1/N) (rho_bar_e / vbar)^(gamma - 1)
    dv_dbar = (rho_bar / vbar) ** (gamma - 1.0) / rho_bar.size
    return vbar, P.T @ ((W.T @ dv_dbar) * slope)


@dataclass
class FDReport:
    indices: np.ndarray
    analytic: np.ndarray
    finite_diff: np.ndarray

    @property
    def rel_errors(self) -> np.ndarray:
        den = np.maximum(np.abs(self.analytic), np.abs(self.finite_diff))
        diff = np.abs(self.analytic - self.finite_diff)
        return np.divide(diff, den, out=np.zeros_like(diff), where=den > 0)

    @property
    def max_rel_error(self) -> float:
        return float(self.rel_errors.max()) if self.indices.size else 0.0


def fd_gradient_check(
    fun: Callable[[np.ndarray], float],
    x: np.ndarray,
    grad: np.ndarray,
    indices: Sequence[int],
    step: float = 1e-5,
) -> FDReport:
    """Compare ``grad`` with central differences of ``fun`` at ``indices``.

    Entries where both values are exactly zero count as a match.
    """
    x = np.asarray(x, dtype=float)
    idx = np.asarray(indices, dtype=np.int64)
    fd = np.empty(idx.size)
    for k, i in enumerate(idx):
        xp = x.copy()
        xm = x.copy()
        xp[i] += step
        xm[i] -= step
        fd[k] = (fun(xp) - fun(xm)) / (2.0 * step)
    return FDReport(idx, np.asarray(grad, dtype=float)[idx], fd)


def write_gradient_csv(path: str | Path, shape: tuple[int, int], grads: dict[str, np.ndarray]) -> None:
    """One row per coefficient ``(i, j)`` with a column per named gradient."""
    names = list(grads)
    cols = [np.asarray(grads[n], dtype=float).ravel() for n in names]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", *names])
        for k in range(shape[0] * shape[1]):
            w.writerow([k // shape[1], k % shape[1], *(repr(float(c[k])) for c in cols)])
