"""Method of Moving Asymptotes for one objective and one inequality constraint.

Each update builds the convex separable approximation

    f~(x) = r + sum_i p_i / (U_i - x_i) + q_i / (x_i - L_i)

of the objective and of the constraint around the current point, adds an
elastic variable ``y >= 0`` to the constraint (``g~(x) - y <= 0``, penalised by
``c y + d y^2 / 2``) so the subproblem is always feasible, and solves it
through its one-dimensional concave dual.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

__all__ = [
    "MmaConfigError",
    "MmaConfig",
    "MmaState",
    "Subproblem",
    "build_subproblem",
    "mma_update",
    "constraint_wrap",
]


class MmaConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MmaConfig:
    move: float = 0.1
    asyinit: float = 0.1
    asyincr: float = 1.1
    asydecr: float = 0.7
    albefa: float = 0.1
    raa0: float = 1e-5
    asymin: float = 1e-3
    asymax: float = 10.0
    c: float = 1000.0
    d: float = 1.0
    max_inner_tolerance: float = 1e-9

    def __post_init__(self) -> None:
        if not 0 < self.move <= 1:
            raise MmaConfigError(f"move must lie in (0, 1], got {self.move}")
        if not 0 < self.asyinit <= 1:
            raise MmaConfigError(f"asyinit must lie in (0, 1], got {self.asyinit}")
        if not self.asydecr < 1 < self.asyincr:
            raise MmaConfigError(f"need asydecr < 1 < asyincr, got {self.asydecr}, {self.asyincr}")
        if not 0 < self.asydecr:
            raise MmaConfigError("asydecr must be positive")
        if not 0 < self.asymin < self.asyinit <= self.asymax:
            raise MmaConfigError("need 0 < asymin < asyinit <= asymax")
        if not 0 < self.albefa < 1:
            raise MmaConfigError("albefa must lie in (0, 1)")
        if self.c <= 0 or self.d < 0 or self.raa0 <= 0 or self.max_inner_tolerance <= 0:
            raise MmaConfigError("c, raa0 and max_inner_tolerance must be positive, d non-negative")


@dataclass
class MmaState:
    """History needed for asymptote adaptation."""

    x_prev: np.ndarray | None = None
    x_prev2: np.ndarray | None = None
    low: np.ndarray | None = None
    upp: np.ndarray | None = None
    iteration: int = 0


@dataclass
class Subproblem:
    """Convex separable approximation with its move-limited box ``[alpha, beta]``."""

    low: np.ndarray
    upp: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    p0: np.ndarray
    q0: np.ndarray
    p1: np.ndarray
    q1: np.ndarray
    r1: float
    c: float
    d: float
    tol: float = 1e-9
    lam: float = field(default=0.0, init=False)

    def objective(self, x: np.ndarray) -> np.ndarray:
        """Approximate objective (without its constant) for points ``x`` of shape ``(..., n)``."""
        return np.sum(self.p0 / (self.upp - x) + self.q0 / (x - self.low), axis=-1)

    def constraint(self, x: np.ndarray) -> np.ndarray:
        return self.r1 + np.sum(self.p1 / (self.upp - x) + self.q1 / (x - self.low), axis=-1)

    def penalised(self, x: np.ndarray) -> np.ndarray:
        """Objective with the optimal elastic variable eliminated."""
        y = np.maximum(self.constraint(x), 0.0)
        if self.d > 0:
            # for fixed x the best y minimises c y + d y^2/2 subject to y >= g~(x)
            return self.objective(x) + self.c * y + 0.5 * self.d * y * y
        return self.objective(x) + self.c * y

    def x_of(self, lam: float) -> np.ndarray:
        """Minimiser of the Lagrangian over the box for multiplier ``lam``."""
        P = self.p0 + lam * self.p1
        Q = self.q0 + lam * self.q1
        sp_, sq = np.sqrt(P), np.sqrt(Q)
        x = (sp_ * self.low + sq * self.upp) / (sp_ + sq)
        return np.clip(x, self.alpha, self.beta)

    def _y_of(self, lam: float) -> float:
        if self.d > 0:
            return max(0.0, (lam - self.c) / self.d)
        return 0.0 if lam <= self.c else np.inf

    def dual_slope(self, lam: float) -> float:
        """Derivative of the dual function, ``g~(x(lam)) - y(lam)``; non-increasing in ``lam``."""
        return float(self.constraint(self.x_of(lam))) - self._y_of(lam)

    def solve(self) -> np.ndarray:
        """Maximise the dual by bisection on the single multiplier."""
        if self.dual_slope(0.0) <= 0.0:
            self.lam = 0.0
            return self.x_of(0.0)
        lo, hi = 0.0, 1.0
        while self.dual_slope(hi) > 0.0:
            lo, hi = hi, 2.0 * hi
            if hi > 1e30:
                raise FloatingPointError("dual multiplier diverged")
        while hi - lo > self.tol * max(1.0, hi):
            mid = 0.5 * (lo + hi)
            if self.dual_slope(mid) > 0.0:
                lo = mid
            else:
                hi = mid
        self.lam = 0.5 * (lo + hi)
        return self.x_of(self.lam)


def _asymptotes(x: np.ndarray, state: MmaState, cfg: MmaConfig, width: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if state.iteration <= 2 or state.x_prev2 is None:
        return x - cfg.asyinit * width, x + cfg.asyinit * width
    sign = (x - state.x_prev) * (state.x_prev - state.x_prev2)
    factor = np.ones_like(x)
    factor[sign > 0] = cfg.asyincr
    factor[sign < 0] = cfg.asydecr
    low = x - factor * (state.x_prev - state.low)
    upp = x + factor * (state.upp - state.x_prev)
    # a wide lower gap would lock gradient-only steps into a fixed-size 2-cycle
    low = np.clip(low, x - cfg.asymax * width, x - cfg.asymin * width)
    upp = np.clip(upp, x + cfg.asymin * width, x + cfg.asymax * width)
    return low, upp


def build_subproblem(
    x: np.ndarray,
    df0: np.ndarray,
    g: float,
    dg: np.ndarray,
    low: np.ndarray,
    upp: np.ndarray,
    cfg: MmaConfig,
    xmin: np.ndarray | float = 0.0,
    xmax: np.ndarray | float = 1.0,
) -> Subproblem:
    """Approximation of objective and constraint around ``x`` for given asymptotes."""
    xmin = np.broadcast_to(np.asarray(xmin, float), x.shape)
    xmax = np.broadcast_to(np.asarray(xmax, float), x.shape)
    width = np.maximum(xmax - xmin, 1e-5)
    alpha = np.maximum.reduce([low + cfg.albefa * (x - low), x - cfg.move * width, xmin])
    beta = np.minimum.reduce([upp - cfg.albefa * (upp - x), x + cfg.move * width, xmax])
    ux2 = (upp - x) ** 2
    xl2 = (x - low) ** 2
    reg = cfg.raa0 / width

    def pq(df: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        pos, neg = np.maximum(df, 0.0), np.maximum(-df, 0.0)
        p = (1.001 * pos + 0.001 * neg + reg) * ux2
        q = (0.001 * pos + 1.001 * neg + reg) * xl2
        return p, q

    p0, q0 = pq(df0)
    p1, q1 = pq(dg)
    r1 = g - float(np.sum(p1 / (upp - x) + q1 / (x - low)))
    return Subproblem(low, upp, alpha, beta, p0, q0, p1, q1, r1, cfg.c, cfg.d, cfg.max_inner_tolerance)


def mma_update(
    x: np.ndarray,
    f0: float,
    df0: np.ndarray,
    g: float,
    dg: np.ndarray,
    state: MmaState,
    cfg: MmaConfig | None = None,
) -> np.ndarray:
    """One MMA step on the box [0, 1]; updates ``state`` in place and returns the new point.

    ``g`` is the constraint value in the form ``g <= 0``.  ``f0`` does not
    enter the step (only its gradient does) and is accepted for logging.
    """
    cfg = cfg or MmaConfig()
    x = np.asarray(x, dtype=float)
    df0 = np.asarray(df0, dtype=float)
    dg = np.asarray(dg, dtype=float)
    if not (np.all(np.isfinite(df0)) and np.all(np.isfinite(dg)) and np.isfinite(g)):
        raise ValueError("non-finite objective or constraint gradient")
    if df0.shape != x.shape or dg.shape != x.shape:
        raise ValueError(f"gradient shapes {df0.shape}, {dg.shape} do not match x {x.shape}")
    state.iteration += 1
    width = np.ones_like(x)
    low, upp = _asymptotes(x, state, cfg, width)
    sub = build_subproblem(x, df0, g, dg, low, upp, cfg)
    x_new = np.clip(sub.solve(), 0.0, 1.0)
    log.debug("mma iter %d: f0=%.6g g=%.3e lambda=%.3e", state.iteration, f0, g, sub.lam)
    state.x_prev2 = state.x_prev
    state.x_prev = x.copy()
    state.low, state.upp = low, upp
    return x_new


def constraint_wrap(kind: str, value: float, bound: float, grad: np.ndarray) -> tuple[float, np.ndarray]:
    """Normalised constraint ``value / bound - 1 <= 0`` and its gradient.

    ``kind`` is ``'P'`` (global volume, ``bound = V*``) or ``'Q'``
    (aggregated local volume, ``bound = alpha``).
    """
    if kind == "P":
        if not bound > 0:
            raise MmaConfigError(f"volume target must be positive, got {bound}")
    elif kind == "Q":
        if not 0 < bound < 1:
            raise MmaConfigError(f"local volume bound alpha must lie in (0, 1), got {bound}")
    else:
        raise MmaConfigError(f"problem kind must be 'P' or 'Q', got {kind!r}")
    return value / bound - 1.0, np.asarray(grad, dtype=float) / bound
