"""Optimisation loop for compliance minimisation under volume constraints.

Two problem kinds share the loop:

* ``'P'``: global volume ``V <= V*``;
* ``'Q'``: aggregated local volume ``V_bar <= alpha`` (porous infill).

Each iteration projects the design coefficients to element densities,
solves the shell equilibrium, evaluates compliance and the constraint with
their adjoint gradients and takes one MMA step.  The Heaviside sharpness
follows a doubling schedule.
"""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .analysis import AnalysisModel, GaussRule, Load, MaterialParams, SolverError, Support, compliance
from .density import (
    DensityField,
    LocalVolumeSpec,
    aggregate_pmean,
    design_projection,
    heaviside,
    mean_element_length,
    neighborhood_matrix,
    total_volume,
)
from .geometry import MultiLevelModel
from .mma import MmaConfig, MmaState, constraint_wrap, mma_update
from .sensitivities import compliance_gradient, local_volume_gradient, volume_gradient

log = logging.getLogger(__name__)

__all__ = [
    "OptConfigError",
    "OptimizationError",
    "Continuation",
    "Termination",
    "OptProblem",
    "DesignPipeline",
    "Evaluation",
    "OptRecord",
    "OptHistory",
    "OptResult",
    "continuation_step",
    "grayscale_fraction",
    "initial_value",
    "run",
]


class OptConfigError(ValueError):
    pass


class OptimizationError(RuntimeError):
    """Run aborted; ``history`` holds every completed iteration."""

    def __init__(self, message: str, history: "OptHistory") -> None:
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class Continuation:
    tau_start: float = 2.0
    tau_max: float = 64.0
    every: int = 25
    kappa: float = 0.5

    def __post_init__(self) -> None:
        if not 0 < self.tau_start <= self.tau_max:
            raise OptConfigError("need 0 < tau_start <= tau_max")
        if self.every < 1:
            raise OptConfigError("continuation interval must be >= 1")


@dataclass(frozen=True)
class Termination:
    tol: float = 0.005
    patience: int = 5
    max_iter: int = 200
    after_full_continuation: bool = True
    constraint_tol: float = 1e-3

    def __post_init__(self) -> None:
        if self.tol <= 0 or self.patience < 1 or self.max_iter < 1 or self.constraint_tol <= 0:
            raise OptConfigError("termination needs tol > 0, patience >= 1, max_iter >= 1, constraint_tol > 0")


def continuation_step(iteration: int, cont: Continuation | None = None) -> float:
    """``tau = min(tau_max, tau_start * 2**floor((iteration - 1) / every))``."""
    cont = cont or Continuation()
    if iteration < 1:
        raise ValueError("iterations are numbered from 1")
    return float(min(cont.tau_max, cont.tau_start * 2.0 ** ((iteration - 1) // cont.every)))


def grayscale_fraction(rho_e: np.ndarray) -> float:
    """Fraction of elements with intermediate density ``0.1 < rho < 0.9``."""
    rho_e = np.asarray(rho_e)
    return float(np.count_nonzero((rho_e > 0.1) & (rho_e < 0.9)) / rho_e.size)


@dataclass
class OptProblem:
    kind: str
    multilevel: MultiLevelModel
    supports: Sequence[Support]
    loads: Sequence[Load]
    material: MaterialParams = field(default_factory=MaterialParams)
    volume_fraction: float | None = None
    local: LocalVolumeSpec | None = None
    mma: MmaConfig = field(default_factory=MmaConfig)
    continuation: Continuation = field(default_factory=Continuation)
    termination: Termination = field(default_factory=Termination)
    rule: GaussRule | None = None
    reset_asymptotes_on_tau: bool = False

    def __post_init__(self) -> None:
        if self.kind == "P":
            if self.volume_fraction is None or not 0 < self.volume_fraction < 1:
                raise OptConfigError("problem P needs volume_fraction V*/V_s in (0, 1)")
        elif self.kind == "Q":
            if self.local is None:
                raise OptConfigError("problem Q needs a LocalVolumeSpec")
        else:
            raise OptConfigError(f"problem kind must be 'P' or 'Q', got {self.kind!r}")


def initial_value(problem: OptProblem) -> float:
    """Uniform starting coefficient: ``V*/V_s`` for P and ``alpha`` for Q."""
    return problem.volume_fraction if problem.kind == "P" else problem.local.alpha


@dataclass
class Evaluation:
    tau: float
    rho_e: np.ndarray
    U: np.ndarray
    compliance: float
    volume: float
    dC: np.ndarray
    dV: np.ndarray
    vbar: float = float("nan")
    max_rho_bar: float = float("nan")
    dVbar: np.ndarray | None = None


class DesignPipeline:
    """Fixed analysis data plus the maps from design coefficients to responses."""

    def __init__(self, problem: OptProblem) -> None:
        self.problem = problem
        ml = problem.multilevel
        self.model = AnalysisModel(ml.analysis, problem.supports, problem.loads, problem.material, problem.rule)
        self.P = design_projection(ml.design_basis, self.model.centers)
        self.kappa = problem.continuation.kappa
        self.W = None
        if problem.kind == "Q":
            delta = mean_element_length(self.model.areas)
            self.W = neighborhood_matrix(self.model.centroids, self.model.Ve0, problem.local.radius * delta)

    @property
    def solid_volume(self) -> float:
        return self.model.solid_volume

    def element_densities(self, x: np.ndarray, tau: float) -> np.ndarray:
        return heaviside(self.P @ x, tau, self.kappa)

    def compliance(self, x: np.ndarray, tau: float) -> float:
        rho_e = self.element_densities(x, tau)
        return compliance(self.model.solve(rho_e), self.model.F)

    def volume(self, x: np.ndarray, tau: float) -> float:
        return total_volume(self.element_densities(x, tau), self.model.Ve0)

    def vbar(self, x: np.ndarray, tau: float) -> float:
        return aggregate_pmean(self.W @ self.element_densities(x, tau), self.problem.local.gamma)

    def evaluate(self, x: np.ndarray, tau: float) -> Evaluation:
        rho_e = self.element_densities(x, tau)
        U = self.model.solve(rho_e)
        ev = Evaluation(
            tau=tau,
            rho_e=rho_e,
            U=U,
            compliance=compliance(U, self.model.F),
            volume=total_volume(rho_e, self.model.Ve0),
            dC=compliance_gradient(self.model, U, self.P, x, tau, self.kappa),
            dV=volume_gradient(self.model.Ve0, self.P, x, tau, self.kappa),
        )
        if self.W is not None:
            ev.vbar, ev.dVbar = local_volume_gradient(self.W, self.P, x, tau, self.kappa, self.problem.local.gamma)
            ev.max_rho_bar = float((self.W @ rho_e).max())
        return ev


@dataclass
class OptRecord:
    iteration: int
    tau: float
    compliance: float
    volume: float
    volume_fraction: float
    constraint: float
    vbar: float
    max_rho_bar: float
    max_change: float
    grayscale: float


@dataclass
class OptHistory:
    records: list[OptRecord] = field(default_factory=list)
    wall_times: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self) -> str:
        """History as CSV text; wall times are kept out so reruns compare byte-for-byte."""
        buf = io.StringIO()
        names = list(OptRecord.__dataclass_fields__)
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(names)
        for r in self.records:
            w.writerow([v if isinstance(v, int) else repr(float(v)) for v in asdict(r).values()])
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())

    def write_timings(self, path: str | Path) -> None:
        lines = ["iteration,wall_time"] + [f"{k + 1},{t:.6f}" for k, t in enumerate(self.wall_times)]
        Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class OptResult:
    field: DensityField
    history: OptHistory
    final: Evaluation
    converged: bool
    pipeline: DesignPipeline


def run(
    problem: OptProblem,
    pipeline: DesignPipeline | None = None,
    callback: Callable[[int, DensityField, OptRecord], None] | None = None,
) -> OptResult:
    """Run the optimisation loop until the design settles or ``max_iter`` is hit.

    Convergence means the largest coefficient change stayed below ``tol``
    for ``patience`` consecutive iterations.  An iteration only counts once
    the projection has reached its final sharpness (unless configured
    otherwise) and while the normalised constraint is within
    ``constraint_tol`` of feasibility; for the global volume problem the
    constraint must also be active to that tolerance.
    """
    pipe = pipeline or DesignPipeline(problem)
    basis = problem.multilevel.design_basis
    cont, term = problem.continuation, problem.termination
    x = np.full(basis.shape[0] * basis.shape[1], initial_value(problem))
    Vs = pipe.solid_volume
    bound = problem.volume_fraction * Vs if problem.kind == "P" else problem.local.alpha
    state = MmaState()
    history = OptHistory()
    scale = None
    quiet = 0
    converged = False
    tau_prev = None
    for it in range(1, term.max_iter + 1):
        t0 = time.perf_counter()
        tau = continuation_step(it, cont)
        if tau_prev is not None and tau != tau_prev and problem.reset_asymptotes_on_tau:
            state = MmaState()
        tau_prev = tau
        try:
            ev = pipe.evaluate(x, tau)
        except SolverError as exc:
            raise OptimizationError(f"iteration {it}: {exc}", history) from exc
        if scale is None:
            # objective normalised by the starting compliance
            scale = 1.0 / ev.compliance if ev.compliance > 0 else 1.0
        if problem.kind == "P":
            g, dg = constraint_wrap("P", ev.volume, bound, ev.dV)
        else:
            g, dg = constraint_wrap("Q", ev.vbar, bound, ev.dVbar)
        x_new = mma_update(x, ev.compliance * scale, ev.dC * scale, g, dg, state, problem.mma)
        change = float(np.max(np.abs(x_new - x)))
        rec = OptRecord(
            iteration=it,
            tau=tau,
            compliance=ev.compliance,
            volume=ev.volume,
            volume_fraction=ev.volume / Vs,
            constraint=g,
            vbar=ev.vbar,
            max_rho_bar=ev.max_rho_bar,
            max_change=change,
            grayscale=grayscale_fraction(ev.rho_e),
        )
        history.records.append(rec)
        x = x_new
        history.wall_times.append(time.perf_counter() - t0)
        log.info(
            "it %3d tau %4.0f C %.6g V/Vs %.4f g %+.2e change %.4f gray %.3f",
            it, tau, ev.compliance, rec.volume_fraction, g, change, rec.grayscale,
        )
        if callback is not None:
            callback(it, DensityField(basis, x.reshape(basis.shape), tau, cont.kappa), rec)
        feasible = g <= term.constraint_tol and (problem.kind == "Q" or g >= -term.constraint_tol)
        sharp = tau >= cont.tau_max or not term.after_full_continuation
        if change < term.tol and feasible and sharp:
            quiet += 1
        else:
            quiet = 0
        if quiet >= term.patience:
            converged = True
            break
    tau = history.records[-1].tau
    final = pipe.evaluate(x, tau)
    fld = DensityField(basis, x.reshape(basis.shape), tau, cont.kappa)
    return OptResult(fld, history, final, converged, pipe)
