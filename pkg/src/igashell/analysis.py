"""Reissner-Mindlin degenerated shell analysis on a NURBS basis.

Each analysis control point carries five unknowns ``(u, v, w, alpha, beta)``:
three global translations and two rotations about the local tangent
directions.  The displacement inside the shell is

    u(s, t, zeta) = sum_a R_a (u_a, v_a, w_a)
                    + zeta * h/2 * sum_a R_a (-alpha_a v2 + beta_a v1)

Strains are evaluated in the local frame ``(v1, v2, v3)`` so that the normal
stress along ``v3`` can be suppressed in the constitutive matrix.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .geometry import (
    ShellModel,
    SingularJacobianError,
    check_jacobians,
    frame_derivs_vec,
    jacobian_vec,
)
from .splines import NurbsSurface, SplineDomainError, rational_basis_vec, surface_derivs_vec

log = logging.getLogger(__name__)

__all__ = [
    "MaterialParams",
    "GaussRule",
    "Support",
    "Load",
    "DofMap",
    "AnalysisModel",
    "SolverError",
    "AssemblyError",
    "AnalysisConfigError",
    "young_modulus",
    "material_matrix",
    "strain_displacement",
    "element_stiffness_solid",
    "build_dofmap",
    "load_vector",
    "assemble",
    "solve_equilibrium",
    "BandedSPDSolver",
    "compliance",
    "element_compliance_sum",
    "displacement_at",
    "DOF_NAMES",
]

DOF_NAMES = ("u", "v", "w", "alpha", "beta")
NDOF = 5


class SolverError(RuntimeError):
    pass


class AssemblyError(ValueError):
    pass


class AnalysisConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MaterialParams:
    E0: float = 2100.0
    nu: float = 0.3
    E_min: float | None = None
    penal: float = 5.0
    shear_correction: float = 5.0 / 6.0

    def __post_init__(self) -> None:
        if self.E_min is None:
            object.__setattr__(self, "E_min", 1e-6 * self.E0)
        if not self.E0 > 0:
            raise AnalysisConfigError("E0 must be positive")
        if not 0 < self.E_min < self.E0:
            raise AnalysisConfigError("E_min must lie in (0, E0)")
        if not 0 <= self.nu < 0.5:
            raise AnalysisConfigError("nu must lie in [0, 0.5)")
        if self.penal < 1:
            raise AnalysisConfigError("penalisation exponent must be >= 1")

    @property
    def stiffness_floor(self) -> float:
        """E_min / E0, the relative stiffness of void material."""
        return self.E_min / self.E0


def young_modulus(mat: MaterialParams, rho: np.ndarray | float) -> np.ndarray | float:
    """SIMP interpolation ``E_min + rho**penal * (E0 - E_min)``."""
    return mat.E_min + np.power(rho, mat.penal) * (mat.E0 - mat.E_min)


def material_matrix(mat: MaterialParams, rho: float = 1.0) -> np.ndarray:
    """Local 6x6 constitutive matrix.

    Strain order is ``(e11, e22, e33, g12, g23, g13)`` in the local frame; the
    ``e33`` row and column are zero (no normal stress through the thickness).
    """
    if not 0.0 <= rho <= 1.0:
        log.warning("density %g outside [0, 1]; clamped", rho)
        rho = min(max(rho, 0.0), 1.0)
    E = float(young_modulus(mat, rho))
    nu = mat.nu
    G = E / (2.0 * (1.0 + nu))
    D = np.zeros((6, 6))
    c = E / (1.0 - nu * nu)
    D[0, 0] = D[1, 1] = c
    D[0, 1] = D[1, 0] = c * nu
    D[3, 3] = G
    D[4, 4] = D[5, 5] = mat.shear_correction * G
    return D


@dataclass(frozen=True)
class GaussRule:
    n_s: int
    n_t: int
    n_z: int = 2

    @classmethod
    def default_for(cls, surf: NurbsSurface) -> "GaussRule":
        p, q = surf.degrees
        return cls(p + 1, q + 1, 2)

    def points(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Abscissae and weights on [-1, 1]."""
        return np.polynomial.legendre.leggauss(n)

    def refined(self, extra: int = 1) -> "GaussRule":
        return GaussRule(self.n_s + extra, self.n_t + extra, self.n_z)


# --------------------------------------------------------------------------
# strain-displacement


def _b_matrices(
    R: np.ndarray,
    dRs: np.ndarray,
    dRt: np.ndarray,
    fr: dict[str, np.ndarray],
    J: np.ndarray,
    zeta: np.ndarray,
    h: float,
) -> np.ndarray:
    """Strain-displacement matrices, shape ``(N, 6, 5 * n)`` for N points with n local functions."""
    N, n = R.shape
    Jinv = np.linalg.inv(J)
    theta = np.stack([fr["v1"], fr["v2"], fr["v3"]], axis=-1)  # columns
    A = Jinv @ theta  # d(param)/d(local coords)
    half = 0.5 * h
    zh = (zeta * half)[:, None, None]
    # parametric displacement gradients per dof: G[..., i, a] = du_i / dxi_a
    G = np.zeros((N, n, NDOF, 3, 3))
    for k in range(3):
        G[:, :, k, k, 0] = dRs
        G[:, :, k, k, 1] = dRt
    for slot, vec, sign in ((3, "v2", -1.0), (4, "v1", 1.0)):
        v = fr[vec][:, None, :]
        G[:, :, slot, :, 0] = sign * zh * (dRs[..., None] * v + R[..., None] * fr[f"d{vec}_s"][:, None, :])
        G[:, :, slot, :, 1] = sign * zh * (dRt[..., None] * v + R[..., None] * fr[f"d{vec}_t"][:, None, :])
        G[:, :, slot, :, 2] = sign * half * R[..., None] * v
    L = np.swapaxes(theta, -1, -2)[:, None, None] @ G @ A[:, None, None]
    B = np.empty((N, 6, n, NDOF))
    B[:, 0] = L[..., 0, 0]
    B[:, 1] = L[..., 1, 1]
    B[:, 2] = L[..., 2, 2]
    B[:, 3] = L[..., 0, 1] + L[..., 1, 0]
    B[:, 4] = L[..., 1, 2] + L[..., 2, 1]
    B[:, 5] = L[..., 0, 2] + L[..., 2, 0]
    return B.reshape(N, 6, n * NDOF)


def strain_displacement(shell: ShellModel, s: float, t: float, zeta: float) -> tuple[np.ndarray, np.ndarray]:
    """Local-frame strain-displacement matrix at one point.

    Returns ``(B, cps)`` where ``cps`` are the flat indices of the control
    points whose five dofs (in order) make up the columns of ``B``.
    """
    sa, ta, za = np.array([s], float), np.array([t], float), np.array([zeta], float)
    basis = rational_basis_vec(shell.mid_surface, sa, ta, 1)
    fr = frame_derivs_vec(shell.mid_surface, sa, ta)
    J = jacobian_vec(shell, sa, ta, za, fr)
    check_jacobians(J)
    B = _b_matrices(basis.R, basis.dRs, basis.dRt, fr, J, za, shell.thickness)
    return B[0], basis.index[0]


def displacement_at(shell: ShellModel, U: np.ndarray, s: float, t: float, zeta: float) -> np.ndarray:
    """Evaluate the displacement field for coefficient vector ``U`` at one point."""
    sa, ta = np.array([s], float), np.array([t], float)
    basis = rational_basis_vec(shell.mid_surface, sa, ta, 0)
    fr = frame_derivs_vec(shell.mid_surface, sa, ta)
    coef = U.reshape(-1, NDOF)[basis.index[0]]
    R = basis.R[0]
    trans = R @ coef[:, :3]
    rot = 0.5 * shell.thickness * zeta * (R @ coef[:, 3] * -fr["v2"][0] + R @ coef[:, 4] * fr["v1"][0])
    return trans + rot


# --------------------------------------------------------------------------
# element integration


@dataclass
class _QuadData:
    """Per element quadrature data for a block of elements (G points each)."""

    basis_index: np.ndarray  # (E, n)
    B: np.ndarray  # (E, G, 6, 5n)
    wdet: np.ndarray  # (E, G)
    area_w: np.ndarray  # (E, G2) mid-surface area weights
    S: np.ndarray  # (E, G2, 3)


def _element_params(surf: NurbsSurface, rule: GaussRule, elems: np.ndarray) -> tuple[np.ndarray, ...]:
    bs = surf.knots_s.breakpoints
    bt = surf.knots_t.breakpoints
    nt = bt.size - 1
    ie, je = elems // nt, elems % nt
    xs, ws = rule.points(rule.n_s)
    xt, wt = rule.points(rule.n_t)
    s0, s1 = bs[ie], bs[ie + 1]
    t0, t1 = bt[je], bt[je + 1]
    sq = 0.5 * (s0 + s1)[:, None] + 0.5 * (s1 - s0)[:, None] * xs[None, :]
    tq = 0.5 * (t0 + t1)[:, None] + 0.5 * (t1 - t0)[:, None] * xt[None, :]
    E = elems.size
    S = np.repeat(sq, rule.n_t, axis=1)  # (E, ns*nt), s-major
    T = np.tile(tq, (1, rule.n_s))
    w2 = (np.outer(ws, wt).ravel()[None, :] * (0.25 * (s1 - s0) * (t1 - t0))[:, None])
    return S.reshape(E, -1), T.reshape(E, -1), w2


def _quad_block(shell: ShellModel, rule: GaussRule, elems: np.ndarray) -> _QuadData:
    surf = shell.mid_surface
    E = elems.size
    S2, T2, w2 = _element_params(surf, rule, elems)
    G2 = S2.shape[1]
    s, t = S2.ravel(), T2.ravel()
    basis = rational_basis_vec(surf, s, t, 1)
    fr = frame_derivs_vec(surf, s, t)
    pts, Ss, St = surface_derivs_vec(surf, s, t)
    area = np.linalg.norm(np.cross(Ss, St), axis=1)
    zq, wz = rule.points(rule.n_z)
    nz = zq.size
    # expand to (E*G2, nz) points
    rep = lambda a: np.repeat(a, nz, axis=0)  # noqa: E731
    fr3 = {k: rep(v) for k, v in fr.items()}
    zeta = np.tile(zq, s.size)
    J = jacobian_vec(shell, rep(s), rep(t), zeta, fr3)
    try:
        det = check_jacobians(J)
    except SingularJacobianError as exc:
        raise SingularJacobianError(f"{exc} (elements {elems.min()}..{elems.max()})") from None
    B = _b_matrices(rep(basis.R), rep(basis.dRs), rep(basis.dRt), fr3, J, zeta, shell.thickness)
    G = G2 * nz
    wdet = (np.repeat(w2.ravel(), nz) * np.tile(wz, s.size) * np.abs(det)).reshape(E, G)
    return _QuadData(
        basis_index=basis.index.reshape(E, G2, -1)[:, 0, :],
        B=B.reshape(E, G, 6, -1),
        wdet=wdet,
        area_w=(w2 * area.reshape(E, G2)),
        S=pts.reshape(E, G2, 3),
    )


def element_stiffness_solid(shell: ShellModel, element: int, rule: GaussRule, mat: MaterialParams | None = None) -> np.ndarray:
    """Solid (unit density) stiffness matrix of one element.

    Elements are numbered ``i_s * n_t_spans + i_t``.
    """
    mat = mat or MaterialParams()
    q = _quad_block(shell, rule, np.array([element]))
    D = material_matrix(mat, 1.0)
    return np.einsum("gia,ij,gjb,g->ab", q.B[0], D, q.B[0], q.wdet[0])


# --------------------------------------------------------------------------
# boundary conditions and loads


@dataclass(frozen=True)
class Support:
    """Clamp control points on an edge (``'s0'``, ``'s1'``, ``'t0'``, ``'t1'``) or at a parameter point."""

    kind: str
    where: str | tuple[float, float]
    dofs: tuple[str, ...] = DOF_NAMES

    def __post_init__(self) -> None:
        if self.kind not in ("edge", "point"):
            raise AnalysisConfigError(f"support kind must be 'edge' or 'point', got {self.kind!r}")
        if self.kind == "edge" and self.where not in ("s0", "s1", "t0", "t1"):
            raise AnalysisConfigError(f"edge must be one of s0, s1, t0, t1, got {self.where!r}")
        bad = set(self.dofs) - set(DOF_NAMES)
        if bad:
            raise AnalysisConfigError(f"unknown dof names {sorted(bad)}; valid: {DOF_NAMES}")


@dataclass(frozen=True)
class Load:
    """External load.

    ``kind`` is one of

    * ``'point'``: force at the parameter point ``at``;
    * ``'line'``: force per unit length along the iso-curve where parameter
      ``iso`` (``'s'`` or ``'t'``) equals ``value``;
    * ``'surface'``: force per unit mid-surface area;
    * ``'body'``: force per unit volume.
    """

    kind: str
    force: tuple[float, float, float]
    at: tuple[float, float] | None = None
    iso: str | None = None
    value: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("point", "line", "surface", "body"):
            raise AnalysisConfigError(f"unknown load kind {self.kind!r}")
        if len(self.force) != 3:
            raise AnalysisConfigError("force must have three components")
        if self.kind == "point" and self.at is None:
            raise AnalysisConfigError("point load needs 'at'")
        if self.kind == "line" and (self.iso not in ("s", "t") or self.value is None):
            raise AnalysisConfigError("line load needs iso in {'s','t'} and a value")


@dataclass
class DofMap:
    n_cp: int
    fixed: np.ndarray
    free: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.fixed = np.unique(np.asarray(self.fixed, dtype=np.int64))
        mask = np.ones(self.n_dof, bool)
        mask[self.fixed] = False
        self.free = np.flatnonzero(mask)

    @property
    def n_dof(self) -> int:
        return NDOF * self.n_cp


def _support_points(surf: NurbsSurface, sup: Support) -> np.ndarray:
    m, n = surf.shape
    grid = np.arange(m * n).reshape(m, n)
    if sup.kind == "edge":
        return {"s0": grid[0, :], "s1": grid[-1, :], "t0": grid[:, 0], "t1": grid[:, -1]}[sup.where]
    s, t = sup.where
    try:
        b = rational_basis_vec(surf, np.array([s]), np.array([t]), 0)
    except SplineDomainError as exc:
        raise AnalysisConfigError(f"support point {sup.where}: {exc}") from None
    R = b.R[0]
    return b.index[0][R > 1e-12 * R.max()]


def build_dofmap(surf: NurbsSurface, supports: Iterable[Support]) -> DofMap:
    fixed = []
    for sup in supports:
        cps = _support_points(surf, sup)
        for name in sup.dofs:
            fixed.append(NDOF * cps + DOF_NAMES.index(name))
    fixed_arr = np.concatenate(fixed) if fixed else np.zeros(0, np.int64)
    return DofMap(surf.shape[0] * surf.shape[1], fixed_arr)


def load_vector(shell: ShellModel, loads: Sequence[Load], rule: GaussRule | None = None) -> np.ndarray:
    """Consistent nodal force vector (density independent)."""
    surf = shell.mid_surface
    rule = rule or GaussRule.default_for(surf)
    n_cp = surf.shape[0] * surf.shape[1]
    F = np.zeros(NDOF * n_cp)
    (slo, shi), (tlo, thi) = surf.domain
    for ld in loads:
        g = np.asarray(ld.force, dtype=float)
        if ld.kind == "point":
            s, t = ld.at
            try:
                b = rational_basis_vec(surf, np.array([s]), np.array([t]), 0)
            except SplineDomainError as exc:
                raise AnalysisConfigError(f"point load at {ld.at}: {exc}") from None
            for k in range(3):
                np.add.at(F, NDOF * b.index[0] + k, b.R[0] * g[k])
        elif ld.kind == "line":
            along_s = ld.iso == "t"  # t fixed -> curve runs along s
            kv = surf.knots_s if along_s else surf.knots_t
            fixed_lo, fixed_hi = (tlo, thi) if along_s else (slo, shi)
            if not fixed_lo <= ld.value <= fixed_hi:
                raise AnalysisConfigError(f"line load at {ld.iso}={ld.value} outside domain")
            n_g = rule.n_s if along_s else rule.n_t
            x, w = rule.points(n_g)
            bp = kv.breakpoints
            a, b_ = bp[:-1, None], bp[1:, None]
            u = (0.5 * (a + b_) + 0.5 * (b_ - a) * x).ravel()
            wu = (0.5 * (b_ - a) * w).ravel()
            v = np.full_like(u, ld.value)
            s, t = (u, v) if along_s else (v, u)
            basis = rational_basis_vec(surf, s, t, 0)
            _, Ss, St = surface_derivs_vec(surf, s, t)
            dl = np.linalg.norm(Ss if along_s else St, axis=1) * wu
            for k in range(3):
                np.add.at(F, NDOF * basis.index + k, basis.R * (dl * g[k])[:, None])
        else:
            elems = np.arange(surf.knots_s.n_spans * surf.knots_t.n_spans)
            S2, T2, w2 = _element_params(surf, rule, elems)
            s, t = S2.ravel(), T2.ravel()
            basis = rational_basis_vec(surf, s, t, 0)
            _, Ss, St = surface_derivs_vec(surf, s, t)
            dA = np.linalg.norm(np.cross(Ss, St), axis=1) * w2.ravel()
            if ld.kind == "body":
                # through-thickness integral of the translational part; the
                # rotational part is odd in zeta and integrates to zero
                dA = dA * shell.thickness
            for k in range(3):
                np.add.at(F, NDOF * basis.index + k, basis.R * (dA * g[k])[:, None])
    return F


# --------------------------------------------------------------------------
# analysis model: precomputed element data and fast assembly


class AnalysisModel:
    """Precomputed element data for a fixed shell, rule, supports and loads.

    Solid element stiffness matrices, volumes and load vector are computed
    once; only the density scaling changes between optimisation iterations.
    """

    def __init__(
        self,
        shell: ShellModel,
        supports: Sequence[Support] = (),
        loads: Sequence[Load] = (),
        mat: MaterialParams | None = None,
        rule: GaussRule | None = None,
        chunk: int = 256,
    ) -> None:
        self.shell = shell
        self.surf = shell.mid_surface
        self.mat = mat or MaterialParams()
        self.rule = rule or GaussRule.default_for(self.surf)
        self.spans = (self.surf.knots_s.n_spans, self.surf.knots_t.n_spans)
        self.n_elements = self.spans[0] * self.spans[1]
        self.n_cp = self.surf.shape[0] * self.surf.shape[1]
        D0 = material_matrix(self.mat, 1.0)

        E = self.n_elements
        p, q = self.surf.degrees
        nloc = (p + 1) * (q + 1)
        self.elem_cp = np.empty((E, nloc), np.int64)
        self.Ke0 = np.empty((E, NDOF * nloc, NDOF * nloc))
        self.Ve0 = np.empty(E)
        self.areas = np.empty(E)
        self.centroids = np.empty((E, 3))
        for start in range(0, E, chunk):
            elems = np.arange(start, min(start + chunk, E))
            qd = _quad_block(shell, self.rule, elems)
            sl = slice(elems[0], elems[-1] + 1)
            self.elem_cp[sl] = qd.basis_index
            DB = np.einsum("ij,egjb->egib", D0, qd.B)
            self.Ke0[sl] = np.einsum("egia,egib,eg->eab", qd.B, DB, qd.wdet)
            self.Ve0[sl] = qd.wdet.sum(axis=1)
            self.areas[sl] = qd.area_w.sum(axis=1)
            self.centroids[sl] = np.einsum("eg,egd->ed", qd.area_w, qd.S) / self.areas[sl, None]
        # symmetrise round-off
        self.Ke0 = 0.5 * (self.Ke0 + np.swapaxes(self.Ke0, 1, 2))
        self.elem_dofs = (NDOF * self.elem_cp[:, :, None] + np.arange(NDOF)).reshape(E, -1)

        bs, bt = self.surf.knots_s.breakpoints, self.surf.knots_t.breakpoints
        cs, ct = 0.5 * (bs[:-1] + bs[1:]), 0.5 * (bt[:-1] + bt[1:])
        self.centers = np.column_stack([np.repeat(cs, ct.size), np.tile(ct, cs.size)])

        self.supports = tuple(supports)
        self.loads = tuple(loads)
        self.dofmap = build_dofmap(self.surf, self.supports)
        self.F = load_vector(shell, self.loads, self.rule)
        self._full = None
        self._reduced = None
        self._solver: BandedSPDSolver | None = None

    @property
    def n_dof(self) -> int:
        return NDOF * self.n_cp

    @property
    def solid_volume(self) -> float:
        return float(self.Ve0.sum())

    def element_scale(self, rho_e: np.ndarray) -> np.ndarray:
        """Stiffness multiplier ``E(rho) / E0`` per element."""
        rho_e = np.asarray(rho_e, dtype=float)
        if rho_e.shape != (self.n_elements,):
            raise AssemblyError(f"expected {self.n_elements} element densities, got {rho_e.shape}")
        f = self.mat.stiffness_floor
        return f + np.power(rho_e, self.mat.penal) * (1.0 - f)

    def _pattern(self, reduced: bool) -> "_Pattern":
        attr = "_reduced" if reduced else "_full"
        pat = getattr(self, attr)
        if pat is None:
            pat = _Pattern(self.elem_dofs, self.n_dof, self.dofmap.free if reduced else None)
            setattr(self, attr, pat)
        return pat

    def assemble(self, rho_e: np.ndarray, reduced: bool = False) -> sp.csc_matrix:
        return self._pattern(reduced).assemble(self.Ke0, self.element_scale(rho_e))

    def solve(self, rho_e: np.ndarray) -> np.ndarray:
        K = self.assemble(rho_e, reduced=True)
        if self._solver is None:
            self._solver = BandedSPDSolver(K.indptr, K.indices, K.shape[0], self._band_order())
        return solve_equilibrium(K, self.F, self.dofmap, self._solver)

    def _band_order(self) -> np.ndarray | None:
        """Reduced-dof ordering that runs along the shorter control-grid direction."""
        m, n = self.surf.shape
        if m >= n:
            return None
        cp = np.arange(m * n).reshape(m, n).T.ravel()
        dofs = (NDOF * cp[:, None] + np.arange(NDOF)).ravel()
        rank = np.empty(self.n_dof, np.int64)
        rank[dofs] = np.arange(self.n_dof)
        return np.argsort(rank[self.dofmap.free], kind="stable")

    def element_energies(self, U: np.ndarray) -> np.ndarray:
        """``U_e^T K_e^0 U_e`` per element (solid stiffness)."""
        Ue = U[self.elem_dofs]
        return np.einsum("ea,eab,eb->e", Ue, self.Ke0, Ue)


class _Pattern:
    """Sparsity pattern with a scatter map from element entries to CSC data."""

    def __init__(self, elem_dofs: np.ndarray, n_dof: int, keep: np.ndarray | None) -> None:
        E, nd = elem_dofs.shape
        if keep is None:
            new = np.arange(n_dof)
            n = n_dof
        else:
            new = np.full(n_dof, -1, np.int64)
            new[keep] = np.arange(keep.size)
            n = keep.size
        ed = new[elem_dofs]
        rows = np.broadcast_to(ed[:, :, None], (E, nd, nd)).ravel()
        cols = np.broadcast_to(ed[:, None, :], (E, nd, nd)).ravel()
        mask = (rows >= 0) & (cols >= 0)
        self.mask = None if mask.all() else mask
        rows, cols = rows[mask], cols[mask]
        key = cols.astype(np.int64) * n + rows
        uniq, self.pos = np.unique(key, return_inverse=True)
        self.indices = (uniq % n).astype(np.int32)
        col_of = uniq // n
        self.indptr = np.searchsorted(col_of, np.arange(n + 1)).astype(np.int32)
        self.n = n
        self.nnz = uniq.size

    def assemble(self, Ke0: np.ndarray, scale: np.ndarray) -> sp.csc_matrix:
        vals = (Ke0 * scale[:, None, None]).ravel()
        if self.mask is not None:
            vals = vals[self.mask]
        data = np.bincount(self.pos, weights=vals, minlength=self.nnz)
        return sp.csc_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))


def assemble(model: AnalysisModel, rho_e: np.ndarray, reduced: bool = False) -> sp.csc_matrix:
    """Global stiffness ``sum_e scatter(K_min + rho_e**penal (K_e^0 - K_min))``."""
    return model.assemble(rho_e, reduced=reduced)


class BandedSPDSolver:
    """Banded Cholesky factorisation for a fixed sparsity pattern.

    The pattern (CSC ``indptr``/``indices``) is symmetric; ``perm`` is an
    optional symmetric reordering that keeps the band narrow.  Only the upper
    triangle is stored, in LAPACK band layout.
    """

    def __init__(self, indptr: np.ndarray, indices: np.ndarray, n: int, perm: np.ndarray | None = None) -> None:
        cols = np.repeat(np.arange(n), np.diff(indptr))
        rows = np.asarray(indices)
        if perm is not None:
            inv = np.empty(n, np.int64)
            inv[perm] = np.arange(n)
            rows, cols = inv[rows], inv[cols]
        upper = rows <= cols
        self.sel = np.flatnonzero(upper)
        r, c = rows[upper], cols[upper]
        self.bandwidth = int((c - r).max()) if c.size else 0
        self.flat = (self.bandwidth + r - c) * n + c
        self.n = n
        self.perm = perm

    def solve(self, data: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        u, n = self.bandwidth, self.n
        ab = np.zeros((u + 1) * n)
        ab[self.flat] = data[self.sel]
        cb = sla.cholesky_banded(ab.reshape(u + 1, n), overwrite_ab=True, lower=False, check_finite=False)
        b = rhs if self.perm is None else rhs[self.perm]
        x = sla.cho_solve_banded((cb, False), b, overwrite_b=False, check_finite=False)
        if self.perm is None:
            return x
        out = np.empty_like(x)
        out[self.perm] = x
        return out


def _count_bad_pivots(K: sp.spmatrix) -> int:
    lu = spla.splu(
        sp.csc_matrix(K), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options={"SymmetricMode": True}
    )
    piv = lu.U.diagonal()
    return int(np.count_nonzero(piv <= 1e-12 * np.abs(piv).max()))


def solve_equilibrium(
    K_ff: sp.spmatrix, F: np.ndarray, dofmap: DofMap, solver: BandedSPDSolver | None = None
) -> np.ndarray:
    """Solve the constrained system ``K_ff U_f = F_f``.

    Fixed dofs are eliminated (not penalised) and come back as zero.  The
    reduced matrix is factorised by banded Cholesky; a failed factorisation
    is reported with the number of non-positive pivots.
    """
    F_f = F[dofmap.free]
    U = np.zeros(dofmap.n_dof)
    if K_ff.shape != (F_f.size, F_f.size):
        raise AssemblyError(f"reduced K has shape {K_ff.shape}, expected {(F_f.size, F_f.size)}")
    if not np.any(F_f):
        return U
    K = sp.csc_matrix(K_ff)
    K.sort_indices()
    if solver is None:
        solver = BandedSPDSolver(K.indptr, K.indices, K.shape[0])
    try:
        U[dofmap.free] = solver.solve(K.data, F_f)
    except np.linalg.LinAlgError:
        n_bad = _count_bad_pivots(K)
        raise SolverError(
            f"stiffness matrix is not positive definite ({n_bad} near-zero or negative pivots); "
            "the supports probably do not remove all rigid-body modes"
        ) from None
    res = np.linalg.norm(K @ U[dofmap.free] - F_f)
    if res > 1e-8 * np.linalg.norm(F_f):
        log.warning("equilibrium residual %.3e relative to |F|", res / np.linalg.norm(F_f))
    return U


def compliance(U: np.ndarray, F: np.ndarray) -> float:
    """``C = U^T F``."""
    if U.shape != F.shape:
        raise ValueError(f"shape mismatch {U.shape} vs {F.shape}")
    return float(U @ F)


def element_compliance_sum(model: AnalysisModel, U: np.ndarray, rho_e: np.ndarray) -> float:
    """Compliance as the element sum ``sum_e U_e^T K_e U_e``."""
    return float(np.sum(model.element_scale(rho_e) * model.element_energies(U)))
