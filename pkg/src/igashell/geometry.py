"""Shell solid map, local frames and the CAD / design / analysis hierarchy."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .splines import (
    KnotVector,
    NurbsSurface,
    SplineDomainError,
    refine_uniform,
    surface_derivs_vec,
    surface_point,
    uniform_knots,
)

__all__ = [
    "SingularFrameError",
    "SingularJacobianError",
    "GeometryConfigError",
    "ShellModel",
    "LocalFrame",
    "MultiLevelModel",
    "local_frame",
    "frames_vec",
    "frame_derivs_vec",
    "shell_point",
    "jacobian",
    "jacobian_vec",
    "build_multilevel",
    "make_preset",
    "surface_from_dict",
    "surface_to_dict",
    "load_surface",
    "PRESETS",
]

_AXES = np.eye(3)
_PARALLEL_TOL = 1e-6
FD_STEP = 1e-6


class SingularFrameError(ValueError):
    pass


class SingularJacobianError(ValueError):
    pass


class GeometryConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ShellModel:
    mid_surface: NurbsSurface
    thickness: float

    def __post_init__(self) -> None:
        if not self.thickness > 0:
            raise GeometryConfigError("thickness must be positive")


@dataclass(frozen=True)
class LocalFrame:
    v1: np.ndarray
    v2: np.ndarray
    v3: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        """3x3 matrix with the frame vectors as columns."""
        return np.column_stack([self.v1, self.v2, self.v3])


def _normals(Ss: np.ndarray, St: np.ndarray) -> np.ndarray:
    n = np.cross(Ss, St)
    nn = np.linalg.norm(n, axis=-1)
    scale = np.linalg.norm(Ss, axis=-1) * np.linalg.norm(St, axis=-1)
    if np.any(nn < 1e-12 * scale) or np.any(scale == 0):
        raise SingularFrameError("degenerate tangents: S_s x S_t vanishes")
    return n / nn[:, None]


def _pick_axes(v3: np.ndarray) -> np.ndarray:
    """Index of the first global axis not (nearly) parallel to each normal."""
    dots = np.abs(v3)  # |v3 . e_k|
    ok = dots < 1.0 - _PARALLEL_TOL
    return np.argmax(ok, axis=1)


def _frames_from_normals(v3: np.ndarray, axes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    v1 = np.cross(v3, _AXES[axes])
    v1 /= np.linalg.norm(v1, axis=1)[:, None]
    v2 = np.cross(v3, v1)
    return v1, v2


def frames_vec(
    surf: NurbsSurface, s: np.ndarray, t: np.ndarray, axes: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Local frames ``(v1, v2, v3)`` at many points, plus the axis index used for ``v1``.

    ``axes`` may be passed to force the reference axis (used to keep finite
    difference stencils on one branch of the axis rule).
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    _, Ss, St = surface_derivs_vec(surf, s, t)
    v3 = _normals(Ss, St)
    if axes is None:
        axes = _pick_axes(v3)
    v1, v2 = _frames_from_normals(v3, axes)
    return v1, v2, v3, axes


def local_frame(surf: NurbsSurface, s: float, t: float) -> LocalFrame:
    v1, v2, v3, _ = frames_vec(surf, np.array([s]), np.array([t]))
    return LocalFrame(v1[0], v2[0], v3[0])


def _stencil(u: np.ndarray, lo: float, hi: float, h: float) -> tuple[np.ndarray, np.ndarray]:
    a = np.maximum(u - h, lo)
    b = np.minimum(u + h, hi)
    return a, b


def frame_derivs_vec(surf: NurbsSurface, s: np.ndarray, t: np.ndarray, step: float = FD_STEP) -> dict[str, np.ndarray]:
    """Frames and their parametric derivatives at many points.

    Derivatives come from central differences with a step of ``step`` times
    the parametric domain length (one-sided at the domain edges).

    Returns a dict with keys ``v1, v2, v3`` and ``d{v}_{s,t}``.
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    (s_lo, s_hi), (t_lo, t_hi) = surf.domain
    v1, v2, v3, axes = frames_vec(surf, s, t)
    out = {"v1": v1, "v2": v2, "v3": v3}
    sa, sb = _stencil(s, s_lo, s_hi, step * (s_hi - s_lo))
    ta, tb = _stencil(t, t_lo, t_hi, step * (t_hi - t_lo))
    for name, (pa, pb, qa, qb, d) in {
        "s": (sa, sb, t, t, sb - sa),
        "t": (s, s, ta, tb, tb - ta),
    }.items():
        fa = frames_vec(surf, pa, qa, axes)
        fb = frames_vec(surf, pb, qb, axes)
        for k, key in enumerate(("v1", "v2", "v3")):
            out[f"d{key}_{name}"] = (fb[k] - fa[k]) / d[:, None]
    return out


def shell_point(model: ShellModel, s: float, t: float, zeta: float) -> np.ndarray:
    """Point of the shell solid: mid-surface offset by ``zeta * h / 2`` along the normal."""
    if not -1.0 <= zeta <= 1.0:
        raise SplineDomainError(f"zeta={zeta} outside [-1, 1]")
    _, Ss, St = surface_derivs_vec(model.mid_surface, np.array([s]), np.array([t]))
    v3 = _normals(Ss, St)
    return surface_point(model.mid_surface, s, t) + zeta * 0.5 * model.thickness * v3[0]


def jacobian_vec(
    model: ShellModel, s: np.ndarray, t: np.ndarray, zeta: np.ndarray, frames: dict[str, np.ndarray] | None = None
) -> np.ndarray:
    """Jacobians ``d(x, y, z) / d(s, t, zeta)`` with shape ``(n, 3, 3)``.

    Columns are ``dX/ds``, ``dX/dt``, ``dX/dzeta``.
    """
    surf = model.mid_surface
    s = np.atleast_1d(np.asarray(s, dtype=float))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    zeta = np.broadcast_to(np.asarray(zeta, dtype=float), s.shape)
    _, Ss, St = surface_derivs_vec(surf, s, t)
    if frames is None:
        frames = frame_derivs_vec(surf, s, t)
    half = 0.5 * model.thickness
    J = np.empty((s.size, 3, 3))
    J[:, :, 0] = Ss + (zeta * half)[:, None] * frames["dv3_s"]
    J[:, :, 1] = St + (zeta * half)[:, None] * frames["dv3_t"]
    J[:, :, 2] = half * frames["v3"]
    return J


def check_jacobians(J: np.ndarray, where: str = "") -> np.ndarray:
    det = np.linalg.det(J)
    scale = np.prod(np.linalg.norm(J, axis=1), axis=-1)
    bad = np.abs(det) < 1e-14 * scale
    if np.any(bad):
        raise SingularJacobianError(f"singular Jacobian{where} at {int(bad.sum())} point(s)")
    return det


def jacobian(model: ShellModel, s: float, t: float, zeta: float) -> np.ndarray:
    J = jacobian_vec(model, np.array([s]), np.array([t]), np.array([zeta]))
    check_jacobians(J)
    return J[0]


# --------------------------------------------------------------------------
# three-level hierarchy


@dataclass(frozen=True)
class MultiLevelModel:
    cad: ShellModel
    design_basis: NurbsSurface
    analysis_basis: NurbsSurface

    @property
    def analysis(self) -> ShellModel:
        return ShellModel(self.analysis_basis, self.cad.thickness)

    @property
    def n_design(self) -> tuple[int, int]:
        return self.design_basis.shape


def build_multilevel(cad: ShellModel, design_spans: tuple[int, int], analysis_spans: tuple[int, int]) -> MultiLevelModel:
    """Uniformly refine the CAD mid-surface into design and analysis bases."""
    base = (cad.mid_surface.knots_s.n_spans, cad.mid_surface.knots_t.n_spans)
    for name, spans in (("design", design_spans), ("analysis", analysis_spans)):
        if spans[0] < base[0] or spans[1] < base[1]:
            raise GeometryConfigError(f"{name} spans {spans} below CAD resolution {base}")
    if analysis_spans[0] < design_spans[0] or analysis_spans[1] < design_spans[1]:
        raise GeometryConfigError(f"analysis spans {analysis_spans} must be >= design spans {design_spans}")
    design = refine_uniform(cad.mid_surface, *design_spans)
    analysis = refine_uniform(cad.mid_surface, *analysis_spans)
    return MultiLevelModel(cad, design, analysis)


# --------------------------------------------------------------------------
# presets


def _bezier_from_linear(corner_fn, p: int, q: int) -> NurbsSurface:
    """Bezier patch of bi-degree (p, q) reproducing a bilinear map exactly.

    Control points sit at the images of the Greville abscissae, which is exact
    for maps of degree <= 1 in each variable.
    """
    gs = np.linspace(0.0, 1.0, p + 1)
    gt = np.linspace(0.0, 1.0, q + 1)
    net = np.array([[corner_fn(a, b) for b in gt] for a in gs], dtype=float)
    return NurbsSurface(uniform_knots(1, p), uniform_knots(1, q), net)


def _plate(size: float = 100.0, degree: int = 2, **_: float) -> NurbsSurface:
    L = float(size)
    return _bezier_from_linear(lambda a, b: (L * a, L * b, 0.0), degree, degree)


def _hypar(size: float = 100.0, height: float = 20.0, degree: int = 2, **_: float) -> NurbsSurface:
    """z = height * (sb^2 - tb^2) with sb, tb in [-1, 1]; exact biquadratic Bezier."""
    if degree != 2:
        raise GeometryConfigError("hypar preset is defined for degree 2")
    L = float(size)
    xs = np.array([-L / 2, 0.0, L / 2])
    a = np.array([1.0, -1.0, 1.0])  # Bernstein coefficients of (2s - 1)^2
    net = np.zeros((3, 3, 3))
    for i in range(3):
        for j in range(3):
            net[i, j] = (xs[i], xs[j], height * (a[i] - a[j]))
    return NurbsSurface(uniform_knots(1, 2), uniform_knots(1, 2), net)


def _cylinder(radius: float = 50.0, length: float = 100.0, degree: int = 2, **_: float) -> NurbsSurface:
    """Quarter cylinder roof: axis along x, arc from 45 to 135 degrees in the y-z plane."""
    if degree != 2:
        raise GeometryConfigError("cylinder preset is defined for degree 2")
    R = float(radius)
    c = np.sqrt(0.5)
    # middle point: intersection of the end tangents
    arc = np.array([[R * c, R * c], [0.0, R / c], [-R * c, R * c]])
    w_arc = np.array([1.0, c, 1.0])
    xs = np.array([0.0, length / 2, length])
    net = np.zeros((3, 3, 3))
    w = np.zeros((3, 3))
    for i in range(3):  # s along the arc
        for j in range(3):  # t along the axis
            net[i, j] = (xs[j], arc[i, 0], arc[i, 1])
            w[i, j] = w_arc[i]
    return NurbsSurface(uniform_knots(1, 2), uniform_knots(1, 2), net, w)


def _twisted(size: float = 100.0, height: float = 50.0, degree: int = 2, **_: float) -> NurbsSurface:
    """Ruled surface between two segments of length ``size`` rotated by 90 degrees."""
    L = float(size)
    dA = np.array([1.0, -1.0, 0.0]) / np.sqrt(2.0)
    dB = np.array([1.0, 1.0, 0.0]) / np.sqrt(2.0)
    top = np.array([0.0, 0.0, height])

    def fn(a: float, b: float) -> np.ndarray:
        A = L * (a - 0.5) * dA
        B = top + L * (a - 0.5) * dB
        return (1.0 - b) * A + b * B

    return _bezier_from_linear(fn, degree, degree)


PRESETS = {"plate": _plate, "hypar": _hypar, "cylinder": _cylinder, "twisted": _twisted}


def make_preset(name: str, **params: float) -> NurbsSurface:
    try:
        fn = PRESETS[name]
    except KeyError:
        raise GeometryConfigError(f"unknown geometry preset {name!r}; choose from {sorted(PRESETS)}") from None
    return fn(**params)


def surface_to_dict(surf: NurbsSurface) -> dict:
    p, q = surf.degrees
    return {
        "degrees": [p, q],
        "knots_s": surf.knots_s.knots.tolist(),
        "knots_t": surf.knots_t.knots.tolist(),
        "control_points": surf.control_net.tolist(),
        "weights": surf.weights.tolist(),
    }


def surface_from_dict(d: dict) -> NurbsSurface:
    required = {"degrees", "knots_s", "knots_t", "control_points"}
    missing = required - set(d)
    if missing:
        raise GeometryConfigError(f"surface file missing keys {sorted(missing)}")
    extra = set(d) - required - {"weights"}
    if extra:
        raise GeometryConfigError(f"unknown surface keys {sorted(extra)}")
    p, q = (int(x) for x in d["degrees"])
    return NurbsSurface(
        KnotVector(np.asarray(d["knots_s"], dtype=float), p),
        KnotVector(np.asarray(d["knots_t"], dtype=float), q),
        np.asarray(d["control_points"], dtype=float),
        None if d.get("weights") is None else np.asarray(d["weights"], dtype=float),
    )


def load_surface(path: str | Path) -> NurbsSurface:
    with open(path) as fh:
        return surface_from_dict(json.load(fh))
