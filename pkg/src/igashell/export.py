"""Legacy-VTK ASCII export of the analysis mesh with element densities."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .splines import NurbsSurface, surface_derivs_vec

__all__ = ["mesh_points", "write_vtk"]


def mesh_points(surf: NurbsSurface) -> tuple[np.ndarray, np.ndarray]:
    """Mid-surface points at the element corners and quad connectivity.

    Elements are numbered ``i_s * n_t_spans + i_t``, matching the analysis
    element order, so cell data can be written in element order.
    """
    bs, bt = surf.knots_s.breakpoints, surf.knots_t.breakpoints
    S, T = np.meshgrid(bs, bt, indexing="ij")
    pts, _, _ = surface_derivs_vec(surf, S.ravel(), T.ravel())
    ns, nt = bs.size - 1, bt.size - 1
    node = np.arange(bs.size * bt.size).reshape(bs.size, bt.size)
    quads = np.stack([node[:-1, :-1], node[1:, :-1], node[1:, 1:], node[:-1, 1:]], axis=-1).reshape(ns * nt, 4)
    return pts, quads


def write_vtk(
    path: str | Path,
    surf: NurbsSurface,
    density: np.ndarray | None = None,
    polylines: Sequence[np.ndarray] = (),
    title: str = "shell mid-surface",
) -> None:
    """Unstructured grid of quads (``density`` per element) plus optional polylines.

    Polylines (for instance faired boundaries mapped to the mid-surface) are
    appended as extra cells; the ``cell_kind`` array is 0 for elements and 1
    for polylines, whose ``density`` entry is set to 0.5.
    """
    pts, quads = mesh_points(surf)
    n_el = len(quads)
    dens = np.ones(n_el) if density is None else np.asarray(density, dtype=float)
    if dens.shape != (n_el,):
        raise ValueError(f"expected {n_el} element densities, got {dens.shape}")
    all_pts = [pts]
    lines = []
    offset = len(pts)
    for pl in polylines:
        pl = np.asarray(pl, dtype=float)
        all_pts.append(pl)
        lines.append(np.arange(offset, offset + len(pl)))
        offset += len(pl)
    P = np.vstack(all_pts)
    n_cells = n_el + len(lines)
    size = 5 * n_el + sum(len(l) + 1 for l in lines)
    out = ["# vtk DataFile Version 3.0", title[:255].replace("\n", " "), "ASCII", "DATASET UNSTRUCTURED_GRID"]
    out.append(f"POINTS {len(P)} double")
    out.extend(f"{x:.17g} {y:.17g} {z:.17g}" for x, y, z in P)
    out.append(f"CELLS {n_cells} {size}")
    out.extend("4 " + " ".join(map(str, q)) for q in quads)
    out.extend(f"{len(l)} " + " ".join(map(str, l)) for l in lines)
    out.append(f"CELL_TYPES {n_cells}")
    out.extend(["9"] * n_el + ["4"] * len(lines))
    out.append(f"CELL_DATA {n_cells}")
    out.append("SCALARS density double 1")
    out.append("LOOKUP_TABLE default")
    out.extend(f"{v:.17g}" for v in dens)
    out.extend(["0.5"] * len(lines))
    out.append("SCALARS cell_kind int 1")
    out.append("LOOKUP_TABLE default")
    out.extend(["0"] * n_el + ["1"] * len(lines))
    Path(path).write_text("\n".join(out) + "\n")
