from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from igashell.geometry import (
    GeometryConfigError,
    ShellModel,
    SingularFrameError,
    build_multilevel,
    frame_derivs_vec,
    jacobian,
    load_surface,
    local_frame,
    make_preset,
    shell_point,
    surface_from_dict,
    surface_to_dict,
)
from igashell.splines import NurbsSurface, SplineDomainError, surface_derivs, surface_point, uniform_knots

params = st.floats(0.0, 1.0, allow_nan=False)


def test_flat_plate_normal():
    f = local_frame(make_preset("plate"), 0.3, 0.6)
    np.testing.assert_allclose(f.v3, [0, 0, 1], atol=1e-12)


@pytest.mark.parametrize("name", ["plate", "hypar", "cylinder", "twisted"])
@settings(max_examples=20, deadline=None)
@given(s=params, t=params)
def test_frames_are_orthonormal(name, s, t):
    f = local_frame(make_preset(name), s, t)
    M = f.matrix
    np.testing.assert_allclose(M.T @ M, np.eye(3), atol=1e-10)
    _, Ss, St = surface_derivs(make_preset(name), s, t)
    n = np.cross(Ss, St)
    np.testing.assert_allclose(f.v3, n / np.linalg.norm(n), atol=1e-12)


def test_frame_axis_rule():
    # normal along z: x is the first axis not parallel, v1 = v3 x e_x = e_y
    f = local_frame(make_preset("plate"), 0.5, 0.5)
    np.testing.assert_allclose(f.v1, [0, 1, 0], atol=1e-12)
    np.testing.assert_allclose(f.v2, [-1, 0, 0], atol=1e-12)


def test_frame_skips_parallel_axis():
    # plate in the y-z plane: normal along x, so the y axis is used
    net = np.zeros((2, 2, 3))
    net[1, 0] = (0, 1, 0)
    net[0, 1] = (0, 0, 1)
    net[1, 1] = (0, 1, 1)
    surf = NurbsSurface(uniform_knots(1, 1), uniform_knots(1, 1), net)
    f = local_frame(surf, 0.5, 0.5)
    np.testing.assert_allclose(f.v3, [1, 0, 0], atol=1e-12)
    np.testing.assert_allclose(f.v1, np.cross(f.v3, [0, 1, 0]), atol=1e-12)


def test_cylinder_normal_is_radial():
    surf = make_preset("cylinder", radius=50.0)
    s, t = 0.5, 0.5
    S = surface_point(surf, s, t)
    radial = np.array([0.0, S[1], S[2]])
    radial /= np.linalg.norm(radial)
    v3 = local_frame(surf, s, t).v3
    assert abs(v3 @ radial) >= 1 - 1e-8
    rng = np.random.default_rng(0)
    for s, t in rng.uniform(0, 1, size=(10, 2)):
        S = surface_point(surf, s, t)
        assert abs(np.hypot(S[1], S[2]) - 50.0) < 1e-10
        r = np.array([0.0, S[1], S[2]]) / 50.0
        assert abs(local_frame(surf, s, t).v3 @ r) >= 1 - 1e-8


def test_degenerate_tangents():
    net = np.zeros((2, 2, 3))
    net[1, :, 0] = 1.0  # t-direction collapsed
    surf = NurbsSurface(uniform_knots(1, 1), uniform_knots(1, 1), net)
    with pytest.raises(SingularFrameError):
        local_frame(surf, 0.5, 0.5)


def test_shell_point_offsets():
    m = ShellModel(make_preset("hypar"), 5.0)
    s, t = 0.3, 0.7
    S = surface_point(m.mid_surface, s, t)
    v3 = local_frame(m.mid_surface, s, t).v3
    np.testing.assert_array_equal(shell_point(m, s, t, 0.0), S)
    np.testing.assert_allclose(shell_point(m, s, t, 1.0), S + 2.5 * v3, atol=1e-12)
    np.testing.assert_allclose(shell_point(m, s, t, -1.0), S - 2.5 * v3, atol=1e-12)
    assert abs(np.linalg.norm(shell_point(m, s, t, 1.0) - shell_point(m, s, t, -1.0)) - 5.0) <= 1e-10


def test_shell_point_rejects_zeta():
    m = ShellModel(make_preset("plate"), 1.0)
    with pytest.raises(SplineDomainError):
        shell_point(m, 0.5, 0.5, 1.5)


def test_thickness_must_be_positive():
    with pytest.raises(GeometryConfigError):
        ShellModel(make_preset("plate"), 0.0)


def test_flat_plate_jacobian():
    m = ShellModel(make_preset("plate", size=100.0), 1.0)
    J = jacobian(m, 0.4, 0.2, 0.3)
    np.testing.assert_allclose(J, np.diag([100.0, 100.0, 0.5]), atol=1e-9)


def test_jacobian_determinant_at_midsurface():
    m = ShellModel(make_preset("hypar"), 5.0)
    s, t = 0.2, 0.9
    _, Ss, St = surface_derivs(m.mid_surface, s, t)
    J = jacobian(m, s, t, 0.0)
    assert abs(np.linalg.det(J) - np.linalg.norm(np.cross(Ss, St)) * 2.5) <= 1e-10 * abs(np.linalg.det(J))


@pytest.mark.parametrize("name", ["hypar", "cylinder", "twisted"])
def test_jacobian_matches_finite_differences(name):
    m = ShellModel(make_preset(name), 5.0)
    rng = np.random.default_rng(1)
    h = 1e-6
    for s, t, z in zip(*rng.uniform(0.05, 0.95, size=(2, 5)), rng.uniform(-0.9, 0.9, 5)):
        J = jacobian(m, s, t, z)
        fd = np.column_stack(
            [
                (shell_point(m, s + h, t, z) - shell_point(m, s - h, t, z)) / (2 * h),
                (shell_point(m, s, t + h, z) - shell_point(m, s, t - h, z)) / (2 * h),
                (shell_point(m, s, t, z + h) - shell_point(m, s, t, z - h)) / (2 * h),
            ]
        )
        assert np.linalg.norm(J - fd) <= 1e-5 * np.linalg.norm(J)


def test_frame_derivatives_of_cylinder_normal():
    # on a cylinder of radius R the normal turns at rate |S_s| / R along the arc
    surf = make_preset("cylinder", radius=50.0)
    s = np.array([0.5])
    t = np.array([0.5])
    d = frame_derivs_vec(surf, s, t)
    _, Ss, _ = surface_derivs(surf, 0.5, 0.5)
    assert abs(np.linalg.norm(d["dv3_s"][0]) - np.linalg.norm(Ss) / 50.0) <= 1e-6 * np.linalg.norm(Ss) / 50.0
    np.testing.assert_allclose(d["dv3_t"][0], 0.0, atol=1e-8)


def test_multilevel_counts():
    ml = build_multilevel(ShellModel(make_preset("plate"), 5.0), (15, 15), (50, 50))
    assert ml.design_basis.shape == (17, 17)
    assert ml.analysis_basis.shape == (52, 52)


def test_multilevel_equal_spans_gives_identical_bases():
    ml = build_multilevel(ShellModel(make_preset("hypar"), 5.0), (8, 8), (8, 8))
    np.testing.assert_array_equal(ml.design_basis.control_net, ml.analysis_basis.control_net)
    np.testing.assert_array_equal(ml.design_basis.knots_s.knots, ml.analysis_basis.knots_s.knots)


@pytest.mark.parametrize("name", ["plate", "hypar", "cylinder", "twisted"])
def test_multilevel_preserves_geometry(name):
    cad = ShellModel(make_preset(name), 5.0)
    ml = build_multilevel(cad, (7, 9), (20, 23))
    rng = np.random.default_rng(2)
    diag = cad.mid_surface.bbox_diagonal()
    for s, t in rng.uniform(0, 1, size=(100, 2)):
        P = surface_point(cad.mid_surface, s, t)
        assert np.linalg.norm(surface_point(ml.design_basis, s, t) - P) <= 1e-10 * diag
        assert np.linalg.norm(surface_point(ml.analysis_basis, s, t) - P) <= 1e-10 * diag


def test_multilevel_rejects_bad_spans():
    cad = ShellModel(make_preset("plate"), 5.0)
    with pytest.raises(GeometryConfigError):
        build_multilevel(cad, (10, 10), (5, 5))
    with pytest.raises(GeometryConfigError):
        build_multilevel(cad, (0, 4), (5, 5))


def test_hypar_shape():
    surf = make_preset("hypar", size=100.0, height=20.0)
    np.testing.assert_allclose(surface_point(surf, 0, 0), [-50, -50, 0], atol=1e-12)
    np.testing.assert_allclose(surface_point(surf, 0.5, 0.5), [0, 0, 0], atol=1e-12)
    np.testing.assert_allclose(surface_point(surf, 0.5, 0.0)[2], -20.0, atol=1e-12)
    np.testing.assert_allclose(surface_point(surf, 0.0, 0.5)[2], 20.0, atol=1e-12)
    rng = np.random.default_rng(3)
    for s, t in rng.uniform(0, 1, size=(20, 2)):
        x, y, z = surface_point(surf, s, t)
        assert abs(z - 20.0 * ((x / 50) ** 2 - (y / 50) ** 2)) < 1e-10


def test_twisted_edges_are_straight_and_rotated():
    surf = make_preset("twisted", size=100.0, height=50.0)
    a = surface_point(surf, 1, 0) - surface_point(surf, 0, 0)
    b = surface_point(surf, 1, 1) - surface_point(surf, 0, 1)
    assert abs(a @ b) < 1e-10
    assert abs(np.linalg.norm(a) - 100.0) < 1e-10


def test_unknown_preset():
    with pytest.raises(GeometryConfigError, match="choose from"):
        make_preset("torus")


def test_surface_json_round_trip(tmp_path):
    surf = make_preset("cylinder")
    path = tmp_path / "surf.json"
    path.write_text(json.dumps(surface_to_dict(surf)))
    back = load_surface(path)
    np.testing.assert_array_equal(back.control_net, surf.control_net)
    np.testing.assert_array_equal(back.weights, surf.weights)
    with pytest.raises(GeometryConfigError):
        surface_from_dict({"degrees": [2, 2]})
