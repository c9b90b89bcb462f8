from __future__ import annotations

from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from igashell.analysis import AnalysisModel
from igashell.density import (
    DensityConfigError,
    DensityField,
    LocalVolumeSpec,
    aggregate_pmean,
    design_projection,
    element_densities,
    eval_density,
    field_from_dict,
    field_to_dict,
    heaviside,
    heaviside_deriv,
    load_field,
    local_average,
    mean_element_length,
    neighborhood_matrix,
    refine_field,
    save_field,
    total_volume,
)
from igashell.geometry import ShellModel, build_multilevel, make_preset

unit = st.floats(0.0, 1.0, allow_nan=False)


@pytest.fixture(scope="module")
def ml():
    return build_multilevel(ShellModel(make_preset("hypar"), 5.0), (6, 7), (18, 21))


def random_field(basis, seed=0, tau=4.0):
    rng = np.random.default_rng(seed)
    return DensityField(basis, rng.uniform(0, 1, basis.shape), tau)


def test_uniform_field_evaluates_to_constant(ml):
    fld = DensityField.uniform(ml.design_basis, 0.3)
    rng = np.random.default_rng(0)
    vals = eval_density(fld, rng.uniform(0, 1, 200), rng.uniform(0, 1, 200))
    np.testing.assert_allclose(vals, 0.3, atol=1e-12)


def test_binary_coefficients_stay_in_unit_interval(ml):
    rng = np.random.default_rng(1)
    fld = DensityField(ml.design_basis, rng.integers(0, 2, ml.design_basis.shape).astype(float))
    vals = eval_density(fld, rng.uniform(0, 1, 500), rng.uniform(0, 1, 500))
    assert vals.min() >= 0.0 and vals.max() <= 1.0


def test_corner_interpolates_coefficient(ml):
    fld = random_field(ml.design_basis)
    assert eval_density(fld, 0.0, 0.0) == pytest.approx(fld.coefficients[0, 0], abs=1e-14)
    assert eval_density(fld, 1.0, 1.0) == pytest.approx(fld.coefficients[-1, -1], abs=1e-14)


@pytest.mark.parametrize(
    "kw",
    [
        {"coefficients": np.full((3, 3), 1.2)},
        {"coefficients": np.full((2, 2), 0.5)},
        {"tau": 0.0},
        {"kappa": 0.8},
    ],
)
def test_field_validation(kw):
    basis = make_preset("plate")
    args = {"coefficients": np.full((3, 3), 0.5), "tau": 2.0, "kappa": 0.5} | kw
    with pytest.raises(DensityConfigError):
        DensityField(basis, **args)


@pytest.mark.parametrize("tau", [1.0, 2.0, 8.0, 64.0])
def test_heaviside_fixed_points(tau):
    assert heaviside(0.5, tau) == pytest.approx(0.5, abs=1e-15)
    assert heaviside(0.0, tau) == pytest.approx(0.0, abs=1e-15)
    assert heaviside(1.0, tau) == pytest.approx(1.0, abs=1e-15)


def test_heaviside_sharpening():
    taus = [1, 2, 4, 8, 16, 32, 64, 128]
    lo = [heaviside(0.4, t) for t in taus]
    hi = [heaviside(0.6, t) for t in taus]
    assert np.all(np.diff(lo) < 0) and np.all(np.diff(hi) > 0)
    assert lo[-1] < 1e-5 and hi[-1] > 1 - 1e-5


def test_heaviside_rejects_bad_tau():
    with pytest.raises(DensityConfigError):
        heaviside(0.3, -1.0)


def test_heaviside_derivative_matches_finite_differences():
    rng = np.random.default_rng(2)
    h = 1e-6
    for rho, tau, kappa in zip(rng.uniform(0, 1, 20), rng.uniform(1, 8, 20), rng.uniform(0.25, 0.75, 20)):
        fd = (heaviside(rho + h, tau, kappa) - heaviside(rho - h, tau, kappa)) / (2 * h)
        an = heaviside_deriv(rho, tau, kappa)
        assert abs(an - fd) <= 1e-6 * abs(an)


@settings(max_examples=50, deadline=None)
@given(a=unit, b=unit, tau=st.floats(0.5, 100), kappa=st.floats(0.25, 0.75))
def test_heaviside_monotone(a, b, tau, kappa):
    lo, hi = min(a, b), max(a, b)
    assert heaviside(lo, tau, kappa) <= heaviside(hi, tau, kappa)
    if kappa == 0.5:
        assert 0.0 <= heaviside(lo, tau) <= 1.0


def test_element_densities_uniform(ml):
    model = AnalysisModel(ml.analysis)
    for c, tau in ((0.3, 8.0), (0.5, 64.0)):
        fld = DensityField.uniform(ml.design_basis, c, tau)
        np.testing.assert_allclose(element_densities(fld, model.centers), heaviside(c, tau), atol=1e-12)


def test_refined_field_gives_same_element_densities(ml):
    model = AnalysisModel(ml.analysis)
    fld = random_field(ml.design_basis, 3)
    ref = refine_field(fld, [0.1, 0.55], [0.3])
    assert ref.basis.shape == (fld.basis.shape[0] + 2, fld.basis.shape[1] + 1)
    np.testing.assert_allclose(element_densities(ref, model.centers), element_densities(fld, model.centers), atol=1e-10)


def test_projection_matrix_rows_sum_to_one(ml):
    model = AnalysisModel(ml.analysis)
    P = design_projection(ml.design_basis, model.centers)
    np.testing.assert_allclose(np.asarray(P.sum(axis=1)).ravel(), 1.0, atol=1e-12)
    fld = random_field(ml.design_basis, 4)
    np.testing.assert_allclose(P @ fld.vector, eval_density(fld, model.centers[:, 0], model.centers[:, 1]), atol=1e-14)


def test_total_volume():
    ml = build_multilevel(ShellModel(make_preset("plate"), 5.0), (5, 5), (10, 10))
    model = AnalysisModel(ml.analysis)
    Vs = total_volume(np.ones(model.n_elements), model.Ve0)
    assert Vs == pytest.approx(50000.0, rel=1e-3)
    assert total_volume(np.full(model.n_elements, 0.3), model.Ve0) == pytest.approx(0.3 * Vs, rel=1e-12)


def grid_centroids(n, h=1.0):
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    return np.column_stack([i.ravel() * h, j.ravel() * h, np.zeros(n * n)])


def test_local_average_nine_cell_enumeration():
    c = grid_centroids(3)
    W = neighborhood_matrix(c, np.ones(9), np.sqrt(2.0))
    rho = np.zeros(9)
    rho[4] = 1.0
    assert local_average(rho, W)[4] == pytest.approx(1 / 9, abs=1e-15)
    # corner element sees itself and three neighbours
    assert local_average(rho, W)[0] == pytest.approx(1 / 4, abs=1e-15)


def test_singleton_neighborhood_is_identity():
    c = grid_centroids(4)
    W = neighborhood_matrix(c, np.ones(16), 0.5)
    rho = np.random.default_rng(5).uniform(size=16)
    np.testing.assert_array_equal(local_average(rho, W), rho)


@settings(max_examples=30, deadline=None)
@given(
    rho=arrays(np.float64, 25, elements=unit),
    vol=arrays(np.float64, 25, elements=st.floats(0.1, 3.0)),
    radius=st.floats(0.5, 4.0),
)
def test_local_average_bounded_and_linear(rho, vol, radius):
    W = neighborhood_matrix(grid_centroids(5), vol, radius)
    rb = local_average(rho, W)
    assert np.all(rb >= rho.min() - 1e-12) and np.all(rb <= rho.max() + 1e-12)
    np.testing.assert_allclose(local_average(np.full(25, 0.7), W), 0.7, atol=1e-12)
    np.testing.assert_allclose(local_average(2 * rho + 1, W), 2 * rb + 1, atol=1e-12)


def test_local_average_weights_by_volume():
    c = grid_centroids(2)
    W = neighborhood_matrix(c, np.array([1.0, 3.0, 1.0, 1.0]), 1.0)
    rho = np.array([0.0, 1.0, 0.0, 0.0])
    # element 0 sees 0, 1 and 2 (distance 1); weights 1, 3, 1
    assert local_average(rho, W)[0] == pytest.approx(3 / 5, abs=1e-15)


def test_mean_element_length():
    assert mean_element_length(np.array([4.0, 9.0])) == 2.5


def test_pmean_constant():
    assert aggregate_pmean(np.full(10, 0.37), 16) == pytest.approx(0.37, rel=1e-14)


def test_pmean_two_point_value():
    getcontext().prec = 40
    expected = float(Decimal(0.5) ** (Decimal(1) / Decimal(16)))
    assert aggregate_pmean(np.array([0.0, 1.0]), 16) == pytest.approx(expected, rel=1e-14)


def test_pmean_zero_and_errors():
    assert aggregate_pmean(np.zeros(4), 16) == 0.0
    with pytest.raises(DensityConfigError):
        aggregate_pmean(np.ones(3), 0.0)
    with pytest.raises(DensityConfigError):
        LocalVolumeSpec(8, 0.5, -1.0)
    with pytest.raises(DensityConfigError):
        LocalVolumeSpec(8, 1.5)


@settings(max_examples=50, deadline=None)
@given(x=arrays(np.float64, st.integers(2, 30), elements=st.floats(0.01, 1.0)), k=st.integers(0, 29))
def test_pmean_properties(x, k):
    vals = [aggregate_pmean(x, g) for g in (1, 4, 16, 64)]
    assert all(b >= a * (1 - 1e-12) for a, b in zip(vals, vals[1:]))
    assert vals[-1] <= x.max() * (1 + 1e-12)
    y = x.copy()
    y[k % x.size] += 0.1
    assert aggregate_pmean(y, 16) >= aggregate_pmean(x, 16)
    # strict once the change is above double-precision resolution of the mean
    if y[k % x.size] >= 0.5 * y.max():
        assert aggregate_pmean(y, 16) > aggregate_pmean(x, 16)


def test_pmean_tends_to_max():
    x = np.random.default_rng(6).uniform(size=50)
    assert aggregate_pmean(x, 2000) == pytest.approx(x.max(), rel=5e-3)


def test_field_round_trip_is_bit_exact(tmp_path, ml):
    fld = random_field(ml.design_basis, 7, tau=16.0)
    path = tmp_path / "field.json"
    save_field(fld, path, {"note": "x"})
    back = load_field(path)
    np.testing.assert_array_equal(back.coefficients, fld.coefficients)
    np.testing.assert_array_equal(back.basis.control_net, fld.basis.control_net)
    assert back.tau == fld.tau and back.kappa == fld.kappa


def test_field_dict_validation(ml):
    d = field_to_dict(random_field(ml.design_basis))
    d["extra"] = 1
    with pytest.raises(DensityConfigError, match="unknown"):
        field_from_dict(d)
    with pytest.raises(DensityConfigError, match="missing"):
        field_from_dict({"basis": d["basis"]})
