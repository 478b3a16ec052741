import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gpmarchenko.fields import GridSpec
from gpmarchenko.kernels import operator_kernels
from gpmarchenko.marchenko import (
    S0,
    ContractionError,
    GridMismatch,
    HalfLineField,
    HalfLineGrid,
    T_dense,
    apply_Omega,
    apply_T,
    choose_halfline,
    far_field_gap,
    fixed_point_solve,
    invert_coercive,
    omega_dense,
    perturbed_grid_eval,
    reconstruct_u,
)
from gpmarchenko.nsoliton import u_N
from gpmarchenko.scattering import SQRT2, ReflectionCoefficient, validate

NONE = ReflectionCoefficient()
GAUSS = ReflectionCoefficient("gaussian", 0.01, 1.0)
THREE = validate([-0.4, 0.1, 0.5], [-1.0, -0.6, -2.0])


def _random_field(grid, seed, t=0.0, x=0.0):
    rng = np.random.default_rng(seed)
    vals = rng.normal(size=(2, grid.M + 1)) + 1j * rng.normal(size=(2, grid.M + 1))
    return HalfLineField(grid, vals * np.exp(-0.1 * grid.p), t, x)


def _conj_swap(phi):
    return HalfLineField(phi.grid, np.conj(phi.values[::-1]), phi.t, phi.x)


def test_halfline_grid():
    g = HalfLineGrid.from_step(10.0, 0.1)
    assert g.M == 100 and g.dp == pytest.approx(0.1)
    assert g.weights.sum() == pytest.approx(10.0, abs=1e-12)
    assert g.weights[0] == pytest.approx(0.05)
    assert g.coarse().M == 50
    with pytest.raises(ValueError):
        HalfLineGrid(10.0, 5).coarse()
    with pytest.raises(ValueError):
        HalfLineGrid(0.0, 10)


def test_field_norms_and_mismatch():
    g = HalfLineGrid.from_step(40.0, 0.01)
    phi = HalfLineField(g, np.vstack([np.exp(-g.p), np.zeros_like(g.p)]))
    assert phi.l2() == pytest.approx(math.sqrt(0.5), abs=1e-4)
    assert phi.h1() == pytest.approx(1.0, abs=1e-3)
    other = HalfLineField.zeros(HalfLineGrid.from_step(40.0, 0.02))
    with pytest.raises(GridMismatch):
        phi.inner(other)
    with pytest.raises(GridMismatch):
        HalfLineField(g, np.zeros((2, 3)))


def test_omega_moment_oracle():
    """N = 1, Phi = (exp(-nu s), 0): Omega_x Phi = A_1 (1, 0) exp(-nu (2x + p)) / (2 nu) up to O(dp^2)."""
    d = validate([0.3], [-1.2])
    nu = d.nu[0]
    v = np.array([1.0, SQRT2 * (0.3 - 1j * nu)])
    A = 1.2 * np.outer(v, v.conj())
    x = 0.4
    errs = []
    for dp in (0.1, 0.05):
        g = HalfLineGrid.from_step(60.0, dp)
        phi = HalfLineField(g, np.vstack([np.exp(-nu * g.p), 0 * g.p]))
        out = apply_Omega(d, 0.0, x, phi).values
        exact = A[:, :1] * np.exp(-nu * (2 * x + g.p))[None, :] / (2 * nu)
        errs.append(np.max(np.abs(out - exact)))
    assert errs[1] < 1e-3
    assert math.log2(errs[0] / errs[1]) == pytest.approx(2.0, abs=0.1)


def test_omega_rank_form_matches_dense():
    g = HalfLineGrid.from_step(15.0, 0.1)
    phi = _random_field(g, 1)
    out = apply_Omega(THREE, 0.3, -0.5, phi).values.reshape(-1)
    dense = omega_dense(THREE, 0.3, -0.5, g) @ phi.values.reshape(-1)
    np.testing.assert_allclose(out, dense, atol=1e-11 * np.abs(dense).max())


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(-3, 3), st.floats(-1, 1))
def test_omega_positive(seed, x, t):
    g = HalfLineGrid.from_step(12.0, 0.1)
    phi = _random_field(g, seed, t, x)
    q = apply_Omega(THREE, t, x, phi).inner(phi)
    assert q.real >= -1e-12 * phi.l2() ** 2
    assert abs(q.imag) <= 1e-10 * max(abs(q), phi.l2() ** 2)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(-3, 3))
def test_coercive_inverse(seed, x):
    g = HalfLineGrid.from_step(12.0, 0.1)
    rhs = _random_field(g, seed, 0.2, x)
    theta = invert_coercive(THREE, 0.2, x, rhs)
    back = theta.scaled(S0) + apply_Omega(THREE, 0.2, x, theta)
    assert (back - rhs).l2() <= 1e-10 * rhs.l2()
    assert theta.l2() <= rhs.l2() / S0 * (1 + 1e-12)
    assert (back.inner(theta)).real >= S0 * theta.l2() ** 2 * (1 - 1e-12)


def test_woodbury_matches_dense():
    g = HalfLineGrid.from_step(15.0, 0.1)
    rhs = _random_field(g, 3, 0.0, -1.0)
    a = invert_coercive(THREE, 0.0, -1.0, rhs)
    b = invert_coercive(THREE, 0.0, -1.0, rhs, method="dense")
    assert np.max(np.abs(a.values - b.values)) <= 1e-10
    with pytest.raises(ValueError):
        invert_coercive(THREE, 0.0, 0.0, rhs, method="lu")


def test_invert_without_solitons():
    g = HalfLineGrid.from_step(5.0, 0.1)
    rhs = _random_field(g, 4)
    np.testing.assert_allclose(invert_coercive(validate([], []), 0.0, 0.0, rhs).values, rhs.values / S0)


def test_conjugation_symmetry():
    """J conj(K Phi) = K (J conj Phi) for both Omega_x and T_x, with J swapping components."""
    g = HalfLineGrid.from_step(12.0, 0.1)
    phi = _random_field(g, 5, 0.3, 0.2)
    lhs = _conj_swap(apply_Omega(THREE, 0.3, 0.2, phi))
    rhs = apply_Omega(THREE, 0.3, 0.2, _conj_swap(phi))
    np.testing.assert_allclose(lhs.values, rhs.values, atol=1e-13)
    refl = ReflectionCoefficient("gaussian", 0.1, 1.0)
    tab = operator_kernels(THREE, refl, 0.3, 0.2, 0.2, g.P, g.dp)
    lhs = _conj_swap(apply_T(tab, 0.2, phi))
    rhs = apply_T(tab, 0.2, _conj_swap(phi))
    np.testing.assert_allclose(lhs.values, rhs.values, atol=1e-13)


def test_T_fast_matches_dense():
    refl = ReflectionCoefficient("table", 0.2, samples=((0.71, 1.0), (2.0, 0.2), (-0.71, -0.5), (-3.0, 0.3)))
    g = HalfLineGrid.from_step(10.0, 0.1)
    tab = operator_kernels(THREE, refl, 0.5, -0.7, -0.7, g.P, g.dp)
    phi = _random_field(g, 6)
    fast = apply_T(tab, -0.7, phi).values.reshape(-1)
    dense = T_dense(tab, -0.7, g) @ phi.values.reshape(-1)
    np.testing.assert_allclose(fast, dense, atol=1e-13 * max(1.0, np.abs(dense).max()))


def test_T_gaussian_convolution_oracle():
    """At t = 0, N = 0: T_12 = -sqrt2 F12 with F12 = a/sqrt(pi) exp(-z^2/4).

    For Phi = (0, exp(-(s - s0)^2)) the off-diagonal output is
    -sqrt2 a/sqrt(pi) sqrt(4 pi/5) exp(-(2x + p + s0)^2 / 5).
    """
    a, s0, x = 0.05, 8.0, -6.0
    refl = ReflectionCoefficient("gaussian", a, 1.0)
    g = HalfLineGrid.from_step(20.0, 0.05)
    tab = operator_kernels(validate([], []), refl, 0.0, x, x, g.P, g.dp)
    phi = HalfLineField(g, np.vstack([0 * g.p, np.exp(-(g.p - s0) ** 2)]))
    out = apply_T(tab, x, phi).values
    exact = -SQRT2 * a / math.sqrt(math.pi) * math.sqrt(4 * math.pi / 5) * np.exp(-(2 * x + g.p + s0) ** 2 / 5)
    assert np.max(np.abs(out[0] - exact)) <= 1e-8
    assert np.max(np.abs(out[1])) <= 1e-14


@pytest.mark.parametrize("t", [0.0, 0.5])
def test_T_operator_norm_bound(t):
    refl = ReflectionCoefficient("gaussian", 0.2, 1.0)
    g = HalfLineGrid.from_step(20.0, 0.05)
    tab = operator_kernels(validate([], []), refl, t, 0.0, 0.0, g.P, g.dp)
    w = np.sqrt(np.tile(g.weights, 2))
    norm = np.linalg.norm(w[:, None] * T_dense(tab, 0.0, g) / w[None, :], 2)
    assert norm <= S0 * refl.sup_weighted(0)


def test_reflectionless_solve_is_trivial():
    d = validate([0.3], [-1.0])
    g = HalfLineGrid.from_step(20.0, 0.1)
    psi, diag = fixed_point_solve(d, NONE, 0.0, 0.0, g)
    assert np.all(psi.values == 0)
    assert diag.iterations == 1
    u, _ = reconstruct_u(d, NONE, 0.7, -0.3)
    assert u == u_N(d, 0.7, -0.3)


def test_fixed_point_contracts_and_banach_bound():
    d = validate([0.3], [-1.0])
    refl = ReflectionCoefficient("gaussian", 1.0, 1.0)
    g = choose_halfline(d, refl, 0.0, 0.0, 0.0)
    psi, diag = fixed_point_solve(d, refl, 0.0, 0.0, g)
    assert diag.contraction_ratio < 0.5
    assert diag.residual <= 1e-9
    assert psi.l2() <= diag.first_update / (1 - diag.contraction_ratio)


def test_remainder_scales_linearly_with_amplitude():
    d = validate([0.3], [-1.0])
    norms = []
    for a in (1e-3, 1e-2):
        refl = ReflectionCoefficient("gaussian", a, 1.0)
        psi, _ = fixed_point_solve(d, refl, 0.0, 0.0, choose_halfline(d, refl, 0.0, 0.0, 0.0))
        norms.append(psi.l2())
    assert norms[1] / norms[0] == pytest.approx(10.0, rel=0.05)


def test_divergence_is_reported():
    d = validate([0.3], [-1.0])
    refl = ReflectionCoefficient("gaussian", 10.0, 1.0)
    with pytest.raises(ContractionError) as err:
        fixed_point_solve(d, refl, 0.0, 0.0, choose_halfline(d, refl, 0.0, 0.0, 0.0))
    assert err.value.ratio >= 1.0
    with pytest.raises(ValueError):
        fixed_point_solve(d, refl, 0.0, 0.0, HalfLineGrid(10.0, 100), tol=0.5)


def test_far_field_gap():
    d = validate([0.3], [-1.0])
    assert far_field_gap(d, NONE, 0.0, 0.0) == 0.0
    gaps = {x: far_field_gap(d, GAUSS, 0.0, x) for x in (-15.0, 0.0, 15.0)}
    assert gaps[15.0] < gaps[0.0] and gaps[-15.0] < gaps[0.0]
    assert gaps[15.0] <= 1e-3 and gaps[-15.0] <= 1e-3


def test_grid_convergence_within_budget():
    d = validate([0.3], [-1.0])
    refl = ReflectionCoefficient("gaussian", 0.05, 1.0)
    g = choose_halfline(d, refl, 0.5, 0.0, 0.0, dp=0.1)
    u, diag = reconstruct_u(d, refl, 0.5, 0.0, g, estimate_error=True)
    fine = HalfLineGrid.from_step(2 * g.P, g.dp / 2)
    uf, _ = reconstruct_u(d, refl, 0.5, 0.0, fine)
    assert abs(u - uf) <= diag.error_budget
    assert "richardson" in diag.budget_parts


def test_choose_halfline():
    d = validate([0.3], [-1.0])
    g = choose_halfline(d, GAUSS, 0.0, -2.0, 2.0)
    assert g.M % 2 == 0
    assert math.exp(-d.nu[0] * g.P) < 1e-12
    assert g.P >= GAUSS.spatial_extent() + 4.0


def test_perturbed_grid_eval_thread_independent(monkeypatch):
    d = validate([0.3], [-1.0])
    spec = GridSpec(0.0, 0.5, 0.5, -2.0, 2.0, 1.0)
    monkeypatch.setenv("GPM_THREADS", "1")
    a, diags = perturbed_grid_eval(d, GAUSS, spec, dp=0.1)
    monkeypatch.setenv("GPM_THREADS", "3")
    b, _ = perturbed_grid_eval(d, GAUSS, spec, dp=0.1)
    np.testing.assert_array_equal(a.u, b.u)
    assert a.provenance == "perturbed" and len(diags) == 10
    assert a.meta["max_ratio"] < 0.5
    z, _ = perturbed_grid_eval(d, NONE, spec)
    np.testing.assert_array_equal(z.u, u_N(d, spec.t_axis()[:, None], spec.x_axis()[None, :]))
