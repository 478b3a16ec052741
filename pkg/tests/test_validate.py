import math

import numpy as np
import pytest

from gpmarchenko.fields import FieldGrid, GridSpec
from gpmarchenko.marchenko import HalfLineGrid, perturbed_grid_eval
from gpmarchenko.nsoliton import grid_eval, u_N
from gpmarchenko.scattering import ReflectionCoefficient, validate
from gpmarchenko.validate import (
    CNError,
    ValidationError,
    ZSState,
    cn_evolve,
    compare_fields,
    gp_residual,
    lax_residual,
    observed_order,
    residual_orders,
    spectral_lambda,
    zs_eigenfunction,
)

NONE = ReflectionCoefficient()
PAIR = validate([-0.5, 0.5], [-1.0, -1.0])


def _field(fn, spec, provenance="closed-form"):
    t, x = spec.t_axis(), spec.x_axis()
    return FieldGrid(t, x, fn(t[:, None], x[None, :]), provenance=provenance)


def _exact_boundary(data, x):
    return lambda s: (complex(u_N(data, s, x[0])), complex(u_N(data, s, x[-1])))


def test_observed_order():
    assert observed_order(4.0, 1.0) == 2.0
    assert observed_order(8.0, 1.0, ratio=2.0) == 3.0
    assert math.isnan(observed_order(0.0, 0.0))
    assert math.isnan(observed_order(1.0, 0.0))


def test_vacuum_residual_is_zero():
    spec = GridSpec(0.0, 1.0, 0.1, -2.0, 2.0, 0.1)
    rep = gp_residual(_field(lambda t, x: np.ones(np.broadcast(t, x).shape, complex), spec))
    assert rep.linf == 0.0 and rep.l2 == 0.0
    assert math.isnan(rep.summary()["order"])


def test_plane_wave_residual_order_two():
    """u = exp(i(kx - k^2 t)) solves the equation; discretization error is O(h^2 + tau^2)."""
    k = 1.3
    reps = []
    spec = GridSpec(0.0, 1.0, 0.02, -3.0, 3.0, 0.02)
    for s in (spec, spec.halved()):
        reps.append(gp_residual(_field(lambda t, x: np.exp(1j * (k * x - k * k * t)), s)))
    (order,) = residual_orders(reps)
    assert order == pytest.approx(2.0, abs=0.05)
    assert reps[1].order == order


def test_nsoliton_residual_order_two():
    rng = np.random.default_rng(11)
    d = validate(np.sort(rng.uniform(-0.6, 0.6, 3)), -rng.uniform(0.5, 2.0, 3))
    spec = GridSpec(-1.0, 1.0, 0.04, -8.0, 8.0, 0.04)
    reps = [gp_residual(grid_eval(d, s)) for s in (spec, spec.halved())]
    (order,) = residual_orders(reps)
    assert 1.8 <= order <= 2.2


def test_residual_needs_three_samples():
    f = FieldGrid(np.array([0.0, 1.0]), np.linspace(0, 1, 5), np.ones((2, 5)), provenance="closed-form")
    with pytest.raises(ValidationError):
        gp_residual(f)


def test_spectral_lambda_branch():
    assert spectral_lambda(0.0) == pytest.approx(math.sqrt(0.5))
    lam = spectral_lambda(0.3 - 0.45j)
    assert lam * lam - (0.3 - 0.45j) ** 2 == pytest.approx(0.5)
    assert lam.real > 0
    with pytest.raises(ValidationError):
        ZSState(0.1j, 0.2, 0.0, np.zeros(3), np.zeros((2, 3)))


def test_zs_vacuum():
    """With no solitons and no radiation, psi is the plane wave and only the stencil error remains."""
    vac = validate([], [])
    rs = []
    for h in (0.1, 0.05):
        x = np.arange(-3, 3 + h / 2, h)
        st = zs_eigenfunction(vac, NONE, 0.0, x, -0.4j)
        rs.append(lax_residual(st, np.ones_like(x, dtype=complex)))
    assert observed_order(*rs) == pytest.approx(2.0, abs=0.05)


@pytest.mark.parametrize("xi", [-0.45j, 0.3 - 0.45j])
def test_zs_one_soliton_order_and_control(xi):
    d = validate([0.3], [-1.0])
    rs = []
    for h in (0.1, 0.05):
        x = np.arange(-8, 8 + h / 2, h)
        st = zs_eigenfunction(d, NONE, 0.4, x, xi)
        rs.append(lax_residual(st, u_N(d, 0.4, x)))
    assert 1.8 <= observed_order(*rs) <= 2.2
    # a wrong potential must not satisfy the spectral problem
    wrong = lax_residual(st, u_N(d, 0.4, x + 1.0))
    assert wrong >= 100 * rs[1]


def test_zs_perturbed_converges():
    d = validate([0.3], [-1.0])
    refl = ReflectionCoefficient("gaussian", 0.01, 1.0)
    grid = HalfLineGrid.from_step(40.0, 0.05)
    rs = []
    for h in (0.2, 0.1):
        spec = GridSpec(0.0, 0.0, 1.0, -3.0, 3.0, h)
        x = spec.x_axis()
        u = perturbed_grid_eval(d, refl, spec, dp=grid.dp, P=grid.P)[0].u[0]
        rs.append(lax_residual(zs_eigenfunction(d, refl, 0.0, x, -0.45j, grid=grid), u))
    assert 1.8 <= observed_order(*rs) <= 2.2


def test_zs_input_errors():
    d = validate([0.3], [-1.0])
    with pytest.raises(ValidationError):
        zs_eigenfunction(d, NONE, 0.0, [0.0], 0.2)
    with pytest.raises(ValidationError):
        zs_eigenfunction(d, ReflectionCoefficient("gaussian", 0.01), 0.0, [0.0], -0.4j)
    st = zs_eigenfunction(d, NONE, 0.0, np.linspace(0, 1, 5), -0.4j)
    with pytest.raises(ValidationError):
        lax_residual(st, np.ones(4))


def test_cn_vacuum_and_black_soliton():
    x = np.linspace(-10, 10, 401)
    t = np.linspace(0.0, 0.5, 51)
    vac = cn_evolve(np.ones_like(x), lambda s: (1.0, 1.0), x, t)
    assert np.max(np.abs(vac.u - 1.0)) <= 1e-12
    black = validate([0.0], [-1.0])
    f = cn_evolve(u_N(black, 0.0, x), _exact_boundary(black, x), x, t, store_every=10)
    assert f.t.size == 6 and f.provenance == "cn-evolved"
    exact = FieldGrid(f.t, x, u_N(black, f.t[:, None], x[None, :]), provenance="nsoliton")
    assert compare_fields(f, exact)[0] <= 1e-3


def test_cn_two_soliton_order():
    errs = []
    for h, tau in ((0.08, 0.008), (0.04, 0.004)):
        x = np.arange(-20, 20 + h / 2, h)
        t = np.linspace(0.0, 1.0, int(round(1 / tau)) + 1)
        f = cn_evolve(u_N(PAIR, 0.0, x), _exact_boundary(PAIR, x), x, t, store_every=10**9)
        assert f.t[-1] == 1.0
        exact = FieldGrid(f.t, x, u_N(PAIR, f.t[:, None], x[None, :]), provenance="nsoliton")
        errs.append(compare_fields(f, exact)[0])
    assert errs[1] <= 5e-3
    assert observed_order(*errs) == pytest.approx(2.0, abs=0.1)


def test_cn_input_errors():
    x = np.linspace(-1, 1, 11)
    with pytest.raises(ValidationError):
        cn_evolve(np.ones(5), lambda s: (1.0, 1.0), x, [0.0, 0.1])
    with pytest.raises(ValidationError):
        cn_evolve(np.ones(11), lambda s: (2.0, 1.0), x, [0.0, 0.1])
    with pytest.raises(CNError):
        cn_evolve(2.0 * np.ones(11), lambda s: (2.0, 2.0), x, [0.0, 5.0], max_inner=2)


def test_compare_fields_one_cell_shift():
    spec = GridSpec(0.0, 0.0, 1.0, -10.0, 10.0, 0.01)
    d = validate([0.0], [-1.0])
    a = grid_eval(d, spec)
    b = FieldGrid(a.t, a.x, u_N(d, 0.0, a.x[None, :] + 0.01), provenance="nsoliton")
    linf, rms = compare_fields(a, b)
    # a one-cell shift moves the profile by about h max|u'|
    slope = np.max(np.abs(np.gradient(a.u[0], 0.01)))
    assert linf == pytest.approx(0.01 * slope, rel=0.02)
    assert 0 < rms < linf
    c = grid_eval(d, GridSpec(0.0, 0.0, 1.0, -10.0, 10.0, 0.02))
    with pytest.raises(ValidationError):
        compare_fields(a, c)
