"""Independent checks of constructed fields.

* finite-difference residual of ``i u_t + u_xx + (1 - |u|^2) u = 0``;
* the spatial Zakharov-Shabat system ``i M psi' + Q psi - lambda psi = 0``
  for the Jost-type function built from the Marchenko kernel;
* a Crank-Nicolson integrator with Dirichlet data taken from an exact solution.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import solve_banded

from .fields import FieldGrid
from .kernels import KernelTable
from .marchenko import HalfLineGrid, fixed_point_solve
from .nsoliton import solve_G
from .scattering import SQRT2, ReflectionCoefficient, ScatteringData

log = logging.getLogger(__name__)


class ValidationError(ValueError):
    pass


class CNError(RuntimeError):
    """The per-step nonlinear iteration of the Crank-Nicolson scheme did not converge."""


@dataclass
class ResidualReport:
    h: float
    tau: float
    residual: np.ndarray
    linf: float
    l2: float
    order: float | None = None

    def summary(self) -> dict:
        return {"h": self.h, "tau": self.tau, "linf": self.linf, "l2": self.l2,
                "order": self.order if self.order is not None else math.nan}


def gp_residual(field: FieldGrid) -> ResidualReport:
    """Centered second-order residual of the GP equation on interior points.

    The grid-L2 norm is ``sqrt(sum |r|^2 h tau)``.
    """
    nt, nx = field.u.shape
    if nt < 3 or nx < 3:
        raise ValidationError("residual needs at least 3 samples along t and x")
    u = field.u
    tau, h = field.tau, field.h
    ut = (u[2:, 1:-1] - u[:-2, 1:-1]) / (2.0 * tau)
    c = u[1:-1, 1:-1]
    uxx = (u[1:-1, 2:] - 2.0 * c + u[1:-1, :-2]) / h**2
    r = 1j * ut + uxx + (1.0 - np.abs(c) ** 2) * c
    return ResidualReport(h, tau, r, float(np.max(np.abs(r))), float(math.sqrt(np.sum(np.abs(r) ** 2) * h * tau)))


def observed_order(coarse: float, fine: float, ratio: float = 2.0) -> float:
    """Convergence order from errors at steps ``s`` and ``s / ratio``; NaN when undefined."""
    if not (coarse > 0 and fine > 0):
        return math.nan
    return math.log(coarse / fine) / math.log(ratio)


def residual_orders(reports: Sequence[ResidualReport]) -> list[float]:
    """Attach the observed order to each report after the first (steps halved each time)."""
    orders = []
    for a, b in zip(reports, reports[1:]):
        b.order = observed_order(a.linf, b.linf, a.h / b.h)
        orders.append(b.order)
    return orders


# --------------------------------------------------------------- ZS -------

@dataclass
class ZSState:
    """Jost-type solution ``psi`` of the spatial ZS system sampled along ``x``."""

    xi: complex
    lam: complex
    t: float
    x: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        if abs(self.lam**2 - self.xi**2 - 0.5) > 1e-12 * max(1.0, abs(self.lam) ** 2):
            raise ValidationError("lambda^2 - xi^2 must equal 1/2")


def spectral_lambda(xi: complex) -> complex:
    """Principal branch of ``sqrt(xi^2 + 1/2)``; positive on the real axis."""
    return complex(np.sqrt(complex(xi) ** 2 + 0.5))


def zs_eigenfunction(data: ScatteringData, refl: ReflectionCoefficient, t: float, x, xi: complex,
                     grid: HalfLineGrid | None = None, table: KernelTable | None = None,
                     tol: float = 1e-10) -> ZSState:
    """``psi(x) = X(x) - int_0^inf Psi(x, p) X(x + p) dp`` with ``X(x) = exp(-i xi x)(1, sqrt2 (lambda - xi))``.

    ``Psi = [[Psi1, Psi2], [conj Psi2, conj Psi1]]``.  The reflectionless part
    is integrated in closed form; the radiation part by trapezoid on ``grid``.
    """
    xi = complex(xi)
    if not xi.imag < 0:
        raise ValidationError("Im(xi) must be negative for a decaying integrand")
    lam = spectral_lambda(xi)
    x = np.asarray(x, dtype=float)
    s = SQRT2 * (lam - xi)
    psi = np.empty((2, x.size), dtype=complex)
    if not refl.is_zero and grid is None:
        raise ValidationError("a half-line grid is needed when the reflection coefficient is nonzero")
    if grid is not None:
        decay_p = np.exp(-1j * xi * grid.p) * grid.weights
    for j, xj in enumerate(x):
        i1 = 0j  # int Psi1 e^{-i xi p}
        i2 = 0j  # int Psi2 e^{-i xi p}
        i1c = 0j  # int conj(Psi1) e^{-i xi p}
        i2c = 0j
        if data.N:
            co = solve_G(data, t, xj, with_f=True)
            den = data.nu + 1j * xi
            i1 += np.sum(co.f / den)
            i2 += np.sum(co.G / den)
            i1c += np.sum(co.f.conj() / den)
            i2c += np.sum(co.G.conj() / den)
        if not refl.is_zero:
            pr, _ = fixed_point_solve(data, refl, t, xj, grid, tol=tol, table=table)
            i1 += decay_p @ pr.values[0]
            i2 += decay_p @ pr.values[1]
            i1c += decay_p @ pr.values[0].conj()
            i2c += decay_p @ pr.values[1].conj()
        phase = np.exp(-1j * xi * xj)
        psi[0, j] = phase * (1.0 - i1 - i2 * s)
        psi[1, j] = phase * (s - i2c - i1c * s)
    return ZSState(xi, lam, float(t), x, psi)


def lax_residual(state: ZSState, u) -> float:
    """Max interior ``|i M D psi + Q psi - lambda psi|`` with ``q = u / sqrt2`` and centered ``D``."""
    u = np.asarray(u, dtype=complex)
    if u.shape != state.x.shape or state.psi.shape[1] != state.x.size:
        raise ValidationError("psi and u must be sampled on the same x-grid")
    if state.x.size < 3:
        raise ValidationError("need at least 3 samples")
    h = state.x[1] - state.x[0]
    psi = state.psi
    d = (psi[:, 2:] - psi[:, :-2]) / (2.0 * h)
    q = u[1:-1] / SQRT2
    p = psi[:, 1:-1]
    r1 = 1j * d[0] + np.conj(q) * p[1] - state.lam * p[0]
    r2 = -1j * d[1] + q * p[0] - state.lam * p[1]
    return float(np.max(np.hypot(np.abs(r1), np.abs(r2))))


# ---------------------------------------------------------------- CN -------

def cn_evolve(initial, boundary: Callable[[float], tuple[complex, complex]], x, t_axis,
              inner_tol: float = 1e-12, max_inner: int = 30, store_every: int = 1) -> FieldGrid:
    """Crank-Nicolson evolution of GP with Dirichlet values ``boundary(t) = (u(t, x_0), u(t, x_end))``.

    Each step solves ``(I - i tau/2 D2) u+ = (I + i tau/2 D2) u + i tau g((u + u+)/2)``
    with ``g(v) = (1 - |v|^2) v``, iterating the midpoint nonlinearity to ``inner_tol``.

    Raises
    ------
    CNError
        If the inner iteration needs more than ``max_inner`` sweeps.
    """
    x = np.asarray(x, dtype=float)
    t_axis = np.asarray(t_axis, dtype=float)
    u = np.array(initial, dtype=complex)
    if u.shape != x.shape or x.size < 3:
        raise ValidationError("initial profile must match the x-grid (>= 3 points)")
    left, right = boundary(float(t_axis[0]))
    if abs(u[0] - left) > 1e-10 or abs(u[-1] - right) > 1e-10:
        raise ValidationError("initial profile does not match the boundary values at t_0")
    h = x[1] - x[0]
    n = x.size - 2
    taus = np.diff(t_axis)
    stored_t = [t_axis[0]]
    stored = [u.copy()]
    for step, tau in enumerate(taus, start=1):
        a = 0.5j * tau / h**2
        ab = np.zeros((3, n), dtype=complex)
        ab[0, 1:] = -a
        ab[1, :] = 1.0 + 2.0 * a
        ab[2, :-1] = -a
        new_left, new_right = boundary(float(t_axis[step]))
        explicit = u[1:-1] + a * (u[:-2] - 2.0 * u[1:-1] + u[2:])
        explicit[0] += a * new_left
        explicit[-1] += a * new_right
        nxt = u.copy()
        nxt[0], nxt[-1] = new_left, new_right
        for sweep in range(max_inner):
            mid = 0.5 * (u[1:-1] + nxt[1:-1])
            rhs = explicit + 1j * tau * (1.0 - np.abs(mid) ** 2) * mid
            cand = solve_banded((1, 1), ab, rhs, check_finite=False)
            change = np.max(np.abs(cand - nxt[1:-1]))
            nxt[1:-1] = cand
            if change <= inner_tol:
                break
        else:
            raise CNError(f"inner iteration did not reach {inner_tol:g} at t={t_axis[step]:.6g}; reduce tau")
        u = nxt
        if step % store_every == 0 or step == taus.size:
            stored_t.append(t_axis[step])
            stored.append(u.copy())
    return FieldGrid(np.array(stored_t), x, np.array(stored), provenance="cn-evolved",
                     meta={"h": float(h), "tau": float(taus[0]) if taus.size else math.nan})


def compare_fields(a: FieldGrid, b: FieldGrid) -> tuple[float, float]:
    """``(max |a - b|, sqrt(mean |a - b|^2))`` on identical axes."""
    if not a.same_axes(b):
        raise ValidationError("fields are sampled on different axes")
    d = np.abs(a.u - b.u)
    return float(d.max()), float(math.sqrt(np.mean(d**2)))
