"""Perturbed Marchenko system on the half-line and reconstruction of u(t, x).

Unknowns live on ``p = y - x`` in ``[0, P]``.  Splitting the kernel as
``Psi = Upsilon + Psi_r`` with ``Upsilon`` the reflectionless kernel, the
remainder solves

    (2 sqrt2 + Omega_x) Psi_r = T_x Psi_r + T_x Upsilon + F_x,

with ``(Omega_x Phi)(p) = int_0^P Omega(2x + p + s) Phi(s) ds`` and the same
for ``T_x``.  The field is ``u = 1 + 2 sqrt2 i conj(Upsilon_2(0) + Psi_r_2(0))``.

``Omega`` is a sum of N rank-one blocks, so ``2 sqrt2 + Omega_x`` is inverted
by a Woodbury (capacitance) solve.  ``T_x`` has Hankel structure and is
applied through FFT-based Toeplitz products.
"""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, matmul_toeplitz

from .fields import FieldGrid, GridSpec
from .kernels import KernelTable, omega_matrix, operator_kernels
from .nsoliton import solve_G, u_N
from .scattering import SQRT2, ReflectionCoefficient, ScatteringData

log = logging.getLogger(__name__)

S0 = 2.0 * SQRT2
EXP_TAIL = 27.7  # exp(-27.7) < 1e-12


class ContractionError(RuntimeError):
    """The fixed-point map failed to contract."""

    def __init__(self, ratio: float, iterations: int):
        super().__init__(f"fixed-point iteration diverges: measured contraction ratio {ratio:.3g} "
                         f">= 1 for 3 consecutive iterations (after {iterations} iterations)")
        self.ratio = ratio
        self.iterations = iterations


class GridMismatch(ValueError):
    pass


@dataclass(frozen=True)
class HalfLineGrid:
    """Uniform trapezoid grid ``p_i = i * P / M`` on ``[0, P]``."""

    P: float
    M: int

    def __post_init__(self):
        if not self.P > 0 or self.M < 2:
            raise ValueError("half-line grid needs P > 0 and M >= 2")

    @classmethod
    def from_step(cls, P: float, dp: float) -> "HalfLineGrid":
        M = int(round(P / dp))
        return cls(M * dp, M)

    @property
    def dp(self) -> float:
        return self.P / self.M

    @property
    def p(self) -> np.ndarray:
        return self.dp * np.arange(self.M + 1)

    @property
    def weights(self) -> np.ndarray:
        w = np.full(self.M + 1, self.dp)
        w[0] = w[-1] = 0.5 * self.dp
        return w

    def coarse(self) -> "HalfLineGrid":
        """Every other point; needs even ``M``."""
        if self.M % 2:
            raise ValueError("coarsening needs an even point count M")
        return HalfLineGrid(self.P, self.M // 2)


@dataclass
class HalfLineField:
    """Two-component samples ``values[c, i]`` over a half-line grid at ``(t, x)``."""

    grid: HalfLineGrid
    values: np.ndarray
    t: float = 0.0
    x: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != (2, self.grid.M + 1):
            raise GridMismatch(f"field shape {self.values.shape} does not match grid (2, {self.grid.M + 1})")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("half-line field has non-finite samples")

    @classmethod
    def zeros(cls, grid: HalfLineGrid, t: float = 0.0, x: float = 0.0) -> "HalfLineField":
        return cls(grid, np.zeros((2, grid.M + 1), dtype=complex), t, x)

    def inner(self, other: "HalfLineField") -> complex:
        """Grid inner product ``sum_i w_i <self(p_i), other(p_i)>`` (linear in ``self``)."""
        _check_grid(self, other.grid)
        return complex(np.sum(self.grid.weights * np.sum(self.values * other.values.conj(), axis=0)))

    def l2(self) -> float:
        return math.sqrt(max(self.inner(self).real, 0.0))

    def h1(self) -> float:
        d = np.gradient(self.values, self.grid.dp, axis=1)
        return math.sqrt(self.l2() ** 2 + float(np.sum(self.grid.weights * np.sum(np.abs(d) ** 2, axis=0))))

    def __add__(self, other: "HalfLineField") -> "HalfLineField":
        return HalfLineField(self.grid, self.values + other.values, self.t, self.x)

    def __sub__(self, other: "HalfLineField") -> "HalfLineField":
        return HalfLineField(self.grid, self.values - other.values, self.t, self.x)

    def scaled(self, s: complex) -> "HalfLineField":
        return HalfLineField(self.grid, self.values * s, self.t, self.x)


@dataclass
class SolveDiagnostics:
    iterations: int = 0
    update_norm: float = 0.0
    contraction_ratio: float = 0.0
    residual: float = 0.0
    error_budget: float = 0.0
    first_update: float = 0.0
    budget_parts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"iterations": self.iterations, "update_norm": self.update_norm,
               "contraction_ratio": self.contraction_ratio, "residual": self.residual,
               "error_budget": self.error_budget, "first_update": self.first_update}
        out.update({f"budget_{k}": v for k, v in self.budget_parts.items()})
        return out


def _check_grid(phi: HalfLineField, grid: HalfLineGrid):
    if phi.grid != grid:
        raise GridMismatch("half-line grids differ")


# ---------------------------------------------------------------- Omega ---

def _rank_factors(data: ScatteringData, t: float, x: float, grid: HalfLineGrid):
    """Columns ``psi_k(p) = exp(-nu_k p) v_k`` (shape (N, 2, M+1)) and weights ``gamma_k``."""
    nu = data.nu
    v = np.stack([np.ones(data.N, dtype=complex), SQRT2 * (data.lam - 1j * nu)], axis=1)  # (N, 2)
    decay = np.exp(-np.outer(nu, grid.p))  # (N, M+1)
    psi = v[:, :, None] * decay[:, None, :]
    gamma = -data.mu(t) * np.exp(-2.0 * nu * x)
    return psi, gamma


def apply_Omega(data: ScatteringData, t: float, x: float, phi: HalfLineField) -> HalfLineField:
    """``Omega_x Phi`` through the rank-N factorization ``sum_k gamma_k psi_k <psi_k, Phi>``."""
    grid = phi.grid
    if data.N == 0:
        return HalfLineField.zeros(grid, t, x)
    psi, gamma = _rank_factors(data, t, x, grid)
    moments = np.einsum("kcp,cp,p->k", psi.conj(), phi.values, grid.weights)
    return HalfLineField(grid, np.einsum("k,kcp->cp", gamma * moments, psi), t, x)


def omega_dense(data: ScatteringData, t: float, x: float, grid: HalfLineGrid) -> np.ndarray:
    """Nystrom matrix of ``Omega_x`` with entries ``Omega(2x + p_i + s_j) w_j`` (oracle path)."""
    p = grid.p
    n = grid.M + 1
    blocks = omega_matrix(data, t, 2.0 * x + p[:, None] + p[None, :])  # (n, n, 2, 2)
    mat = blocks.transpose(2, 0, 3, 1).reshape(2 * n, 2 * n)
    return mat * np.tile(grid.weights, 2)[None, :]


def invert_coercive(data: ScatteringData, t: float, x: float, rhs: HalfLineField,
                    method: str = "woodbury") -> HalfLineField:
    """Solve ``(2 sqrt2 + Omega_x) Theta = rhs``.

    ``method="woodbury"`` reduces to an N x N Hermitian positive definite
    capacitance system ``(2 sqrt2 I + Gamma^1/2 G Gamma^1/2) n = Gamma^1/2 Psi^H W rhs``
    with ``G`` the weighted Gram matrix of the rank columns.  ``method="dense"``
    solves the full Nystrom system.
    """
    grid = rhs.grid
    if data.N == 0:
        return rhs.scaled(1.0 / S0)
    if method == "dense":
        mat = S0 * np.eye(2 * (grid.M + 1)) + omega_dense(data, t, x, grid)
        sol = np.linalg.solve(mat, rhs.values.reshape(-1))
        return HalfLineField(grid, sol.reshape(2, -1), t, x)
    if method != "woodbury":
        raise ValueError(f"unknown method {method!r}")
    psi, gamma = _rank_factors(data, t, x, grid)
    w = grid.weights
    G = np.einsum("kcp,jcp,p->kj", psi.conj(), psi, w)
    g = np.sqrt(gamma)
    cap = S0 * np.eye(data.N) + g[:, None] * G * g[None, :]
    proj = g * np.einsum("kcp,cp,p->k", psi.conj(), rhs.values, w)
    try:
        n = cho_solve(cho_factor(cap), proj)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"capacitance system not positive definite: {exc}") from exc
    vals = (rhs.values - np.einsum("k,kcp->cp", g * n, psi)) / S0
    return HalfLineField(grid, vals, t, x)


# -------------------------------------------------------------------- T ---

def _hankel_apply(h: np.ndarray, vecs: np.ndarray, M: int) -> np.ndarray:
    """``out[i] = sum_j h[i + j] vecs[j]`` for ``i, j = 0..M`` (columns of ``vecs``)."""
    if not np.any(h):
        return np.zeros_like(vecs, dtype=complex)
    return matmul_toeplitz((h[M:], h[M::-1]), vecs[::-1])


def apply_T(table: KernelTable, x: float, phi: HalfLineField) -> HalfLineField:
    """``T_x Phi`` by trapezoid quadrature, evaluated as Hankel products."""
    return _apply_T_window(table.window(x, phi.grid.M, phi.grid.dp), phi)


def _apply_T_window(win: dict, phi: HalfLineField) -> HalfLineField:
    grid = phi.grid
    M = grid.M
    wphi = phi.values * grid.weights  # (2, M+1)
    both = _hankel_apply(win["T11"], wphi.T, M)  # (M+1, 2)
    out = np.empty_like(phi.values)
    out[0] = both[:, 0] + _hankel_apply(win["T12"], wphi[1], M)
    out[1] = both[:, 1] + _hankel_apply(win["T21"], wphi[0], M)
    return HalfLineField(grid, out, phi.t, phi.x)


def T_dense(table: KernelTable, x: float, grid: HalfLineGrid) -> np.ndarray:
    """Nystrom matrix of ``T_x`` (oracle path)."""
    win = table.window(x, grid.M, grid.dp)
    idx = np.add.outer(np.arange(grid.M + 1), np.arange(grid.M + 1))
    w = grid.weights[None, :]
    return np.block([[win["T11"][idx] * w, win["T12"][idx] * w],
                     [win["T21"][idx] * w, win["T11"][idx] * w]])


# ------------------------------------------------------------ solve -------

def upsilon_field(data: ScatteringData, t: float, x: float, grid: HalfLineGrid) -> HalfLineField:
    """Reflectionless kernel ``Upsilon(t, x, x + p)`` sampled on the grid."""
    if data.N == 0:
        return HalfLineField.zeros(grid, t, x)
    coeffs = solve_G(data, t, x, with_f=True)
    decay = np.exp(-np.outer(data.nu, grid.p))
    return HalfLineField(grid, np.vstack([coeffs.f @ decay, coeffs.G @ decay]), t, x)


def _fixed_point(data, t, x, grid, win, ups, tol, max_iter, method):
    R = _apply_T_window(win, ups)
    R.values[0] += win["Fx1"]
    R.values[1] += win["Fx2"]
    psi = HalfLineField.zeros(grid, t, x)
    diag = SolveDiagnostics()
    prev = None
    ratios = []
    above = 0
    for it in range(1, max_iter + 1):
        rhs = _apply_T_window(win, psi) + R if it > 1 else R
        new = invert_coercive(data, t, x, rhs, method)
        d = (new - psi).l2()
        psi = new
        diag.iterations = it
        diag.update_norm = d
        if it == 1:
            diag.first_update = d
        if prev is not None and prev > 1e3 * np.finfo(float).eps * max(psi.l2(), 1e-300):
            ratio = d / prev
            ratios.append(ratio)
            above = above + 1 if ratio >= 1.0 else 0
            if above >= 3:
                raise ContractionError(ratio, it)
        if d <= tol:
            break
        prev = d
    else:
        raise ContractionError(max(ratios) if ratios else math.nan, max_iter)
    diag.contraction_ratio = max(ratios) if ratios else 0.0
    lhs = psi.scaled(S0) + apply_Omega(data, t, x, psi)
    res = lhs - _apply_T_window(win, psi) - R
    diag.residual = res.l2()
    return psi, R, diag


def fixed_point_solve(data: ScatteringData, refl: ReflectionCoefficient, t: float, x: float,
                      grid: HalfLineGrid, tol: float = 1e-10, max_iter: int = 200,
                      table: KernelTable | None = None, method: str = "woodbury",
                      estimate_error: bool = False) -> tuple[HalfLineField, SolveDiagnostics]:
    """Iterate ``Psi <- (2 sqrt2 + Omega_x)^{-1} (T_x Psi + T_x Upsilon + F_x)`` from ``Psi = 0``.

    The contraction ratio is measured from successive update norms.  With
    ``estimate_error`` the solve is repeated on the every-other-point grid and
    the change in the reconstructed field is added to the truncation budget.

    Raises
    ------
    ContractionError
        If the measured ratio stays >= 1 for three consecutive iterations or
        ``max_iter`` is exhausted.
    """
    if not 0 < tol <= 1e-2:
        raise ValueError("tol must lie in (0, 1e-2]")
    if table is None:
        table = operator_kernels(data, refl, t, x, x, grid.P, grid.dp)
    win = table.window(x, grid.M, grid.dp)
    ups = upsilon_field(data, t, x, grid)
    psi, R, diag = _fixed_point(data, t, x, grid, win, ups, tol, max_iter, method)
    parts = {
        "exp_tail": float(math.exp(-data.nu.min() * grid.P)) if data.N else 0.0,
        "t_tail": table.tail_bound(2.0 * x + grid.P),
        "kernel_quad": table.quad_error,
        "iteration": diag.update_norm * diag.contraction_ratio / max(1.0 - diag.contraction_ratio, 1e-300),
    }
    if estimate_error and not refl.is_zero:
        cg = grid.coarse()
        cwin = table.window(x, cg.M, cg.dp)
        cpsi, _, _ = _fixed_point(data, t, x, cg, cwin, upsilon_field(data, t, x, cg), tol, max_iter, method)
        parts["richardson"] = float(abs(cpsi.values[1, 0] - psi.values[1, 0])) * S0
    diag.budget_parts = parts
    diag.error_budget = float(sum(parts.values()))
    return psi, diag


def reconstruct_u(data: ScatteringData, refl: ReflectionCoefficient, t: float, x: float,
                  grid: HalfLineGrid | None = None, **kwargs) -> tuple[complex, SolveDiagnostics]:
    """Perturbed field ``u(t, x) = 1 + 2 sqrt2 i conj(Upsilon_2(0) + Psi_r_2(0))``."""
    if refl.is_zero:
        return complex(u_N(data, t, x)), SolveDiagnostics(iterations=1)
    if grid is None:
        grid = choose_halfline(data, refl, t, x, x)
    psi, diag = fixed_point_solve(data, refl, t, x, grid, **kwargs)
    ups0 = solve_G(data, t, x).G.sum() if data.N else 0.0
    return complex(1.0 + 2.0 * SQRT2 * 1j * np.conj(ups0 + psi.values[1, 0])), diag


def far_field_gap(data: ScatteringData, refl: ReflectionCoefficient, t: float, x: float,
                  grid: HalfLineGrid | None = None, **kwargs) -> float:
    """``|u(t, x) - u_N(t, x)|``."""
    u, _ = reconstruct_u(data, refl, t, x, grid, **kwargs)
    return abs(u - u_N(data, t, x))


def choose_halfline(data: ScatteringData, refl: ReflectionCoefficient, t: float,
                    x_min: float, x_max: float, dp: float = 0.05, margin: float = 5.0) -> HalfLineGrid:
    """Truncation ``P`` with ``exp(-nu_min P) < 1e-12`` and the radiation kernel negligible past ``2 x_min + P``.

    ``M`` is rounded up to an even count so the grid can be coarsened.
    """
    P = EXP_TAIL / data.nu.min() if data.N else 0.0
    if not refl.is_zero:
        xi_cut = refl.xi_cutoff()
        spread = 4.0 * abs(t) * (2.0 * xi_cut**2 + 0.5) / math.sqrt(xi_cut**2 + 0.5)
        P = max(P, refl.spatial_extent() + spread - 2.0 * x_min + margin)
    P = max(P, 10.0)
    M = int(math.ceil(P / dp))
    M += M % 2
    return HalfLineGrid(M * dp, M)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("GPM_THREADS", "1")))
    except ValueError:
        return 1


def perturbed_grid_eval(data: ScatteringData, refl: ReflectionCoefficient, spec: GridSpec,
                        dp: float = 0.05, tol: float = 1e-10, max_iter: int = 200,
                        P: float | None = None, estimate_error: bool = False) -> tuple[FieldGrid, list[dict]]:
    """Sample the perturbed field on a (t, x) grid; one kernel table per time level.

    Points are independent; ``GPM_THREADS`` caps the worker count.  Results do
    not depend on evaluation order.
    """
    t_axis, x_axis = spec.t_axis(), spec.x_axis()
    u = np.empty((t_axis.size, x_axis.size), dtype=complex)
    diags: list[dict] = []
    for i, t in enumerate(t_axis):
        if refl.is_zero:
            u[i] = u_N(data, t, x_axis)
            diags.extend({"t": float(t), "x": float(x), "iterations": 1, "contraction_ratio": 0.0,
                          "residual": 0.0, "error_budget": 0.0} for x in x_axis)
            continue
        grid = choose_halfline(data, refl, t, x_axis[0], x_axis[-1], dp)
        if P is not None:
            grid = HalfLineGrid.from_step(P, dp)
        table = operator_kernels(data, refl, t, x_axis[0], x_axis[-1], grid.P, grid.dp)

        def one(x, t=t, grid=grid, table=table):
            return reconstruct_u(data, refl, t, x, grid, tol=tol, max_iter=max_iter, table=table,
                                 estimate_error=estimate_error)

        with ThreadPoolExecutor(max_workers=_threads()) as pool:
            results = list(pool.map(one, x_axis))
        for j, (val, diag) in enumerate(results):
            u[i, j] = val
            diags.append({"t": float(t), "x": float(x_axis[j]), **diag.to_dict()})
    meta = {"scattering": data.to_dict(), "reflection": refl.to_dict(), "grid": spec.to_dict(),
            "dp": dp, "tol": tol, "max_ratio": max((d["contraction_ratio"] for d in diags), default=0.0),
            "max_residual": max((d["residual"] for d in diags), default=0.0),
            "max_error_budget": max((d["error_budget"] for d in diags), default=0.0)}
    return FieldGrid(t_axis, x_axis, u, provenance="perturbed", meta=meta), diags
