"""Marchenko kernels: discrete exponential sums and Fourier integrals of the reflection data.

Discrete part (closed form, with ``mu_k = mu_k(t)``)::

    F11(z) = sum_k mu_k lambda_k exp(-nu_k z),   F21(z) = sum_k mu_k exp(-nu_k z)

Continuous part, with ``lambda(xi) = sqrt(xi**2 + 1/2)`` and
``beta(t, +-lambda) = c(+-lambda) exp(-+4 i lambda xi t)``::

    c1 = beta(lambda) + beta(-lambda),   c2 = (beta(lambda) - beta(-lambda)) / lambda
    F12(z) = (1/2pi) int c1(xi) exp(i xi z) dxi,   F22 likewise with c2

Operator kernels on the half-line::

    Omega(z) = -[[F21, sqrt2 (F11 - i F21')], [sqrt2 (F11 + i F21'), F21]]
    T(z)     = -[[F22, sqrt2 (F12 - i F22')], [sqrt2 (F12 + i F22'), F22]]
    F_x(p)   = (F22(2x + p), sqrt2 (F12 + i F22')(2x + p))
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .fields import write_rows
from .scattering import SQRT2, ReflectionCoefficient, ScatteringData, lambda_of_xi

_CHUNK = 512


class KernelError(RuntimeError):
    """Kernel quadrature cannot meet its tolerance or a lookup falls outside the table."""


def c1_c2(refl: ReflectionCoefficient, t: float, xi) -> tuple[np.ndarray, np.ndarray]:
    """Spectral densities ``(c1(xi), c2(xi))`` at time ``t``."""
    xi = np.asarray(xi, dtype=float)
    lam = lambda_of_xi(xi)
    plus, minus = refl.branches_at_xi(xi)
    phase = np.exp(-4j * lam * xi * t)
    bp = plus * phase
    bm = minus * np.conj(phase)
    return bp + bm, (bp - bm) / lam


def discrete_kernels(data: ScatteringData, t: float, z) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact ``(F11, F21, F21')`` at the points ``z``."""
    z = np.asarray(z, dtype=float)
    if data.N == 0:
        zero = np.zeros(z.shape)
        return zero, zero.copy(), zero.copy()
    mu = data.mu(t)
    e = np.exp(-np.multiply.outer(z, data.nu)) * mu
    return e @ data.lam, e.sum(axis=-1), -(e @ data.nu)


def omega_matrix(data: ScatteringData, t: float, z) -> np.ndarray:
    """``Omega(z)`` as a ``(..., 2, 2)`` array, summed from its rank-one pieces."""
    z = np.asarray(z, dtype=float)
    out = np.zeros(z.shape + (2, 2), dtype=complex)
    for k, A in enumerate(rank_one_blocks(data, t)):
        out += np.exp(-data.nu[k] * z)[..., None, None] * A
    return out


def rank_one_blocks(data: ScatteringData, t: float) -> list[np.ndarray]:
    """``A_k = -mu_k(t) v_k v_k^H`` with ``v_k = (1, sqrt2 (lambda_k - i nu_k))``."""
    mu = data.mu(t)
    blocks = []
    for k in range(data.N):
        v = np.array([1.0, SQRT2 * (data.lam[k] - 1j * data.nu[k])])
        blocks.append(-mu[k] * np.outer(v, v.conj()))
    return blocks


@dataclass
class FourierSamples:
    """Sampled ``d^k F12 / dz^k`` and ``d^k F22 / dz^k`` for ``k`` in ``orders``."""

    z: np.ndarray
    orders: tuple[int, ...]
    F12: np.ndarray
    F22: np.ndarray
    xi_cut: float
    dxi: float
    error: float

    def get(self, name: str, order: int = 0) -> np.ndarray:
        return getattr(self, name)[self.orders.index(order)]


def _xi_step(refl: ReflectionCoefficient, t: float, z: np.ndarray, xi_cut: float) -> float:
    # group spread of the time phase 4 lambda xi t over |xi| <= xi_cut
    spread = 4.0 * abs(t) * (2.0 * xi_cut**2 + 0.5) / math.sqrt(xi_cut**2 + 0.5)
    reach = float(np.max(np.abs(z))) if z.size else 0.0
    return math.pi / (reach + refl.spatial_extent() + spread + 1.0)


def _trapezoid_transform(z, xi, dxi, dens) -> np.ndarray:
    w = np.full(xi.size, dxi / (2.0 * math.pi))
    w[0] *= 0.5
    w[-1] *= 0.5
    weighted = dens * w  # (K, nxi)
    out = np.empty((dens.shape[0], z.size), dtype=complex)
    for s in range(0, z.size, _CHUNK):
        E = np.exp(1j * np.outer(xi, z[s:s + _CHUNK]))
        out[:, s:s + _CHUNK] = weighted @ E
    return out


def _transform(refl, t, z, orders, xi_cut, dxi):
    J = int(math.ceil(xi_cut / dxi))
    xi = dxi * np.arange(-J, J + 1)
    c1, c2 = c1_c2(refl, t, xi)
    dens = []
    for k in orders:
        fac = (1j * xi) ** k
        dens.append(fac * c1)
        dens.append(fac * c2)
    vals = _trapezoid_transform(z, xi, dxi, np.array(dens))
    return vals[0::2], vals[1::2]


def fourier_kernels(refl: ReflectionCoefficient, t: float, z, orders=(0, 1),
                    tol: float = 1e-12, dxi: float | None = None, xi_max: float = 200.0) -> FourierSamples:
    """Sample ``F12``, ``F22`` and their z-derivatives by trapezoid quadrature in ``xi``.

    The ``xi``-range is cut where the reflection tail drops below ``tol``.  The
    step resolves both the z-range and the spreading caused by the time phase,
    so aliased copies stay outside the sampled window.  ``error`` adds the tail
    bound to the difference against a half-step recomputation on a subset of z.

    Raises
    ------
    KernelError
        If the reflection decays too slowly: the cutoff needed for ``tol``
        exceeds ``xi_max`` or the tail bound still exceeds ``tol``.
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    orders = tuple(int(k) for k in orders)
    if refl.is_zero:
        zero = np.zeros((len(orders), z.size), dtype=complex)
        return FourierSamples(z, orders, zero, zero.copy(), 0.0, 0.0, 0.0)
    xi_cut = refl.xi_cutoff(tol)
    if xi_cut > xi_max:
        raise KernelError(f"reflection decays too slowly: cutoff {xi_cut:.3g} exceeds xi_max={xi_max:g}")
    tail = refl.tail_bound(xi_cut)
    if tail > tol:
        raise KernelError(f"reflection tail bound {tail:.2e} exceeds tolerance {tol:.0e}")
    if dxi is None:
        dxi = _xi_step(refl, t, z, xi_cut)
    F12, F22 = _transform(refl, t, z, orders, xi_cut, dxi)
    probe = z[:: max(1, z.size // 64)]
    P12, P22 = _transform(refl, t, probe, orders, xi_cut, dxi / 2.0)
    idx = np.arange(0, z.size, max(1, z.size // 64))
    diff = max(np.max(np.abs(P12 - F12[:, idx])), np.max(np.abs(P22 - F22[:, idx])))
    return FourierSamples(z, orders, F12, F22, xi_cut, dxi, float(diff + tail))


@dataclass(eq=False)
class KernelTable:
    """Kernels sampled on ``z = z0 + dz * k``, valid at time ``t``.

    Immutable after construction; interpolants are built lazily under a lock
    so concurrent readers are safe.
    """

    data: ScatteringData
    refl: ReflectionCoefficient
    t: float
    z0: float
    dz: float
    F11: np.ndarray
    F21: np.ndarray
    F21p: np.ndarray
    F12: np.ndarray
    F22: np.ndarray
    F22p: np.ndarray
    quad_error: float = 0.0
    _splines: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def z(self) -> np.ndarray:
        return self.z0 + self.dz * np.arange(self.F12.size)

    @property
    def z_max(self) -> float:
        return self.z0 + self.dz * (self.F12.size - 1)

    @property
    def F1(self) -> np.ndarray:
        return self.F12 - self.F11

    @property
    def F2(self) -> np.ndarray:
        return self.F22 - self.F21

    def t_hat(self) -> np.ndarray:
        """``T(z)`` at every table sample as ``(n, 2, 2)``."""
        e0 = -self.F22
        out = np.empty((self.F22.size, 2, 2), dtype=complex)
        out[:, 0, 0] = e0
        out[:, 1, 1] = e0
        out[:, 0, 1] = -SQRT2 * (self.F12 - 1j * self.F22p)
        out[:, 1, 0] = -SQRT2 * (self.F12 + 1j * self.F22p)
        return out

    def omega(self) -> np.ndarray:
        """``Omega(z)`` at every table sample as ``(n, 2, 2)``."""
        out = np.empty((self.F21.size, 2, 2), dtype=complex)
        out[:, 0, 0] = -self.F21
        out[:, 1, 1] = -self.F21
        out[:, 0, 1] = -SQRT2 * (self.F11 - 1j * self.F21p)
        out[:, 1, 0] = -SQRT2 * (self.F11 + 1j * self.F21p)
        return out

    def tail_bound(self, z: float) -> float:
        """Largest sampled ``|T|`` entry at or beyond ``z`` (0 when past the table)."""
        k = int(math.ceil((z - self.z0) / self.dz - 1e-9))
        if k >= self.F12.size:
            return 0.0
        k = max(k, 0)
        return float(max(np.max(np.abs(self.F22[k:])),
                         SQRT2 * np.max(np.abs(self.F12[k:]) + np.abs(self.F22p[k:]))))

    def _spline(self, name: str) -> CubicSpline:
        with self._lock:
            if name not in self._splines:
                self._splines[name] = CubicSpline(self.z, getattr(self, name))
            return self._splines[name]

    def sample(self, name: str, z) -> np.ndarray:
        """Values of kernel ``name`` at ``z``; exact lookup on-grid, cubic spline otherwise."""
        z = np.asarray(z, dtype=float)
        if z.size and (z.min() < self.z0 - 1e-9 * self.dz or z.max() > self.z_max + 1e-9 * self.dz):
            raise KernelError(f"z range [{z.min():.4g}, {z.max():.4g}] outside table "
                              f"[{self.z0:.4g}, {self.z_max:.4g}]")
        pos = (z - self.z0) / self.dz
        idx = np.rint(pos)
        if np.all(np.abs(pos - idx) < 1e-9):
            return getattr(self, name)[idx.astype(int)]
        return self._spline(name)(z)

    def window(self, x: float, M: int, dp: float) -> dict[str, np.ndarray]:
        """Kernel samples at ``2x + k dp`` for ``k = 0..2M`` (operator entries and ``F_x``)."""
        z = 2.0 * x + dp * np.arange(2 * M + 1)
        F12 = self.sample("F12", z)
        F22 = self.sample("F22", z)
        F22p = self.sample("F22p", z)
        return {
            "T11": -F22,
            "T12": -SQRT2 * (F12 - 1j * F22p),
            "T21": -SQRT2 * (F12 + 1j * F22p),
            "Fx1": F22[:M + 1],
            "Fx2": SQRT2 * (F12 + 1j * F22p)[:M + 1],
        }

    def to_csv(self, path: str | Path) -> Path:
        """Dump every sampled kernel component (real and imaginary parts) as CSV."""
        names = ("F11", "F21", "F21p", "F12", "F22", "F22p")
        header = ["z"] + [f"{part}_{n}" for n in names for part in ("re", "im")]
        cols = [self.z]
        for n in names:
            v = np.asarray(getattr(self, n), dtype=complex)
            cols.extend([v.real, v.imag])
        rows = np.column_stack(cols)
        meta = {"t": self.t, "z0": self.z0, "dz": self.dz, "n": int(self.F12.size),
                "quad_error": self.quad_error, "scattering": self.data.to_dict(),
                "reflection": self.refl.to_dict()}
        return write_rows(path, header, (list(map(float, r)) for r in rows), meta)


def operator_kernels(data: ScatteringData, refl: ReflectionCoefficient, t: float,
                     x_min: float, x_max: float, P: float, dp: float,
                     tol: float = 1e-12) -> KernelTable:
    """Build the kernel table covering every ``2x + p + s`` with ``x`` in range, ``p, s`` in ``[0, P]``."""
    if x_max < x_min:
        raise ValueError("x_max must not be below x_min")
    z0 = 2.0 * x_min
    n = int(math.ceil((2.0 * (x_max - x_min) + 2.0 * P) / dp - 1e-9)) + 1
    z = z0 + dp * np.arange(n)
    F11, F21, F21p = discrete_kernels(data, t, z)
    fk = fourier_kernels(refl, t, z, orders=(0, 1), tol=tol)
    return KernelTable(data, refl, float(t), z0, float(dp), F11.astype(complex), F21.astype(complex),
                       F21p.astype(complex), fk.get("F12"), fk.get("F22"), fk.get("F22", 1),
                       quad_error=fk.error)
