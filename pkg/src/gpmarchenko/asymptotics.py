"""Long-time collision shifts and phases of N-soliton fields.

As ``t -> -inf`` soliton ``k`` of ``u_N`` approaches ``A_k^- U(x - 2 lambda_k t - eta_k^-)``
where ``U`` is the one-soliton with the same ``(lambda_k, mu_k(0))`` and

    exp(-2 nu_k eta_k^-) = prod_{j<k} (1 - 2 lambda_k lambda_j + 2 nu_k nu_j)
                                      / (1 - 2 lambda_k lambda_j - 2 nu_k nu_j),
    A_k^- = exp(2i sum_{j<k} theta_j),   theta_j = arccos(c_j / sqrt2),  c_j = 2 lambda_j.

The ``t -> +inf`` values use ``j > k`` instead.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .nsoliton import one_soliton, u_N
from .scattering import ScatteringData

FORM_TOL = 1e-12


class AsymptoticsError(ValueError):
    pass


@dataclass(frozen=True)
class ShiftReport:
    k: int
    sign: str
    eta: float
    phase: complex
    thetas: tuple[float, ...]

    def __post_init__(self):
        if abs(abs(self.phase) - 1.0) > 1e-12:
            raise AsymptoticsError("phase must have unit modulus")

    def row(self) -> list:
        return [self.k, self.sign, self.eta, self.phase.real, self.phase.imag, self.thetas[self.k - 1]]


def _partners(N: int, k: int, sign: str) -> range:
    if not 1 <= k <= N:
        raise AsymptoticsError(f"soliton index {k} outside 1..{N}")
    if sign == "-":
        return range(0, k - 1)
    if sign == "+":
        return range(k, N)
    raise AsymptoticsError(f"sign must be '+' or '-', got {sign!r}")


def eta_lambda_form(data: ScatteringData, k: int, sign: str) -> float:
    lam, nu = data.lam, data.nu
    i = k - 1
    total = 0.0
    for j in _partners(data.N, k, sign):
        den = 1.0 - 2.0 * lam[i] * lam[j] - 2.0 * nu[i] * nu[j]
        if not den > 0:
            raise AsymptoticsError("shift denominator must be positive for distinct admissible lambdas")
        total += math.log((1.0 - 2.0 * lam[i] * lam[j] + 2.0 * nu[i] * nu[j]) / den)
    return float(-total / (2.0 * nu[i])) + 0.0


def eta_speed_form(data: ScatteringData, k: int, sign: str) -> float:
    c = data.speeds
    i = k - 1
    sk = math.sqrt(2.0 - c[i] ** 2)
    total = 0.0
    for j in _partners(data.N, k, sign):
        sj = math.sqrt(2.0 - c[j] ** 2)
        total += math.log((2.0 - c[j] * c[i] + sj * sk) / (2.0 - c[j] * c[i] - sj * sk))
    return float(-total / sk) + 0.0


def shift_eta(data: ScatteringData, k: int, sign: str) -> float:
    """Collision shift ``eta_k^sign`` (1-based ``k``); both closed forms must agree."""
    a = eta_lambda_form(data, k, sign)
    b = eta_speed_form(data, k, sign)
    if abs(a - b) > FORM_TOL * max(1.0, abs(a)):
        raise AsymptoticsError(f"shift forms disagree: {a!r} vs {b!r}")
    return a


def phase_A(data: ScatteringData, k: int, sign: str) -> complex:
    """Asymptotic phase ``A_k^sign``."""
    theta = data.thetas
    s = sum(float(theta[j]) for j in _partners(data.N, k, sign))
    return complex(np.exp(2j * s))


def shift_report(data: ScatteringData, k: int, sign: str) -> ShiftReport:
    thetas = tuple(float(v) for v in data.thetas)
    return ShiftReport(k, sign, shift_eta(data, k, sign), phase_A(data, k, sign), thetas)


def shift_table(data: ScatteringData) -> list[ShiftReport]:
    return [shift_report(data, k, s) for k in range(1, data.N + 1) for s in ("-", "+")]


# -------------------------------------------------------------- cofactors --

def det_leibniz(M: np.ndarray) -> complex:
    """Determinant by the permutation expansion (oracle for small sizes)."""
    M = np.asarray(M)
    n = M.shape[0]
    total = 0j
    for perm in itertools.permutations(range(n)):
        inv = sum(1 for a in range(n) for b in range(a + 1, n) if perm[a] > perm[b])
        prod = 1 + 0j
        for r, c in enumerate(perm):
            prod *= M[r, c]
        total += -prod if inv % 2 else prod
    return complex(total)


def cofactor_matrix(K: np.ndarray, det=np.linalg.det) -> np.ndarray:
    """Signed minors ``(-1)^{i+j} det(K without row i, column j)``."""
    K = np.asarray(K, dtype=complex)
    n = K.shape[0]
    if K.shape != (n, n):
        raise ValueError("cofactors need a square matrix")
    if n > 8:
        raise ValueError("cofactor expansion by minors is limited to size 8")
    if n == 1:
        return np.ones((1, 1), dtype=complex)
    C = np.empty((n, n), dtype=complex)
    for i in range(n):
        for j in range(n):
            minor = np.delete(np.delete(K, i, axis=0), j, axis=1)
            C[i, j] = (-1) ** (i + j) * det(minor)
    return C


def cofactor_identity_check(M: np.ndarray, X: complex, det=np.linalg.det) -> tuple[complex, complex, float]:
    """Compare ``det(M + X J)`` with ``det(M) + X * sum(cofactors of M + X J)`` (J all ones)."""
    M = np.asarray(M, dtype=complex)
    K = M + X * np.ones_like(M)
    lhs = complex(det(K))
    rhs = complex(det(M) + X * cofactor_matrix(K, det).sum())
    return lhs, rhs, abs(lhs - rhs)


def relative_gap(M: np.ndarray, X: complex, det=np.linalg.det) -> float:
    """Gap of :func:`cofactor_identity_check` scaled by the size of the terms involved."""
    M = np.asarray(M, dtype=complex)
    K = M + X * np.ones_like(M)
    lhs, rhs, gap = cofactor_identity_check(M, X, det)
    scale = max(abs(lhs), abs(det(M)), abs(X) * float(np.abs(cofactor_matrix(K, det)).sum()), 1e-300)
    return gap / scale


# ------------------------------------------------------------- limits ------

def empirical_limit(data: ScatteringData, k: int, sign: str, T_values, eta_grid) -> np.ndarray:
    """Max over ``eta`` of ``|u_N(t, eta + 2 lambda_k t) - A U(eta - eta_k)|`` with ``t = +-T``."""
    lam_k, mu_k = float(data.lam[k - 1]), float(data.mu0[k - 1])
    eta_k = shift_eta(data, k, sign)
    A = phase_A(data, k, sign)
    eta_grid = np.asarray(eta_grid, dtype=float)
    target = A * one_soliton(lam_k, mu_k, 0.0, eta_grid - eta_k)
    out = []
    for T in np.atleast_1d(T_values):
        if not T > 0:
            raise ValueError("T values must be positive")
        t = T if sign == "+" else -T
        field = u_N(data, t, eta_grid + 2.0 * lam_k * t)
        out.append(float(np.max(np.abs(field - target))))
    return np.array(out)


def soliton_center(x, u) -> float:
    """Position of the interior minimum of ``|u|``, refined by a parabola through three samples."""
    x = np.asarray(x, dtype=float)
    m = np.abs(np.asarray(u)) ** 2
    i = int(np.argmin(m))
    if i == 0 or i == m.size - 1:
        raise AsymptoticsError("no interior minimum of |u| in the samples")
    y0, y1, y2 = m[i - 1], m[i], m[i + 1]
    curv = y0 - 2.0 * y1 + y2
    if curv <= 0:
        return float(x[i])
    h = x[i + 1] - x[i]
    return float(x[i] + 0.5 * h * (y0 - y2) / curv)
