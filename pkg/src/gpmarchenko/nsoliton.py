"""Exact N-soliton solutions from the reflectionless Marchenko system.

With ``c == 0`` the Marchenko kernels are finite sums of exponentials and the
integral equations collapse to a small linear system.  We solve the N x N
system for ``G_k = g_k exp(-nu_k x)``

    H_k G_k + sqrt(2) sum_j ((lambda_k + lambda_j)/(nu_k + nu_j) + i) G_j = 1,
    H_k = -2 / (mu_k(0) (lambda_k - i nu_k)) exp(2 nu_k (x - 2 lambda_k t)),

and reconstruct ``u_N = 1 + 2 sqrt(2) i sum_j conj(G_j)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.special import expit

from .fields import FieldGrid, GridSpec
from .scattering import SQRT2, ScatteringData, ScatteringError

EXP_RESCALE = 700.0
RESIDUAL_TOL = 1e-10


class NSolitonError(RuntimeError):
    """Linear solve failure; with admissible data this means overflow or bad input."""


def soliton_profile(c, x):
    """Traveling-wave profile ``U_c(x)`` of speed ``c``."""
    c = np.asarray(c, dtype=float)
    if np.any(np.abs(c) >= SQRT2):
        raise ScatteringError("soliton speed must satisfy |c| < sqrt(2)")
    k = np.sqrt(1.0 - c * c / 2.0)
    out = k * np.tanh(k * np.asarray(x, dtype=float) / SQRT2) + 1j * c / SQRT2
    return complex(out) if np.ndim(out) == 0 else out


def one_soliton(lam, mu0, t, x):
    """Closed-form 1-soliton for data ``{lambda, mu(0)}``."""
    if not abs(lam) < 1.0 / SQRT2:
        raise ScatteringError("|lambda| must be < 1/sqrt(2)")
    if not mu0 < 0:
        raise ScatteringError("mu(0) must be strictly negative")
    nu = math.sqrt(0.5 - lam * lam)
    s = np.asarray(x, dtype=float) - 2.0 * lam * np.asarray(t, dtype=float)
    # 1 / (1 - 2 sqrt2 nu e^{2 nu s} / mu0) written as a logistic to survive large s
    q = math.log(-2.0 * SQRT2 * nu / mu0)
    out = 1.0 + 4.0 * nu * (1j * lam - nu) * expit(-(2.0 * nu * s + q))
    return complex(out) if np.ndim(out) == 0 else out


def two_soliton_example(t, x):
    """The explicit 2-soliton for ``lambda = (-1/2, 1/2)``, ``mu(0) = (-1, -1)``."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    m = np.maximum(np.abs(x), np.abs(t))
    # 5 cosh x + 3 sinh x = 4 e^x + e^-x, scaled by e^-m against overflow
    base = 4.0 * np.exp(x - m) + np.exp(-x - m)
    num = base + 2.0 * SQRT2 * 1j * (np.exp(t - m) - np.exp(-t - m))
    den = base + 2.0 * SQRT2 * (np.exp(t - m) + np.exp(-t - m))
    out = num / den
    return complex(out) if np.ndim(out) == 0 else out


@dataclass
class NSolitonCoefficients:
    """Solved coefficients at one ``(t, x)``.

    ``G`` equals ``g_k exp(-nu_k x)``; ``f`` (when requested) holds the
    matching ``f_k exp(-nu_k x)``.  ``residual`` is the max-norm
    back-substitution residual of the G-system.
    """

    t: float
    x: float
    G: np.ndarray
    residual: float
    f: np.ndarray | None = None

    @property
    def g(self) -> np.ndarray:
        return self.G

    def unscaled(self, nu: np.ndarray) -> tuple[np.ndarray | None, np.ndarray]:
        """Return ``(f_k, g_k)`` without the ``exp(-nu_k x)`` factor."""
        w = np.exp(nu * self.x)
        return (None if self.f is None else self.f * w), self.G * w


def _exponents(data: ScatteringData, t, x) -> np.ndarray:
    lam, nu = data.lam, data.nu
    t = np.asarray(t, dtype=float)[..., None]
    x = np.asarray(x, dtype=float)[..., None]
    return 2.0 * nu * (x - 2.0 * lam * t)


def coupling_matrix(data: ScatteringData) -> np.ndarray:
    """The constant part ``sqrt(2) ((lambda_k + lambda_j)/(nu_k + nu_j) + i)``."""
    lam, nu = data.lam, data.nu
    return SQRT2 * ((lam[:, None] + lam[None, :]) / (nu[:, None] + nu[None, :]) + 1j)


def _assemble_batch(data: ScatteringData, t, x, rescale_above: float = EXP_RESCALE):
    lam, nu, mu0 = data.lam, data.nu, data.mu0
    E = _exponents(data, t, x)  # (..., N)
    shift = np.where(E > rescale_above, E, 0.0)
    scale = np.exp(-shift)
    diag = (-2.0 / (mu0 * (lam - 1j * nu))) * np.exp(E - shift)
    K = coupling_matrix(data)
    mats = K * scale[..., :, None]
    idx = np.arange(data.N)
    mats[..., idx, idx] += diag
    rhs = scale.astype(complex)
    return mats, rhs


def assemble_system(data: ScatteringData, t: float, x: float, rescale_above: float = EXP_RESCALE):
    """Matrix and right-hand side of the G-system at ``(t, x)``.

    Rows whose exponent ``2 nu_k (x - 2 lambda_k t)`` exceeds ``rescale_above``
    are multiplied by ``exp(-exponent)``; the solution is unchanged.
    """
    mats, rhs = _assemble_batch(data, float(t), float(x), rescale_above)
    return mats, rhs


def _solve_batch(mats: np.ndarray, rhs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    try:
        G = np.linalg.solve(mats, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise NSolitonError(f"N-soliton system is singular: {exc}") from exc
    res = np.max(np.abs(np.einsum("...ij,...j->...i", mats, G) - rhs), axis=-1)
    bound = RESIDUAL_TOL * (1.0 + np.max(np.abs(rhs), axis=-1))
    if not np.all(np.isfinite(G)) or np.any(res > bound):
        worst = float(np.nanmax(res)) if np.all(np.isfinite(res)) else math.inf
        raise NSolitonError(f"back-substitution residual {worst:.3e} exceeds tolerance")
    return G, res


def solve_G(data: ScatteringData, t: float, x: float, with_f: bool = False) -> NSolitonCoefficients:
    """Solve the G-system at one point (dense LU with partial pivoting)."""
    if data.N == 0:
        empty = np.zeros(0, dtype=complex)
        return NSolitonCoefficients(float(t), float(x), empty, 0.0, empty.copy() if with_f else None)
    mats, rhs = assemble_system(data, t, x)
    G, res = _solve_batch(mats, rhs)
    coeffs = NSolitonCoefficients(float(t), float(x), G, float(res))
    if with_f:
        coeffs.f = recover_f(data, t, x, G)
    return coeffs


def recover_f(data: ScatteringData, t: float, x: float, G: np.ndarray) -> np.ndarray:
    """Scaled first-component coefficients from the first Marchenko equation.

    Solves ``d_k f_k - sum_j f_j/(nu_j+nu_k) = -1 + sqrt2 (lambda_k + i nu_k) sum_j G_j/(nu_j+nu_k)``
    with ``d_k = 2 sqrt2 exp(2 nu_k (x - 2 lambda_k t)) / mu_k(0)``.
    """
    lam, nu, mu0 = data.lam, data.nu, data.mu0
    S = 1.0 / (nu[:, None] + nu[None, :])
    E = _exponents(data, t, x)
    shift = np.where(E > EXP_RESCALE, E, 0.0)
    scale = np.exp(-shift)
    mat = -S * scale[:, None]
    mat[np.diag_indices(data.N)] += 2.0 * SQRT2 * np.exp(E - shift) / mu0
    rhs = (-1.0 + SQRT2 * (lam + 1j * nu) * (S @ G)) * scale
    f, _ = _solve_batch(mat.astype(complex), rhs)
    return f


def u_N(data: ScatteringData, t, x, chunk: int = 20000):
    """N-soliton field at scalar or broadcastable array arguments."""
    t_arr, x_arr = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
    if data.N == 0:
        out = np.ones(t_arr.shape, dtype=complex)
        return complex(out) if out.ndim == 0 else out
    tf, xf = t_arr.ravel(), x_arr.ravel()
    out = np.empty(tf.size, dtype=complex)
    for s in range(0, tf.size, chunk):
        mats, rhs = _assemble_batch(data, tf[s:s + chunk], xf[s:s + chunk])
        G, _ = _solve_batch(mats, rhs)
        out[s:s + chunk] = 1.0 + 2.0 * SQRT2 * 1j * np.conj(G).sum(axis=-1)
    out = out.reshape(t_arr.shape)
    return complex(out) if out.ndim == 0 else out


def kernel_upsilon(data: ScatteringData, t: float, x: float, p) -> np.ndarray:
    """Reflectionless Marchenko kernel ``Upsilon(t, x, x + p)`` as a ``(2, len(p))`` array."""
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if np.any(p < 0):
        raise ValueError("p must be non-negative")
    if data.N == 0:
        return np.zeros((2, p.size), dtype=complex)
    coeffs = solve_G(data, t, x, with_f=True)
    decay = np.exp(-np.outer(data.nu, p))  # (N, P)
    return np.vstack([coeffs.f @ decay, coeffs.G @ decay])


def marchenko_system_2n(data: ScatteringData, t: float, x: float) -> tuple[np.ndarray, np.ndarray]:
    """The unscaled 2N x 2N system ``(I + T) F = C`` for ``F = (f, g)``.

    Only usable for moderate ``|x|``; it is kept as an independent route to the
    coefficients and to the similarity argument behind invertibility.
    """
    lam, nu = data.lam, data.nu
    mu = data.mu(t)
    alpha = mu * (lam - 1j * nu)
    beta = SQRT2 * alpha
    S = np.exp(-(nu[:, None] + nu[None, :]) * x) / (nu[:, None] + nu[None, :])
    A = -mu[:, None] * S
    B = -beta[:, None] * S
    T = np.block([[A, np.conj(B)], [B, A]]) / (2.0 * SQRT2)
    C = np.concatenate([-mu * np.exp(-nu * x), -beta * np.exp(-nu * x)]) / (2.0 * SQRT2)
    return np.eye(2 * data.N) + T, C


def gram_matrix(data: ScatteringData, t: float, x: float) -> np.ndarray:
    """The Hermitian matrix ``(A - conj(B) D + I) D_hat`` of the invertibility argument.

    Entries are ``(mu_i mu_j + conj(beta_i) beta_j) e^{-(nu_i+nu_j) x}/(nu_i+nu_j) - mu_i delta_ij``
    with ``beta_i = sqrt2 mu_i (lambda_i - i nu_i)`` and ``mu = mu(t)``.
    """
    lam, nu = data.lam, data.nu
    mu = data.mu(t)
    beta = SQRT2 * mu * (lam - 1j * nu)
    S = np.exp(-(nu[:, None] + nu[None, :]) * x) / (nu[:, None] + nu[None, :])
    A = -mu[:, None] * S
    B = -beta[:, None] * S
    D = np.diag(-beta / mu)
    D_hat = np.diag(-mu)
    return (A - np.conj(B) @ D + np.eye(data.N)) @ D_hat


def gram_min_eigenvalue(data: ScatteringData, t: float, x: float, herm_tol: float = 1e-12) -> float:
    """Smallest eigenvalue of :func:`gram_matrix`; positive for admissible data.

    The matrix is strongly graded (its diagonal spans many orders of magnitude
    once ``mu_k(t) e^{-nu_k x}`` spreads out), so a plain symmetric eigensolver
    loses the small end of the spectrum to round-off.  We factor the
    diagonally scaled matrix ``D^-1 H D^-1 = L L^H`` instead and return
    ``1 / sigma_max(L^-1 D^-1)^2``; the largest singular value is computed to
    full relative accuracy.  If the factorization fails, the plain eigensolver
    result is returned so a genuinely indefinite matrix still reports <= 0.
    """
    if data.N == 0:
        return math.inf
    H = gram_matrix(data, t, x)
    scale = max(np.max(np.abs(H)), 1.0)
    asym = np.max(np.abs(H - H.conj().T)) / scale
    if asym > herm_tol:
        raise NSolitonError(f"assembled matrix is not Hermitian (relative asymmetry {asym:.2e})")
    H = 0.5 * (H + H.conj().T)
    diag = np.real(np.diag(H))
    if np.all(diag > 0):
        d = np.sqrt(diag)
        try:
            L = cholesky(H / d[:, None] / d[None, :], lower=True)
        except np.linalg.LinAlgError:
            pass
        else:
            inv = solve_triangular(L, np.eye(data.N), lower=True) / d[None, :]
            return float(1.0 / np.linalg.norm(inv, 2) ** 2)
    return float(np.linalg.eigvalsh(H)[0])


def grid_eval(data: ScatteringData, spec: GridSpec) -> FieldGrid:
    """Sample ``u_N`` on every ``(t_i, x_j)`` of the grid."""
    t, x = spec.t_axis(), spec.x_axis()
    T, X = np.meshgrid(t, x, indexing="ij")
    u = u_N(data, T, X)
    return FieldGrid(t, x, np.asarray(u).reshape(T.shape), provenance="nsoliton",
                     meta={"scattering": data.to_dict(), "grid": spec.to_dict()})
