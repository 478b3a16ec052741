"""Scattering data for the defocusing Gross-Pitaevskii equation.

The discrete spectrum is a list of points ``-1/sqrt(2) < lambda_1 < ... <
lambda_N < 1/sqrt(2)`` with strictly negative norming constants ``mu_k``.
The continuous spectrum carries a real reflection coefficient ``c(lambda)``
defined on the two branches ``|lambda| >= 1/sqrt(2)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import erfc

SQRT2 = math.sqrt(2.0)
LAMBDA_EDGE = 1.0 / SQRT2
DEFAULT_GUARD = 1e-6


class ScatteringError(ValueError):
    """Raised for scattering data violating the admissibility hypotheses."""


def nu_of_lambda(lam):
    """Return ``sqrt(1/2 - lambda**2)`` for ``|lambda| < 1/sqrt(2)``."""
    lam_arr = np.asarray(lam, dtype=float)
    if np.any(np.abs(lam_arr) >= LAMBDA_EDGE):
        raise ScatteringError(f"|lambda| must be < 1/sqrt(2), got {lam}")
    out = np.sqrt(0.5 - lam_arr * lam_arr)
    return float(out) if out.ndim == 0 else out


def evolve_mu(mu0, lam, t):
    """Isospectral flow of a norming constant: ``mu0 * exp(4 lambda nu t)``."""
    mu0_arr = np.asarray(mu0, dtype=float)
    if np.any(mu0_arr >= 0):
        raise ScatteringError("norming constants must be strictly negative")
    out = mu0_arr * np.exp(4.0 * np.asarray(lam) * nu_of_lambda(lam) * np.asarray(t))
    return float(out) if np.ndim(out) == 0 else out


def speed_of_lambda(lam):
    lam_arr = np.asarray(lam, dtype=float)
    if np.any(np.abs(lam_arr) >= LAMBDA_EDGE):
        raise ScatteringError(f"|lambda| must be < 1/sqrt(2), got {lam}")
    out = 2.0 * lam_arr
    return float(out) if out.ndim == 0 else out


def theta_of_speed(c):
    """Collision angle ``arccos(c / sqrt(2))`` in ``(0, pi)``."""
    c_arr = np.asarray(c, dtype=float)
    if np.any(np.abs(c_arr) >= SQRT2):
        raise ScatteringError(f"|c| must be < sqrt(2), got {c}")
    out = np.arccos(c_arr / SQRT2)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ScatteringData:
    """Validated discrete scattering data; build it with :func:`validate`."""

    lambdas: tuple[float, ...]
    mus0: tuple[float, ...]
    guard_delta: float = DEFAULT_GUARD

    @property
    def N(self) -> int:
        return len(self.lambdas)

    @property
    def lam(self) -> np.ndarray:
        return np.array(self.lambdas, dtype=float)

    @property
    def mu0(self) -> np.ndarray:
        return np.array(self.mus0, dtype=float)

    @property
    def nu(self) -> np.ndarray:
        return np.sqrt(0.5 - self.lam**2)

    def mu(self, t: float) -> np.ndarray:
        """Norming constants at time ``t``."""
        lam = self.lam
        return self.mu0 * np.exp(4.0 * lam * self.nu * t)

    @property
    def speeds(self) -> np.ndarray:
        return 2.0 * self.lam

    @property
    def thetas(self) -> np.ndarray:
        return np.arccos(self.speeds / SQRT2)

    def nus_distinct(self, rtol: float = 1e-12) -> bool:
        nu = np.sort(self.nu)
        return bool(np.all(np.diff(nu) > rtol * np.maximum(nu[1:], 1.0)))

    def translated(self, a: float) -> "ScatteringData":
        """Data whose N-soliton equals the original one shifted by ``a`` in x."""
        mus = tuple(float(m * np.exp(2.0 * n * a)) for m, n in zip(self.mus0, self.nu))
        return ScatteringData(self.lambdas, mus, self.guard_delta)

    def advanced(self, s: float) -> "ScatteringData":
        """Data whose N-soliton at time t equals the original one at ``t + s``."""
        return ScatteringData(self.lambdas, tuple(float(m) for m in self.mu(s)), self.guard_delta)

    def to_dict(self) -> dict:
        return {"lambdas": list(self.lambdas), "mus0": list(self.mus0), "guard_delta": self.guard_delta}


def validate(
    lambdas: Sequence[float],
    mus0: Sequence[float],
    guard_delta: float = DEFAULT_GUARD,
    require_distinct_nu: bool = False,
) -> ScatteringData:
    """Check raw discrete data and return an immutable :class:`ScatteringData`.

    Parameters
    ----------
    lambdas, mus0 : sequence of float
        Spectral points and initial norming constants, equal length N >= 0.
    guard_delta : float
        Reject ``|lambda|`` within this distance of ``1/sqrt(2)``; ``nu -> 0``
        there and the exponential kernels degenerate.
    require_distinct_nu : bool
        Also reject data with repeated ``nu_k`` (needed by the far-field
        comparison with the pure N-soliton).
    """
    lam = [float(v) for v in lambdas]
    mu = [float(v) for v in mus0]
    if len(lam) != len(mu):
        raise ScatteringError(f"got {len(lam)} lambdas but {len(mu)} norming constants")
    if not all(math.isfinite(v) for v in lam + mu):
        raise ScatteringError("scattering data must be finite")
    if guard_delta < 0:
        raise ScatteringError("guard_delta must be non-negative")
    for a, b in zip(lam, lam[1:]):
        if not b > a:
            raise ScatteringError(f"lambdas must be strictly increasing, got {a} then {b}")
    for v in lam:
        if abs(v) >= LAMBDA_EDGE:
            raise ScatteringError(f"lambda={v} outside (-1/sqrt(2), 1/sqrt(2))")
        if LAMBDA_EDGE - abs(v) < guard_delta:
            raise ScatteringError(f"lambda={v} within guard {guard_delta} of 1/sqrt(2)")
    for v in mu:
        if not v < 0:
            raise ScatteringError(f"norming constant mu={v} must be strictly negative")
    data = ScatteringData(tuple(lam), tuple(mu), float(guard_delta))
    if require_distinct_nu and not data.nus_distinct():
        raise ScatteringError("the nu_k must be pairwise distinct (lambda_j = -lambda_k is not allowed)")
    return data


@dataclass(frozen=True)
class SolitonParams:
    """Traveling dark soliton ``exp(i theta0) U_c(x - x0 - c t)``."""

    c: float
    x0: float = 0.0
    theta0: float = 0.0

    def __post_init__(self):
        if not abs(self.c) < SQRT2:
            raise ScatteringError(f"soliton speed must satisfy |c| < sqrt(2), got {self.c}")


def lambda_of_xi(xi):
    return np.sqrt(np.asarray(xi, dtype=float) ** 2 + 0.5)


def xi_of_lambda(lam):
    lam = np.abs(np.asarray(lam, dtype=float))
    return np.sqrt(np.maximum(lam * lam - 0.5, 0.0))


_FAMILIES = ("none", "gaussian", "table")


@dataclass(frozen=True)
class ReflectionCoefficient:
    """Real reflection coefficient on the two continuous-spectrum branches.

    ``family`` selects the shape:

    * ``"none"``: ``c == 0`` (pure N-soliton);
    * ``"gaussian"``: ``c(+-lambda) = amplitude * exp(-xi**2 / width**2)`` on
      both branches, with ``xi = sqrt(lambda**2 - 1/2)``;
    * ``"table"``: samples ``(lambda, value)`` with ``|lambda| >= 1/sqrt(2)``,
      linearly interpolated in ``|lambda|`` on each branch and zero outside the
      sampled range. ``amplitude`` scales the samples.
    """

    family: str = "none"
    amplitude: float = 0.0
    width: float = 1.0
    decay_index: int = 3
    samples: tuple[tuple[float, float], ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ScatteringError(f"unknown reflection family {self.family!r}; expected one of {_FAMILIES}")
        if not isinstance(self.decay_index, int) or self.decay_index < 3:
            raise ScatteringError("decay_index must be an integer >= 3")
        if isinstance(self.amplitude, complex) or not math.isfinite(self.amplitude):
            raise ScatteringError("reflection amplitude must be a finite real number")
        if self.family == "gaussian" and not self.width > 0:
            raise ScatteringError("gaussian width must be positive")
        if self.family == "table":
            if len(self.samples) == 0:
                raise ScatteringError("table reflection needs samples")
            for row in self.samples:
                if len(row) != 2:
                    raise ScatteringError("table samples are (lambda, value) pairs")
                lam, val = row
                if isinstance(val, complex) or isinstance(lam, complex):
                    raise ScatteringError("reflection samples must be real-valued")
                if abs(lam) < LAMBDA_EDGE:
                    raise ScatteringError(f"sample lambda={lam} is not on the continuous spectrum")
            for sign in (1.0, -1.0):
                lams = [abs(l) for l, _ in self.samples if np.sign(l) == sign]
                if len(lams) == 1 or (lams and np.any(np.diff(lams) <= 0)):
                    raise ScatteringError("table samples must be strictly monotone in |lambda| per branch, >= 2 each")
        else:
            object.__setattr__(self, "samples", tuple())

    @property
    def is_zero(self) -> bool:
        if self.family == "none" or self.amplitude == 0.0:
            return True
        if self.family == "table":
            return all(v == 0.0 for _, v in self.samples)
        return False

    def branches_at_xi(self, xi) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(c(lambda(xi)), c(-lambda(xi)))`` for real ``xi``."""
        xi = np.asarray(xi, dtype=float)
        if self.is_zero:
            z = np.zeros_like(xi)
            return z, z.copy()
        if self.family == "gaussian":
            v = self.amplitude * np.exp(-(xi / self.width) ** 2)
            return v, v.copy()
        lam = lambda_of_xi(xi)
        return self._table_branch(lam, 1.0), self._table_branch(lam, -1.0)

    def _table_branch(self, abs_lam: np.ndarray, sign: float) -> np.ndarray:
        rows = sorted((abs(l), v) for l, v in self.samples if np.sign(l) == sign)
        if not rows:
            return np.zeros_like(abs_lam)
        grid = np.array([r[0] for r in rows])
        vals = np.array([r[1] for r in rows], dtype=float)
        return self.amplitude * np.interp(abs_lam, grid, vals, left=0.0, right=0.0)

    def __call__(self, lam) -> np.ndarray:
        """Evaluate ``c(lambda)`` for ``|lambda| >= 1/sqrt(2)``."""
        lam = np.asarray(lam, dtype=float)
        if np.any(np.abs(lam) < LAMBDA_EDGE - 1e-15):
            raise ScatteringError("c(lambda) is only defined for |lambda| >= 1/sqrt(2)")
        plus, minus = self.branches_at_xi(xi_of_lambda(lam))
        return np.where(lam >= 0, plus, minus)

    def xi_cutoff(self, tol: float = 1e-12) -> float:
        """Truncation ``Xi`` such that the ``|xi| > Xi`` tail of the kernel integrals is below ``tol``."""
        if self.is_zero:
            return 0.0
        if self.family == "gaussian":
            a, w = abs(self.amplitude), self.width
            # tail of int |c1| + |c2| + |xi c2| + ... stays below a few times a*w*erfc(Xi/w)
            xi = w
            while 4.0 * a * w * erfc(xi / w) * (1.0 + xi) ** 3 > tol:
                xi += 0.25 * w
            return float(xi)
        return float(np.max(xi_of_lambda([l for l, _ in self.samples])))

    def tail_bound(self, xi_cut: float) -> float:
        """Bound on the discarded ``|xi| > xi_cut`` part of the kernel integrals."""
        if self.is_zero:
            return 0.0
        if self.family == "gaussian":
            a, w = abs(self.amplitude), self.width
            return float(4.0 * a * w * erfc(xi_cut / w) * (1.0 + xi_cut) ** 3)
        top = float(np.max(xi_of_lambda([l for l, _ in self.samples])))
        if xi_cut >= top:
            return 0.0
        # weighted decay bound |c(lambda)| <= M lambda^-(n+2)
        n = self.decay_index
        M = self.sup_weighted(n + 2)
        return float(4.0 * M * xi_cut ** (-(n + 1)) / (n + 1)) if xi_cut > 0 else math.inf

    def spatial_extent(self) -> float:
        """Half-width in z outside which the t = 0 Fourier kernels are negligible."""
        if self.is_zero:
            return 0.0
        if self.family == "gaussian":
            return 2.0 * math.sqrt(40.0) / self.width
        return 200.0

    def sup_weighted(self, k: int, n_samples: int = 4001) -> float:
        """Sampled ``sup_{|lambda| >= 1/sqrt(2)} |lambda^k c(lambda)|`` over both branches."""
        if self.is_zero:
            return 0.0
        xi_max = max(self.xi_cutoff(1e-16), 1.0)
        xi = np.linspace(0.0, xi_max, n_samples)
        lam = lambda_of_xi(xi)
        plus, minus = self.branches_at_xi(xi)
        return float(np.max(lam**k * np.maximum(np.abs(plus), np.abs(minus))))

    def to_dict(self) -> dict:
        out = {"family": self.family, "amplitude": self.amplitude, "width": self.width,
               "decay_index": self.decay_index}
        if self.family == "table":
            out["samples"] = [list(s) for s in self.samples]
        return out

    @classmethod
    def from_dict(cls, raw: dict | None) -> "ReflectionCoefficient":
        if not raw:
            return cls()
        family = raw.get("family", "none")
        samples = tuple((float(r[0]), _real(r[1])) for r in raw.get("samples", ()))
        return cls(
            family=family,
            amplitude=_real(raw.get("amplitude", 1.0 if family == "table" else 0.0)),
            width=float(raw.get("width", 1.0)),
            decay_index=int(raw.get("decay_index", 3)),
            samples=samples,
        )


def _real(v) -> float:
    if isinstance(v, complex) or isinstance(v, (list, dict)):
        raise ScatteringError(f"expected a real number, got {v!r}")
    return float(v)
