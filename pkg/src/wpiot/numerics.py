"""Fading distributions, the Marcum Q function, and stationary solving.

Everything downstream (chain builders, the coupled solver, the block
simulator) funnels through the three primitives in this module: the
first-order Marcum Q function, the CDF/sampler of a Rician *power* gain,
and a dense direct solve for the stationary vector of a row-stochastic
matrix.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaincc


class SolverError(RuntimeError):
    """Stationary solve failed (singular or reducible chain).

    Carries the l1 residual achieved, if one could be computed.
    """

    def __init__(self, msg: str, residual: float | None = None):
        super().__init__(msg)
        self.residual = residual


@dataclass(frozen=True)
class ToleranceConfig:
    """Numeric tolerances shared across the analysis pipeline."""

    marcum_abs_tol: float = 1e-12
    solver_residual_tol: float = 1e-10
    max_iterations: int = 10_000

    def __post_init__(self):
        if not (self.marcum_abs_tol > 0 and self.solver_residual_tol > 0):
            raise ValueError("tolerances must be strictly positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


def marcum_q1(a: float, b: float, abs_tol: float = 1e-12) -> float:
    """First-order Marcum Q function Q1(a, b).

    Computed through the Poisson mixture form of the canonical Bessel
    series,

        Q1(a, b) = sum_k  pois(k; a^2/2) * P[chi2_{2(k+1)} > b^2],

    which has only non-negative terms, so no cancellation occurs for any
    argument ordering (including b >> a).  The sum is anchored at the
    Poisson mode and swept outward in both directions; truncation stops
    once the geometric bound on the remaining Poisson mass drops below
    ``abs_tol``.  Kahan compensation keeps the accumulated roundoff below
    the tolerance even when tens of thousands of terms contribute.
    """
    if not (math.isfinite(a) and math.isfinite(b)):
        raise ValueError(f"marcum_q1 requires finite arguments, got a={a}, b={b}")
    if a < 0 or b < 0:
        raise ValueError(f"marcum_q1 requires non-negative arguments, got a={a}, b={b}")
    x = 0.5 * a * a  # Poisson mean
    y = 0.5 * b * b
    if y == 0.0:  # includes b small enough that b^2/2 underflows
        return 1.0
    if x == 0.0:
        return math.exp(-y)

    k0 = int(x)
    logy = math.log(y)
    pois0 = math.exp(k0 * math.log(x) - x - math.lgamma(k0 + 1))
    g0 = float(gammaincc(k0 + 1, y))  # P[chi2_{2(k0+1)} > 2y]

    total = pois0 * g0
    comp = 0.0  # Kahan compensation

    def add(term: float):
        nonlocal total, comp
        t = term - comp
        s = total + t
        comp = (s - total) - t
        total = s

    # Upward sweep from the mode.  The gamma-tail increment
    # t_k = exp(k*log y - y - lgamma(k+1)) is tracked in log space: the
    # terms can dip below the smallest subnormal and recover, which a
    # multiplicative recurrence cannot do.
    pois = pois0
    g = g0
    ltg = (k0 + 1) * logy - y - math.lgamma(k0 + 2)
    k = k0
    while True:
        k += 1
        pois *= x / k
        g = min(1.0, g + math.exp(ltg))
        ltg += logy - math.log(k + 1)
        add(pois * g)
        if k > x:
            r = x / (k + 1)
            if pois * r / (1.0 - r) < 0.25 * abs_tol:
                break

    # downward sweep from the mode
    pois = pois0
    g = g0
    ltg = k0 * logy - y - math.lgamma(k0 + 1)
    k = k0
    while k > 0:
        pois *= k / x
        g = max(0.0, g - math.exp(ltg))
        ltg += math.log(k) - logy
        k -= 1
        add(pois * g)
        if k > 0 and k < x:
            r = k / x
            if pois * r / (1.0 - r) < 0.25 * abs_tol:
                break

    return min(1.0, total)


@dataclass(frozen=True)
class RicianChannel:
    """Rician fading described by its power gain.

    ``mean_gain`` is the average channel power gain and ``rician_factor``
    the ratio of line-of-sight power to scattered power.  A factor of 0
    collapses to Rayleigh fading, i.e. an exponential power gain.
    """

    mean_gain: float
    rician_factor: float

    def __post_init__(self):
        if not (self.mean_gain > 0):
            raise ValueError(f"mean_gain must be > 0, got {self.mean_gain}")
        if not (self.rician_factor >= 0):
            raise ValueError(f"rician_factor must be >= 0, got {self.rician_factor}")


def rician_power_cdf(ch: RicianChannel, x) -> float | np.ndarray:
    """CDF of the channel power gain: 1 - Q1(sqrt(2*psi), sqrt(2*(psi+1)*x/mean)).

    Accepts a scalar or an array of non-negative gains; the result is
    clamped to [0, 1].
    """
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise ValueError("rician_power_cdf requires finite gains >= 0")
    a = math.sqrt(2.0 * ch.rician_factor)
    scale = 2.0 * (ch.rician_factor + 1.0) / ch.mean_gain
    out = np.empty(arr.shape, dtype=float)
    flat = arr.ravel()
    oflat = out.ravel()
    for idx, xi in enumerate(flat):
        oflat[idx] = 1.0 - marcum_q1(a, math.sqrt(scale * xi))
    out = np.clip(out, 0.0, 1.0)
    if np.isscalar(x) or arr.ndim == 0:
        return float(out.reshape(-1)[0])
    return out


def rician_gaussian_params(ch: RicianChannel) -> tuple[float, float]:
    """Per-component mean and standard deviation of the complex Gaussian.

    The gain is |g|^2 with g = (mu + sigma*z1) + j(mu + sigma*z2); the
    line-of-sight power psi/(psi+1)*mean splits evenly across the two
    components and the scattered power mean/(psi+1) gives the variance.
    """
    psi = ch.rician_factor
    mu = math.sqrt(psi * ch.mean_gain / (2.0 * (psi + 1.0)))
    sigma = math.sqrt(ch.mean_gain / (2.0 * (psi + 1.0)))
    return mu, sigma


def rician_power_sample(ch: RicianChannel, rng: np.random.Generator, size=None):
    """Draw channel power gains; the empirical mean converges to mean_gain."""
    mu, sigma = rician_gaussian_params(ch)
    z = rng.standard_normal(size=(2,) if size is None else (np.prod(size), 2))
    if size is None:
        return (mu + sigma * z[0]) ** 2 + (mu + sigma * z[1]) ** 2
    s = (mu + sigma * z[:, 0]) ** 2 + (mu + sigma * z[:, 1]) ** 2
    return s.reshape(size)


def check_row_stochastic(Z: np.ndarray, tol: float = 1e-12) -> None:
    """Raise if Z is not a row-stochastic square matrix within tol."""
    Z = np.asarray(Z)
    if Z.ndim != 2 or Z.shape[0] != Z.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {Z.shape}")
    if np.any(Z < -tol) or np.any(Z > 1 + tol):
        raise ValueError("transition entries outside [0, 1]")
    err = np.abs(Z.sum(axis=1) - 1.0).max()
    if err > tol:
        raise ValueError(f"rows deviate from stochastic by {err:.3e} > {tol:.1e}")


def solve_stationary_direct(
    Z: np.ndarray, tol: ToleranceConfig | None = None
) -> np.ndarray:
    """Stationary distribution of a row-stochastic matrix by dense solve.

    Solves (Z^T - I + B) pi = 1 with B the all-ones matrix, which folds
    the normalization constraint into the linear system.  The caller is
    responsible for irreducibility and aperiodicity; a singular system or
    a residual above ``solver_residual_tol`` raises SolverError with the
    achieved residual attached.
    """
    tol = tol or ToleranceConfig()
    Z = np.asarray(Z, dtype=float)
    check_row_stochastic(Z)
    n = Z.shape[0]
    A = Z.T - np.eye(n) + np.ones((n, n))
    try:
        pi = np.linalg.solve(A, np.ones(n))
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"stationary system is singular: {exc}") from exc
    residual = float(np.abs(Z.T @ pi - pi).sum())
    if residual > tol.solver_residual_tol or not np.all(np.isfinite(pi)):
        raise SolverError(
            f"stationary residual {residual:.3e} exceeds "
            f"{tol.solver_residual_tol:.1e} (reducible or ill-conditioned chain)",
            residual=residual,
        )
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()
