"""Asymptotic null/alternative densities of correlation summary statistics.

For an n-row observation window over p weakly dependent variables, the
per-variable summary statistic (the largest absolute correlation of one
variable with any other) is asymptotically distributed, for large p, as

    P(V_k <= rho) = exp(-(p - 1) * P0(rho) * J_k)

where ``P0`` is the null probability that a single sample correlation
magnitude exceeds ``rho`` and ``J_k`` is a dispersion parameter equal to 1
when the pre-change dispersion matrix is diagonal.  The global statistic
(the largest absolute correlation over all pairs) follows the same
one-parameter family with the per-variable pair count ``p - 1`` replaced
by the total pair count ``p * (p - 1) / 2``.

``null_exceedance`` evaluates P0 by adaptive quadrature with a cached
Beta-function constant; everything else is closed-form on top of it.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, optimize, special

from .errors import ConfigError

MIN_WINDOW_ROWS = 5  # below this the (1 - rho^2) exponent is <= 0 and the density degenerates


@lru_cache(maxsize=None)
def beta_constant(n: int) -> float:
    """B(1/2, (n-2)/2), the normalizing constant shared by all densities."""
    return float(special.beta(0.5, (n - 2) / 2.0))


def _tail_integral(rho: float, n: int) -> float:
    """Adaptive quadrature of (1 - u^2)^((n-4)/2) over [rho, 1]."""
    expo = (n - 4) / 2.0
    value, _ = integrate.quad(
        lambda u: (1.0 - u * u) ** expo, rho, 1.0, epsabs=1e-13, epsrel=1e-11
    )
    return value


def _check_n(n: int) -> None:
    if n < MIN_WINDOW_ROWS:
        raise ConfigError(f"window length n={n} unsupported; need n >= {MIN_WINDOW_ROWS}")


def null_exceedance(rho, n: int):
    """P0(rho): null probability that a sample correlation magnitude exceeds rho.

    Accepts a scalar or array ``rho`` in [0, 1]; returns the same shape.
    Strictly decreasing with P0(0) = 1 and P0(1) = 0, evaluated to an
    absolute error below 1e-10.
    """
    _check_n(n)
    arr = np.asarray(rho, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ConfigError("rho must lie in [0, 1]")
    norm = beta_constant(n)
    flat = arr.ravel()
    out = np.empty_like(flat)
    for i, x in enumerate(flat):
        if x == 0.0:
            out[i] = 1.0
        elif x == 1.0:
            out[i] = 0.0
        else:
            out[i] = min(1.0, max(0.0, 2.0 * _tail_integral(x, n) / norm))
    if arr.ndim == 0:
        return float(out[0])
    return out.reshape(arr.shape)


def null_exceedance_inverse(q: float, n: int) -> float:
    """Solve P0(rho) = q for rho in [0, 1] (P0 is strictly decreasing)."""
    _check_n(n)
    if not 0.0 <= q <= 1.0:
        raise ConfigError("target probability must lie in [0, 1]")
    if q == 1.0:
        return 0.0
    if q == 0.0:
        return 1.0
    return float(
        optimize.brentq(lambda r: null_exceedance(r, n) - q, 0.0, 1.0, xtol=1e-13)
    )


@dataclass(frozen=True)
class DensityParams:
    """Parameters of the summary-statistic density family.

    ``dispersion`` is the family's one-dimensional index; 1.0 is the
    diagonal-dispersion null.  ``hub_degree`` is fixed at 1: only the
    nearest-neighbour reduction of the general hub-degree family is
    supported.
    """

    n_samples: int
    n_variables: int
    dispersion: float = 1.0
    hub_degree: int = 1

    def __post_init__(self) -> None:
        _check_n(self.n_samples)
        if self.n_variables < 2:
            raise ConfigError("need at least 2 variables")
        if not (np.isfinite(self.dispersion) and self.dispersion > 0.0):
            raise ConfigError("dispersion must be positive and finite")
        if self.hub_degree != 1:
            raise ConfigError("only hub_degree=1 is supported")


def local_rate(p: int) -> int:
    """Pair-count factor of the per-variable family: p - 1."""
    return p - 1


def global_rate(p: int) -> int:
    """Pair-count factor of the global family: p * (p - 1) / 2."""
    return p * (p - 1) // 2


def _family_density(rho, n: int, rate: float, dispersion: float):
    arr = np.asarray(rho, dtype=float)
    if np.any(arr <= 0.0) or np.any(arr > 1.0):
        raise ConfigError("density is defined on rho in (0, 1]")
    shape = (1.0 - arr * arr) ** ((n - 4) / 2.0)
    lead = 2.0 * rate * dispersion * shape / beta_constant(n)
    out = lead * np.exp(-rate * dispersion * np.asarray(null_exceedance(arr, n)))
    return float(out) if arr.ndim == 0 else out


def _family_cdf(rho, n: int, rate: float, dispersion: float):
    out = np.exp(-rate * dispersion * np.asarray(null_exceedance(rho, n), dtype=float))
    return float(out) if np.ndim(rho) == 0 else out


def local_density(rho, params: DensityParams):
    """Density of the per-variable statistic at ``rho`` in (0, 1]."""
    return _family_density(
        rho, params.n_samples, local_rate(params.n_variables), params.dispersion
    )


def local_cdf(rho, params: DensityParams):
    """CDF of the per-variable statistic; exp(-(p-1) * J * P0(rho)) by construction."""
    return _family_cdf(
        rho, params.n_samples, local_rate(params.n_variables), params.dispersion
    )


def global_density(rho, params: DensityParams):
    """Density of the global statistic: the local family with the total pair count."""
    return _family_density(
        rho, params.n_samples, global_rate(params.n_variables), params.dispersion
    )


def global_cdf(rho, params: DensityParams):
    return _family_cdf(
        rho, params.n_samples, global_rate(params.n_variables), params.dispersion
    )


def log_ratio_terms(p0_values, dispersion: float, rate: float, baseline: float = 1.0):
    """Per-observation log density ratio against the baseline dispersion.

    The rho-only factors cancel exactly, leaving

        log(J / J0) - rate * (J - J0) * P0(rho)

    evaluated elementwise on precomputed ``P0`` values.  This is the
    summand every sequential likelihood-ratio statistic accumulates.
    """
    vals = np.asarray(p0_values, dtype=float)
    out = np.log(dispersion / baseline) - rate * (dispersion - baseline) * vals
    return float(out) if vals.ndim == 0 else out


def log_density_ratio(rho, dispersion: float, params: DensityParams):
    """log[f(rho; J) / f(rho; 1)] for the per-variable family."""
    if dispersion <= 0.0:
        raise ConfigError("dispersion must be positive")
    p0 = null_exceedance(rho, params.n_samples)
    return log_ratio_terms(p0, dispersion, local_rate(params.n_variables))
