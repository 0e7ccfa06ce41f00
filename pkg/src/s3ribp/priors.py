"""Generative samplers for the feature-allocation prior family.

Three nested processes over binary feature matrices:

* the classic buffet process (rows take existing dishes in proportion to
  their popularity and open Poisson(alpha/n) new ones);
* its three-parameter power-law extension with concentration c and index
  sigma, which recovers the classic process at c = 1, sigma = 0;
* the restricted variant, which keeps the power-law weight measure but
  forces per-row feature counts to follow an arbitrary pmf (here a clamped
  negative binomial), sampled through the conditional Bernoulli law.

The restricted variant works on a fixed truncation: k_max atom weights are
drawn i.i.d. from the weight measure's normalized density restricted to
[eps_trunc, 1).  The exposure mass of that restriction (the expected number
of atoms above the floor per unit of alpha) is also computed here; the MCMC
alpha update consumes it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from math import lgamma

import numpy as np
from scipy.integrate import quad
from scipy.special import betainc, betaincinv

from .errors import DomainError, NumericsError
from .model import PI_CEILING, negbin_row_sum_log_pmf
from .condbern import sample_row_given_sum

__all__ = [
    "BinaryFeatureMatrix",
    "sample_ibp",
    "sample_3p_ibp",
    "sample_pi_truncated",
    "sample_3r_ibp",
    "atom_log_prior",
    "levy_exposure_mass",
    "new_dish_rate",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BinaryFeatureMatrix:
    """Binary matrix in dish-creation order with per-column taker counts.

    No column is all-zero: a feature exists only if somebody uses it.
    """

    z: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=np.int8)
        object.__setattr__(self, "z", z)
        if z.ndim != 2:
            raise DomainError("feature matrix must be 2-d")
        if z.size and not np.isin(z, (0, 1)).all():
            raise DomainError("feature matrix must be binary")
        if z.shape[1] and np.any(z.sum(axis=0) == 0):
            raise DomainError("feature matrix must not contain all-zero columns")

    @property
    def m(self):
        """Per-feature taker counts."""
        return self.z.sum(axis=0, dtype=np.int64)

    @property
    def n_rows(self):
        return self.z.shape[0]

    @property
    def n_features(self):
        return self.z.shape[1]

    def row_sums(self):
        return self.z.sum(axis=1, dtype=np.int64)


def _grow(rows, k_total):
    out = np.zeros((len(rows), k_total), dtype=np.int8)
    for i, idx in enumerate(rows):
        out[i, idx] = 1
    return out


def sample_ibp(alpha, n_rows, rng):
    """Culinary-process draw: row n takes dish k w.p. m_k/n, then opens
    Poisson(alpha/n) new dishes."""
    if not alpha > 0:
        raise DomainError(f"alpha must be positive, got {alpha}")
    if n_rows < 1:
        raise DomainError("need at least one row")
    m = np.zeros(0, dtype=np.int64)
    rows = []
    k = 0
    for n in range(1, n_rows + 1):
        take = np.flatnonzero(rng.random(k) < m / n)
        new = int(rng.poisson(alpha / n))
        m[take] += 1
        m = np.concatenate([m, np.ones(new, dtype=np.int64)])
        rows.append(np.concatenate([take, np.arange(k, k + new)]))
        k += new
    return BinaryFeatureMatrix(_grow(rows, k))


def new_dish_rate(alpha, c, sigma, n):
    """Poisson rate of fresh dishes for row n of the three-parameter process:
    alpha G(1+c) G(n-1+c+sigma) / (G(n+c) G(c+sigma))."""
    return alpha * np.exp(lgamma(1.0 + c) + lgamma(n - 1.0 + c + sigma) - lgamma(n + c) - lgamma(c + sigma))


def sample_3p_ibp(alpha, c, sigma, n_rows, rng):
    """Three-parameter buffet draw with power-law feature sizes.

    Row n takes an existing dish w.p. (m_k - sigma)/(n - 1 + c) and opens
    Poisson(new_dish_rate) fresh ones.  c = 1, sigma = 0 recovers the
    classic process exactly.
    """
    if not alpha > 0:
        raise DomainError(f"alpha must be positive, got {alpha}")
    if not 0.0 <= sigma < 1.0:
        raise DomainError(f"sigma must lie in [0, 1), got {sigma}")
    if not c > -sigma:
        raise DomainError(f"c must exceed -sigma, got c={c}, sigma={sigma}")
    if n_rows < 1:
        raise DomainError("need at least one row")
    m = np.zeros(0, dtype=np.int64)
    rows = []
    k = 0
    for n in range(1, n_rows + 1):
        take = np.flatnonzero(rng.random(k) < (m - sigma) / (n - 1.0 + c))
        new = int(rng.poisson(new_dish_rate(alpha, c, sigma, n)))
        m[take] += 1
        m = np.concatenate([m, np.ones(new, dtype=np.int64)])
        rows.append(np.concatenate([take, np.arange(k, k + new)]))
        k += new
    return BinaryFeatureMatrix(_grow(rows, k))


def atom_log_prior(p, alpha, c, sigma, k_max):
    """Unnormalized log density of one truncated atom weight on [eps, 1).

    sigma > 0: the restricted power-law measure p^(-1-sigma) (1-p)^(c+sigma-1);
    sigma = 0: the finite-model marginal Beta(alpha c / k_max, c).
    Support restriction is the caller's job; the normalizer cancels in MH.
    """
    if sigma > 0.0:
        return (-1.0 - sigma) * np.log(p) + (c + sigma - 1.0) * np.log1p(-p)
    a = alpha * c / k_max
    return (a - 1.0) * np.log(p) + (c - 1.0) * np.log1p(-p)


def _powerlaw_ppf(u, sigma, eps):
    """Inverse CDF of the density proportional to x^(-1-sigma) on [eps, 1)."""
    lo = eps**-sigma
    return (lo - u * (lo - 1.0)) ** (-1.0 / sigma)


def _grid_inverse_cdf(c, sigma, eps, n_grid=8192):
    """Inverse CDF via logit-grid quadrature, for the c + sigma < 1 regime
    where the rejection bound fails.  In logit coordinates the density is
    p^-sigma (1-p)^(c+sigma), bounded on the whole support."""
    lo = np.log(eps) - np.log1p(-eps)
    hi = np.log(PI_CEILING) - np.log1p(-PI_CEILING)
    u = np.linspace(lo, hi, n_grid)
    p = 1.0 / (1.0 + np.exp(-u))
    logd = -sigma * np.log(p) + (c + sigma) * np.log1p(-p)
    d = np.exp(logd - logd.max())
    cdf = np.concatenate([[0.0], np.cumsum((d[1:] + d[:-1]) * 0.5 * np.diff(u))])
    if cdf[-1] <= 0 or not np.isfinite(cdf[-1]):
        raise NumericsError("degenerate weight-density grid")
    cdf /= cdf[-1]
    return u, cdf


def sample_pi_truncated(alpha, c, sigma, k_max, eps_trunc, rng):
    """k_max i.i.d. truncated atom weights, sorted descending.

    sigma > 0 draws from the normalized restricted power-law density on
    [eps_trunc, 1) (exact rejection off an analytic power-law proposal when
    c + sigma >= 1, grid inverse CDF otherwise); sigma = 0 draws from
    Beta(alpha c / k_max, c) conditioned on the same support.
    """
    if not alpha > 0:
        raise DomainError(f"alpha must be positive, got {alpha}")
    if not 0.0 <= sigma < 1.0:
        raise DomainError(f"sigma must lie in [0, 1), got {sigma}")
    if not c > -sigma:
        raise DomainError(f"c must exceed -sigma, got c={c}, sigma={sigma}")
    if k_max < 1:
        raise DomainError("k_max must be at least 1")
    if not 0.0 < eps_trunc < 1.0:
        raise DomainError(f"eps_trunc must lie in (0, 1), got {eps_trunc}")
    if sigma == 0.0:
        a = alpha * c / k_max
        if not a > 0:
            raise DomainError("degenerate Beta shape")
        floor = betainc(a, c, eps_trunc)
        u = floor + (1.0 - floor) * rng.random(k_max)
        draws = betaincinv(a, c, u)
    elif c + sigma >= 1.0:
        draws = np.empty(0)
        expo = c + sigma - 1.0
        while draws.shape[0] < k_max:
            want = k_max - draws.shape[0]
            batch = _powerlaw_ppf(rng.random(max(2 * want, 16)), sigma, eps_trunc)
            keep = rng.random(batch.shape[0]) < (1.0 - batch) ** expo
            draws = np.concatenate([draws, batch[keep]])
        draws = draws[:k_max]
    else:
        grid_u, grid_cdf = _grid_inverse_cdf(c, sigma, eps_trunc)
        u = np.interp(rng.random(k_max), grid_cdf, grid_u)
        draws = 1.0 / (1.0 + np.exp(-u))
    draws = np.clip(draws, eps_trunc, PI_CEILING)
    return np.sort(draws)[::-1].copy()


def sample_3r_ibp(hp, n_rows, rng, alpha=None):
    """Forward draw from the restricted process on the fixed truncation.

    Atom weights come from sample_pi_truncated; each row's feature count is
    a negative binomial draw clamped to k_max (with a logged warning when
    clamping bites); the row itself is conditional Bernoulli given its
    count.  Unused atoms are dropped so the result has no empty columns.
    ``alpha`` pins the mass parameter instead of drawing it from its prior.
    """
    if n_rows < 1:
        raise DomainError("need at least one row")
    if alpha is None:
        alpha = rng.gamma(hp.alpha_prior_shape, hp.alpha_prior_scale)
    elif not alpha > 0:
        raise DomainError("alpha must be positive")
    pi = sample_pi_truncated(alpha, hp.c, hp.sigma, hp.k_max, hp.eps_trunc, rng)
    sums = rng.negative_binomial(hp.nb_r, hp.nb_p, size=n_rows)
    clamped = int(np.sum(sums > hp.k_max))
    if clamped:
        log.warning("clamped %d of %d row feature counts to k_max=%d", clamped, n_rows, hp.k_max)
    sums = np.minimum(sums, hp.k_max)
    z = np.zeros((n_rows, hp.k_max), dtype=np.int8)
    for n in range(n_rows):
        z[n] = sample_row_given_sum(pi, int(sums[n]), rng)
    live = z.any(axis=0)
    return BinaryFeatureMatrix(z[:, live])


def _levy_norm_const(c, sigma):
    """G(1+c) / (G(1-sigma) G(c+sigma)), the weight measure's constant."""
    return np.exp(lgamma(1.0 + c) - lgamma(1.0 - sigma) - lgamma(c + sigma))


@lru_cache(maxsize=64)
def levy_exposure_mass(eps_trunc, c, sigma):
    """Integral of the weight measure's density over [eps_trunc, 1).

    M = int C(c, sigma) p^(-1-sigma) (1-p)^(c+sigma-1) dp with
    C = G(1+c)/(G(1-sigma) G(c+sigma)).  Diverges as eps -> 0, which is why
    the truncation floor exists; evaluated by adaptive quadrature to a 1e-8
    relative tolerance, anything worse is an error.
    """
    if not 0.0 <= sigma < 1.0:
        raise DomainError(f"sigma must lie in [0, 1), got {sigma}")
    if not c > -sigma:
        raise DomainError(f"c must exceed -sigma, got c={c}, sigma={sigma}")
    if not 0.0 < eps_trunc < 1.0:
        raise DomainError(f"eps_trunc must lie in (0, 1), got {eps_trunc}")
    const = _levy_norm_const(c, sigma)

    def integrand(p):
        return const * p ** (-1.0 - sigma) * (1.0 - p) ** (c + sigma - 1.0)

    val, err = quad(integrand, eps_trunc, 1.0, epsabs=0.0, epsrel=1e-10, limit=400)
    if not np.isfinite(val) or val <= 0 or err > 1e-8 * abs(val):
        raise NumericsError(f"exposure-mass quadrature failed to converge (value {val}, error {err})")
    return float(val)
