"""Domain types and probability primitives shared by every other module.

The model explains an integer count matrix X (rows = data points, columns =
dimensions) with a binary feature matrix Z, non-negative factor loadings B,
per-feature weights pi and a mass parameter alpha.  Each cell is Poisson
with rate Z_n . B_d, loadings are Gamma with a shape/mean parameterization,
and per-row feature counts follow a negative binomial, which is what makes
the factorization doubly sparse: sparse loadings and sparse feature
memberships.

This module holds the container types for data, masks, hyperparameters and
sampler state, plus the scalar densities and deterministic transforms that
the samplers, the MCMC kernel and the evaluation suite are built from.  All
densities are computed in log space.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy.special import gammaln

from .errors import DomainError, InvariantError

__all__ = [
    "CountMatrix",
    "ObservationMask",
    "HyperParams",
    "LatentState",
    "PosteriorSummary",
    "poisson_log_pmf",
    "gamma_log_pdf_shape_mean",
    "gamma_draw_shape_mean",
    "negbin_log_pmf",
    "negbin_mean",
    "negbin_row_sum_log_pmf",
    "row_rate",
    "rca_index",
    "rca_transform",
]

# A requested power-law index of exactly 1 is mapped just inside the open
# upper end of the valid range [0, 1).
SIGMA_CEILING = 1.0 - 1e-3

# Weights are kept strictly below 1 so odds stay finite.
PI_CEILING = 1.0 - 1e-15


def _check_labels(labels, n, kind):
    labels = tuple(str(x) for x in labels)
    if len(labels) != n:
        raise DomainError(f"expected {n} {kind} labels, got {len(labels)}")
    if len(set(labels)) != len(labels):
        seen = set()
        dup = next(x for x in labels if x in seen or seen.add(x))
        raise DomainError(f"duplicate {kind} label {dup!r}")
    return labels


@dataclass(frozen=True)
class CountMatrix:
    """Sparse non-negative integer matrix with unique row/column labels.

    ``entries`` maps (row, col) to a strictly positive count; absent cells
    are zero.  Zero and empty cells are therefore interchangeable.
    """

    n_rows: int
    n_cols: int
    entries: dict
    row_labels: tuple
    col_labels: tuple

    def __post_init__(self):
        if self.n_rows < 1 or self.n_cols < 1:
            raise DomainError("matrix must have at least one row and one column")
        object.__setattr__(self, "row_labels", _check_labels(self.row_labels, self.n_rows, "row"))
        object.__setattr__(self, "col_labels", _check_labels(self.col_labels, self.n_cols, "column"))
        clean = {}
        for key, val in dict(self.entries).items():
            n, d = key
            if not (0 <= n < self.n_rows and 0 <= d < self.n_cols):
                raise DomainError(f"entry index {key} outside {self.n_rows}x{self.n_cols}")
            if isinstance(val, float) and not float(val).is_integer():
                raise DomainError(f"count at {key} is not an integer: {val!r}")
            val = int(val)
            if val < 0:
                raise DomainError(f"count at {key} is negative: {val}")
            if val > 0:
                clean[(int(n), int(d))] = val
        object.__setattr__(self, "entries", clean)

    @classmethod
    def from_dense(cls, arr, row_labels=None, col_labels=None):
        arr = np.asarray(arr)
        if arr.ndim != 2:
            raise DomainError("expected a 2-d array")
        if arr.size and not np.all(np.isfinite(arr.astype(float))):
            raise DomainError("counts must be finite")
        if arr.size and np.any(arr.astype(float) != np.floor(arr.astype(float))):
            raise DomainError("counts must be integers")
        n, d = arr.shape
        if row_labels is None:
            row_labels = tuple(f"r{i}" for i in range(n))
        if col_labels is None:
            col_labels = tuple(f"c{j}" for j in range(d))
        rows, cols = np.nonzero(arr)
        entries = {(int(i), int(j)): int(arr[i, j]) for i, j in zip(rows, cols)}
        return cls(n, d, entries, tuple(row_labels), tuple(col_labels))

    @cached_property
    def dense(self):
        out = np.zeros((self.n_rows, self.n_cols), dtype=np.int64)
        for (n, d), v in self.entries.items():
            out[n, d] = v
        return out

    @property
    def n_nonzero(self):
        return len(self.entries)

    @property
    def density(self):
        """Share of cells holding a nonzero count."""
        return self.n_nonzero / (self.n_rows * self.n_cols)

    @property
    def zero_share(self):
        """Share of cells that are zero (the complement of density)."""
        return 1.0 - self.density

    def value(self, n, d):
        return self.entries.get((n, d), 0)

    def digest(self):
        payload = json.dumps(
            {
                "shape": [self.n_rows, self.n_cols],
                "entries": sorted([k[0], k[1], v] for k, v in self.entries.items()),
                "rows": list(self.row_labels),
                "cols": list(self.col_labels),
            },
            separators=(",", ":"),
        ).encode()
        return hashlib.sha256(payload).hexdigest()


@dataclass(frozen=True)
class ObservationMask:
    """Set of (row, col) cells held out from training.

    Cells not in ``held_out`` are observed (training) cells.  The shape is
    carried along so indices can be validated against the companion matrix.
    """

    held_out: frozenset
    n_rows: int
    n_cols: int

    def __post_init__(self):
        object.__setattr__(self, "held_out", frozenset((int(a), int(b)) for a, b in self.held_out))
        for n, d in self.held_out:
            if not (0 <= n < self.n_rows and 0 <= d < self.n_cols):
                raise DomainError(f"held-out cell ({n}, {d}) outside {self.n_rows}x{self.n_cols}")

    @classmethod
    def none_held_out(cls, n_rows, n_cols):
        return cls(frozenset(), n_rows, n_cols)

    @classmethod
    def all_held_out(cls, n_rows, n_cols):
        cells = frozenset((n, d) for n in range(n_rows) for d in range(n_cols))
        return cls(cells, n_rows, n_cols)

    @cached_property
    def training_dense(self):
        """Boolean (n_rows, n_cols) array, True where the cell is observed."""
        out = np.ones((self.n_rows, self.n_cols), dtype=bool)
        for n, d in self.held_out:
            out[n, d] = False
        return out

    @property
    def n_held_out(self):
        return len(self.held_out)

    def held_out_sorted(self):
        return sorted(self.held_out)

    def digest(self):
        payload = json.dumps(
            {"shape": [self.n_rows, self.n_cols], "cells": sorted(map(list, self.held_out))},
            separators=(",", ":"),
        ).encode()
        return hashlib.sha256(payload).hexdigest()


@dataclass(frozen=True)
class HyperParams:
    """Model and chain hyperparameters.

    ``alpha_prior_shape/scale`` parameterize the Gamma prior on the mass
    parameter; ``c`` and ``sigma`` shape the feature-weight measure (power
    law for sigma > 0); ``nb_r``/``nb_p`` give the negative binomial over
    per-row feature counts; ``alpha_b``/``mu_b`` are the loading shape and
    mean; the remaining fields control truncation and the chain schedule.
    """

    alpha_prior_shape: float = 1.0
    alpha_prior_scale: float = 1.0
    c: float = 50.0
    sigma: float = SIGMA_CEILING
    nb_r: float = 1.0
    nb_p: float = 0.1
    alpha_b: float = 0.01
    mu_b: float = 1.0
    k_max: int = 50
    eps_trunc: float = 1e-6
    mh_step: float = 0.5
    burn_in: int = 30_000
    n_samples: int = 1_000
    thin: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.sigma == 1.0:
            warnings.warn(
                f"sigma=1 is outside the supported range [0, 1); using {SIGMA_CEILING}",
                UserWarning,
                stacklevel=2,
            )
            object.__setattr__(self, "sigma", SIGMA_CEILING)
        if not 0.0 <= self.sigma < 1.0:
            raise DomainError(f"sigma must lie in [0, 1), got {self.sigma}")
        if not self.c > -self.sigma:
            raise DomainError(f"c must exceed -sigma, got c={self.c}, sigma={self.sigma}")
        for name in ("alpha_prior_shape", "alpha_prior_scale", "nb_r", "alpha_b", "mu_b", "mh_step"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 < self.nb_p < 1.0:
            raise DomainError(f"nb_p must lie in (0, 1), got {self.nb_p}")
        if self.k_max < 1:
            raise DomainError(f"k_max must be at least 1, got {self.k_max}")
        if not 0.0 < self.eps_trunc < 1.0:
            raise DomainError(f"eps_trunc must lie in (0, 1), got {self.eps_trunc}")
        if self.burn_in < 0:
            raise DomainError(f"burn_in must be non-negative, got {self.burn_in}")
        if self.n_samples < 1 or self.thin < 1:
            raise DomainError("n_samples and thin must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise DomainError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def replace(self, **kw):
        return replace(self, **kw)

    def digest(self):
        payload = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(payload).hexdigest()


@dataclass
class LatentState:
    """One configuration of the sampler: Z, B, pi, alpha and aux counts.

    ``aux`` maps an observed (row, col) cell with a positive count to an
    integer vector over features splitting that count; cells absent from
    the map carry an all-zero split.
    """

    z: np.ndarray
    b: np.ndarray
    pi: np.ndarray
    alpha: float
    aux: dict = field(default_factory=dict)

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.int8)
        self.b = np.asarray(self.b, dtype=np.float64)
        self.pi = np.asarray(self.pi, dtype=np.float64)
        if self.z.ndim != 2 or self.b.ndim != 2 or self.pi.ndim != 1:
            raise DomainError("z must be (n, k), b must be (k, d), pi must be (k,)")
        k = self.z.shape[1]
        if self.b.shape[0] != k or self.pi.shape[0] != k:
            raise DomainError("z, b and pi disagree on the number of features")
        if not np.isin(self.z, (0, 1)).all():
            raise DomainError("z must be binary")
        if np.any(self.b < 0) or not np.all(np.isfinite(self.b)):
            raise DomainError("loadings must be finite and non-negative")
        if not float(self.alpha) > 0:
            raise DomainError(f"alpha must be positive, got {self.alpha}")

    def kplus(self):
        """Number of non-empty feature columns."""
        return int(self.z.any(axis=0).sum())

    def row_sums(self):
        return self.z.sum(axis=1, dtype=np.int64)

    def copy(self):
        return LatentState(
            z=self.z.copy(),
            b=self.b.copy(),
            pi=self.pi.copy(),
            alpha=float(self.alpha),
            aux={k: v.copy() for k, v in self.aux.items()},
        )

    def validate_against(self, data, mask, eps_trunc):
        """Raise InvariantError if any structural invariant is broken."""
        n, k = self.z.shape
        if n != data.n_rows or self.b.shape[1] != data.n_cols:
            raise InvariantError("state shape disagrees with data shape")
        if np.any(self.pi < eps_trunc) or np.any(self.pi >= 1.0):
            raise InvariantError("a feature weight lies outside [eps_trunc, 1)")
        training = mask.training_dense
        for (r, c), vec in self.aux.items():
            vec = np.asarray(vec)
            if not training[r, c]:
                raise InvariantError(f"aux stored for held-out cell ({r}, {c})")
            if vec.shape != (k,) or np.any(vec < 0):
                raise InvariantError(f"aux at ({r}, {c}) malformed")
            if int(vec.sum()) != data.value(r, c):
                raise InvariantError(f"aux at ({r}, {c}) does not sum to the observed count")
            if np.any((vec > 0) & (self.z[r] == 0)):
                raise InvariantError(f"aux at ({r}, {c}) allocates mass to an inactive feature")
        for (r, c), val in data.entries.items():
            if training[r, c] and val > 0 and (r, c) not in self.aux:
                raise InvariantError(f"missing aux for observed positive cell ({r}, {c})")


@dataclass
class PosteriorSummary:
    """Retained samples and their running summaries.

    ``runtime_seconds`` is wall-clock metadata and is deliberately excluded
    from the canonical serialized payload so fixed-seed reruns are
    byte-identical.
    """

    z_samples: np.ndarray
    b_samples: np.ndarray
    pi_samples: np.ndarray
    alpha_samples: np.ndarray
    kplus_trace: np.ndarray
    z_mean: np.ndarray
    b_mean: np.ndarray
    pi_accept_rate: float
    mh_step_final: float
    burn_in: int
    thin: int
    seed: int
    hyper: HyperParams
    runtime_seconds: float = 0.0

    def __post_init__(self):
        self.z_samples = np.asarray(self.z_samples, dtype=np.int8)
        self.b_samples = np.asarray(self.b_samples, dtype=np.float64)
        self.pi_samples = np.asarray(self.pi_samples, dtype=np.float64)
        self.alpha_samples = np.asarray(self.alpha_samples, dtype=np.float64)
        self.kplus_trace = np.asarray(self.kplus_trace, dtype=np.int64)
        s = self.z_samples.shape[0]
        if not (
            self.b_samples.shape[0] == s
            and self.pi_samples.shape[0] == s
            and self.alpha_samples.shape[0] == s
            and self.kplus_trace.shape[0] == s
        ):
            raise InvariantError("sample stacks disagree on the number of retained samples")
        if s:
            counted = (self.z_samples.any(axis=1)).sum(axis=1)
            if not np.array_equal(counted, self.kplus_trace):
                raise InvariantError("kplus trace disagrees with retained Z samples (K+ must count non-empty columns)")

    @property
    def n_samples(self):
        return int(self.z_samples.shape[0])


# ---------------------------------------------------------------------------
# densities


def _validated_counts(x):
    x = np.asarray(x)
    if x.size and (np.any(x < 0) or np.any(x != np.floor(x))):
        raise DomainError("counts must be non-negative integers")
    return x.astype(np.float64)


def poisson_log_pmf(x, lam):
    """log Poisson pmf, broadcasting over arrays.

    A rate of zero is the point mass at zero: log pmf is 0 for x = 0 and
    -inf for x > 0.
    """
    x = _validated_counts(x)
    lam = np.asarray(lam, dtype=np.float64)
    if lam.size and (np.any(lam < 0) or not np.all(np.isfinite(lam))):
        raise DomainError("rates must be finite and non-negative")
    with np.errstate(divide="ignore", invalid="ignore"):
        core = x * np.log(lam) - lam - gammaln(x + 1.0)
    at_zero = np.where(x == 0, 0.0, -np.inf)
    out = np.where(lam > 0, core, at_zero)
    if out.ndim == 0:
        return float(out)
    return out


def gamma_log_pdf_shape_mean(b, shape, mean):
    """log Gamma density under a (shape, mean) parameterization (rate = shape/mean)."""
    b = np.asarray(b, dtype=np.float64)
    if not (shape > 0 and mean > 0):
        raise DomainError("shape and mean must be positive")
    if np.any(b <= 0) or not np.all(np.isfinite(b)):
        raise DomainError("gamma density requires positive finite arguments")
    rate = shape / mean
    out = shape * math.log(rate) - gammaln(shape) + (shape - 1.0) * np.log(b) - rate * b
    if out.ndim == 0:
        return float(out)
    return out


def gamma_draw_shape_mean(rng, shape, mean, size=None):
    """Draw from Gamma with the same (shape, mean) convention as the density."""
    if not (np.all(np.asarray(shape) > 0) and np.all(np.asarray(mean) > 0)):
        raise DomainError("shape and mean must be positive")
    return rng.gamma(shape, np.asarray(mean, dtype=np.float64) / shape, size=size)


def negbin_log_pmf(s, r, p):
    """log negative binomial pmf: P(s) = G(s+r)/(G(r) s!) p^r (1-p)^s.

    The mean under this orientation is r (1 - p) / p.
    """
    if not (r > 0 and 0.0 < p < 1.0):
        raise DomainError("need r > 0 and p in (0, 1)")
    s = int(s)
    if s < 0:
        raise DomainError("counts must be non-negative")
    return float(
        math.lgamma(s + r) - math.lgamma(r) - math.lgamma(s + 1) + r * math.log(p) + s * math.log1p(-p)
    )


def negbin_mean(r, p):
    if not (r > 0 and 0.0 < p < 1.0):
        raise DomainError("need r > 0 and p in (0, 1)")
    return r * (1.0 - p) / p


def negbin_row_sum_log_pmf(r, p, k_max):
    """Clamped negative binomial over {0..k_max}: the upper cell absorbs the tail.

    Matches the distribution of min(S, k_max) for S negative binomial, so it
    is exactly the law induced by drawing and clamping.  The result always
    has full support (the tail cell is at least the bare pmf at k_max).
    """
    if k_max < 1:
        raise DomainError("k_max must be at least 1")
    body = np.array([negbin_log_pmf(s, r, p) for s in range(k_max + 1)])
    head_mass = float(np.exp(body[:-1]).sum())
    tail = max(1.0 - head_mass, float(np.exp(body[-1])))
    out = body.copy()
    out[-1] = math.log(tail)
    return out


def row_rate(state, n, d):
    """Poisson rate of cell (n, d) under the state: Z_n . B_d."""
    z = state.z
    if not (0 <= n < z.shape[0] and 0 <= d < state.b.shape[1]):
        raise DomainError(f"cell ({n}, {d}) outside the state's shape")
    return float(np.dot(z[n].astype(np.float64), state.b[:, d]))


# ---------------------------------------------------------------------------
# revealed-comparative-advantage preprocessing


def rca_index(raw):
    """Balassa index: (cell share of its row) / (column share of the total).

    Rows and columns must all have positive mass, otherwise the index is
    undefined for them.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2:
        raise DomainError("expected a 2-d array")
    if np.any(raw < 0) or not np.all(np.isfinite(raw)):
        raise DomainError("raw values must be finite and non-negative")
    row_tot = raw.sum(axis=1)
    col_tot = raw.sum(axis=0)
    if np.any(row_tot == 0) or np.any(col_tot == 0):
        raise DomainError("rca_index requires positive row and column totals")
    total = raw.sum()
    share = raw / row_tot[:, None]
    world = col_tot / total
    return share / world[None, :]


def rca_transform(raw, mode="round", row_labels=None, col_labels=None):
    """Discretize the Balassa index of a raw non-negative matrix into counts.

    mode="round" rounds the index to the nearest integer; mode="binary"
    thresholds at 1.  All-zero rows or columns are rejected with the
    offending label named.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2:
        raise DomainError("expected a 2-d array")
    n, d = raw.shape
    if row_labels is None:
        row_labels = tuple(f"r{i}" for i in range(n))
    if col_labels is None:
        col_labels = tuple(f"c{j}" for j in range(d))
    row_labels = _check_labels(row_labels, n, "row")
    col_labels = _check_labels(col_labels, d, "column")
    if np.any(raw < 0) or not np.all(np.isfinite(raw)):
        raise DomainError("raw values must be finite and non-negative")
    row_tot = raw.sum(axis=1)
    col_tot = raw.sum(axis=0)
    for i in np.flatnonzero(row_tot == 0):
        raise DomainError(f"row {row_labels[i]!r} has zero total; its shares are undefined")
    for j in np.flatnonzero(col_tot == 0):
        raise DomainError(f"column {col_labels[j]!r} has zero total; its shares are undefined")
    rca = rca_index(raw)
    if mode == "round":
        counts = np.rint(rca).astype(np.int64)
    elif mode == "binary":
        counts = (rca >= 1.0).astype(np.int64)
    else:
        raise DomainError(f"unknown rca mode {mode!r} (expected 'round' or 'binary')")
    return CountMatrix.from_dense(counts, row_labels, col_labels)
