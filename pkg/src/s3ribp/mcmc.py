"""Gibbs/MH kernel and chain driver for the doubly sparse Poisson factorization.

Each iteration updates, in order: every entry of the binary feature matrix Z
(entry-wise Gibbs with the Poisson likelihood marginalized over auxiliary
counts), the feature weights pi (per-atom random-walk MH in logit space),
the auxiliary count splits and factor loadings B (exact conjugate draws),
and finally the mass parameter alpha.  The auxiliary counts split each
observed cell's count across active features, x'_ndk ~ Poisson(z_nk b_kd),
which restores Gamma conjugacy for B.

The driver is deterministic given the seed: one numpy Generator drives every
draw in a fixed order, and checkpoints capture the full generator state, so
a resumed chain reproduces the uninterrupted trajectory exactly.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit, logsumexp

from .condbern import _log_esp_from_logw, log_odds, sample_row_given_sum
from .container import read_records, write_records
from .errors import CheckpointError, DomainError, InvariantError
from .model import (
    PI_CEILING,
    CountMatrix,
    HyperParams,
    LatentState,
    ObservationMask,
    PosteriorSummary,
    negbin_row_sum_log_pmf,
    poisson_log_pmf,
)
from .priors import atom_log_prior, levy_exposure_mass, sample_pi_truncated

__all__ = [
    "ChainConfig",
    "ChainCheckpoint",
    "ChainRunner",
    "sample_aux_counts",
    "gibbs_update_B",
    "sweep_Z",
    "mh_update_pi",
    "sample_alpha",
    "refresh_aux",
    "run_chain",
    "predictive_log_lik",
    "load_checkpoint",
]

log = logging.getLogger(__name__)

CHECKPOINT_SCHEMA = 1
_ADAPT_EVERY = 100
_ADAPT_LO, _ADAPT_HI = 0.20, 0.40
_STEP_MIN, _STEP_MAX = 1e-3, 50.0

# Gamma draws with shape far below one (alpha_b defaults to 0.01) underflow
# to exactly zero often enough to matter; a zero loading puts zero rate on a
# positive count and NaNs the likelihood ratios, so loadings are floored at
# the smallest normal double.
_B_FLOOR = float(np.finfo(np.float64).tiny)


@dataclass(frozen=True)
class ChainConfig:
    """Chain-level knobs around the hyperparameters.

    The retention schedule (burn_in, n_samples, thin) lives on the
    HyperParams and is exposed here as properties.  ``adapt_mh`` tunes the
    MH step during burn-in toward a 20-40% acceptance rate and freezes it
    afterwards; turn it off to keep the kernel time-homogeneous.
    """

    hyper: HyperParams
    checkpoint_path: str | None = None
    checkpoint_interval: int = 0
    init_mode: str = "prior"
    adapt_mh: bool = True
    log_every: int = 0

    def __post_init__(self):
        if self.init_mode != "prior":
            raise DomainError(f"unknown init mode {self.init_mode!r}")
        if self.checkpoint_interval < 0:
            raise DomainError("checkpoint_interval must be non-negative")
        if self.checkpoint_interval and not self.checkpoint_path:
            raise DomainError("checkpoint_interval set without a checkpoint_path")

    @property
    def burn_in(self):
        return self.hyper.burn_in

    @property
    def n_samples(self):
        return self.hyper.n_samples

    @property
    def thin(self):
        return self.hyper.thin

    @property
    def total_iterations(self):
        return self.burn_in + self.n_samples * self.thin

    def to_dict(self):
        return {
            "hyper": self.hyper.to_dict(),
            "checkpoint_path": self.checkpoint_path,
            "checkpoint_interval": self.checkpoint_interval,
            "init_mode": self.init_mode,
            "adapt_mh": self.adapt_mh,
            "log_every": self.log_every,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["hyper"] = HyperParams.from_dict(d["hyper"])
        return cls(**d)


@dataclass
class ChainCheckpoint:
    """A resumable snapshot: schema version, iteration, state, RNG state."""

    schema_version: int
    iteration: int
    state: LatentState
    rng_state: dict
    hyper_digest: str


# ---------------------------------------------------------------------------
# kernel pieces (array-level, shared by the public ops and the driver)


def sample_aux_counts(x, rates, rng):
    """Split one observed count across features: multinomial with the given rates.

    A positive count with no positive rate has nowhere to go; that state has
    zero likelihood and is an error.
    """
    x = int(x)
    if x < 0:
        raise DomainError("count must be non-negative")
    rates = np.asarray(rates, dtype=np.float64)
    if rates.ndim != 1 or np.any(rates < 0) or not np.all(np.isfinite(rates)):
        raise DomainError("rates must be a finite non-negative vector")
    if x == 0:
        return np.zeros(rates.shape[0], dtype=np.int64)
    total = rates.sum()
    if total <= 0:
        raise DomainError("positive count with all-zero rates has zero likelihood")
    return rng.multinomial(x, rates / total).astype(np.int64)


def gibbs_update_B(aux_sums, activity_sums, hp, rng):
    """Conjugate loading draw: Gamma(alpha_b + aux, rate alpha_b/mu_b + activity).

    ``aux_sums[k, d]`` is the auxiliary mass feature k received in column d;
    ``activity_sums[k, d]`` counts rows active in k whose (n, d) cell is
    observed.  Features with no mass and no exposure are drawn from the
    prior, which is how dead features keep fresh loadings.
    """
    aux_sums = np.asarray(aux_sums, dtype=np.float64)
    activity_sums = np.asarray(activity_sums, dtype=np.float64)
    if np.any(aux_sums < 0) or np.any(activity_sums < 0):
        raise DomainError("sufficient statistics must be non-negative")
    shape = hp.alpha_b + aux_sums
    rate = hp.alpha_b / hp.mu_b + activity_sums
    return np.maximum(rng.gamma(shape, 1.0 / rate), _B_FLOOR)


def sample_alpha(k_plus, hp, rng):
    """Mass-parameter draw: Gamma(prior shape + K+, rate 1/prior scale + M).

    M is the exposure mass of the truncated weight measure, so K+ plays the
    role of a Poisson(alpha M) observation.
    """
    k_plus = int(k_plus)
    if k_plus < 0:
        raise DomainError("k_plus must be non-negative")
    m_mass = levy_exposure_mass(hp.eps_trunc, hp.c, hp.sigma)
    shape = hp.alpha_prior_shape + k_plus
    rate = 1.0 / hp.alpha_prior_scale + m_mass
    return float(rng.gamma(shape, 1.0 / rate))


def _row_loglik_ratios(z_n, b_pos, x_pos, b_obs_mass):
    """Log-likelihood ratio of z_nk = 1 vs 0 for every k, at the current row.

    Only columns with positive counts contribute log-rate terms; columns
    with zero counts contribute just the rate mass, which is the same
    b_obs_mass sum for both binarizations.
    """
    if b_pos is None:
        return -b_obs_mass
    base = z_n.astype(np.float64) @ b_pos
    minus = np.maximum(base[None, :] - z_n[:, None] * b_pos, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = x_pos[None, :] * (np.log(minus + b_pos) - np.log(minus))
    out = terms.sum(axis=1) - b_obs_mass
    if np.any(np.isnan(out)):
        raise InvariantError("NaN in likelihood ratio; the current state has zero likelihood")
    return out


def _scan_row(z_n, logw, log_e, log_f, b_pos, x_pos, b_obs_mass, rng):
    """Entry-wise Gibbs pass over one row, in place.

    Returns (row_sum, changed).  The prior part of each log odds is
    log f(s+1) - log f(s) + log w_k + log e_s - log e_{s+1} with s the sum
    of the other entries; the likelihood ratios are recomputed from scratch
    after every accepted flip, so there is no floating-point drift.
    """
    k = z_n.shape[0]
    ll = _row_loglik_ratios(z_n, b_pos, x_pos, b_obs_mass)
    s = int(z_n.sum())
    changed = False
    for kk in range(k):
        s_minus = s - int(z_n[kk])
        lo = log_f[s_minus + 1] - log_f[s_minus] + logw[kk] + log_e[s_minus] - log_e[s_minus + 1] + ll[kk]
        new = 1 if rng.random() < expit(lo) else 0
        if new != z_n[kk]:
            z_n[kk] = new
            s += 1 if new else -1
            changed = True
            if kk + 1 < k:
                ll = _row_loglik_ratios(z_n, b_pos, x_pos, b_obs_mass)
    return s, changed


def _pi_sweep(pi, logw, log_e, m, s_hist, alpha, hp, rng, step):
    """Random-walk MH pass over atoms in ascending index order, in place.

    The target is the atom prior times every row's restricted prior; the
    pieces that depend on atom k collapse to m_k log w_k minus the summed
    log ESP normalizers at the observed row sums, plus the logit Jacobian.
    Returns a boolean acceptance vector.
    """
    k = pi.shape[0]
    accepted = np.zeros(k, dtype=bool)
    for kk in range(k):
        noise = rng.standard_normal()
        u_accept = rng.random()
        u_old = logw[kk]
        u_prop = u_old + step * noise
        p_prop = float(expit(u_prop))
        if not (hp.eps_trunc <= p_prop <= PI_CEILING):
            continue
        p_old = float(pi[kk])
        logw[kk] = u_prop
        le_prop = _log_esp_from_logw(logw)
        logw[kk] = u_old
        delta = float(m[kk]) * (u_prop - u_old) - float(s_hist @ (le_prop - log_e))
        delta += atom_log_prior(p_prop, alpha, hp.c, hp.sigma, hp.k_max) - atom_log_prior(
            p_old, alpha, hp.c, hp.sigma, hp.k_max
        )
        delta += (math.log(p_prop) + math.log1p(-p_prop)) - (math.log(p_old) + math.log1p(-p_old))
        if u_accept <= 0.0 or math.log(u_accept) < delta:
            pi[kk] = p_prop
            logw[kk] = u_prop
            log_e[:] = le_prop
            accepted[kk] = True
    return accepted


# ---------------------------------------------------------------------------
# public single-step operations on LatentState


def _row_views(data, mask):
    x = data.dense
    obs = mask.training_dense
    obs_cols, pos_cols, x_pos = [], [], []
    for n in range(data.n_rows):
        oc = np.flatnonzero(obs[n])
        xr = x[n, oc]
        pos = xr > 0
        obs_cols.append(oc)
        pos_cols.append(oc[pos])
        x_pos.append(xr[pos].astype(np.float64))
    return obs_cols, pos_cols, x_pos


def sweep_Z(state, data, mask, hp, rng):
    """One full entry-wise Gibbs sweep over Z (row-major order).

    The likelihood enters through exact marginal Poisson ratios, so stale
    auxiliary counts never bias the update; rows whose membership changed
    get their auxiliary splits refreshed before returning.
    """
    state = state.copy()
    log_f = negbin_row_sum_log_pmf(hp.nb_r, hp.nb_p, hp.k_max)
    logw = log_odds(state.pi)
    log_e = _log_esp_from_logw(logw)
    obs_cols, pos_cols, x_pos = _row_views(data, mask)
    zero_mass = np.zeros(state.z.shape[1])
    for n in range(data.n_rows):
        oc = obs_cols[n]
        pc = pos_cols[n]
        b_pos = state.b[:, pc] if pc.shape[0] else None
        b_obs_mass = state.b[:, oc].sum(axis=1) if oc.shape[0] else zero_mass
        _, changed = _scan_row(state.z[n], logw, log_e, log_f, b_pos, x_pos[n], b_obs_mass, rng)
        if changed:
            for d, xv in zip(pc, x_pos[n]):
                rates = state.z[n].astype(np.float64) * state.b[:, d]
                state.aux[(n, int(d))] = sample_aux_counts(int(xv), rates, rng)
    return state


def mh_update_pi(state, hp, rng, step=None):
    """One MH pass over the feature weights; returns (state, accepted flags)."""
    state = state.copy()
    if step is None:
        step = hp.mh_step
    pi = state.pi
    logw = log_odds(pi)
    log_e = _log_esp_from_logw(logw)
    m = state.z.sum(axis=0, dtype=np.int64)
    s_hist = np.bincount(state.row_sums(), minlength=pi.shape[0] + 1).astype(np.float64)
    accepted = _pi_sweep(pi, logw, log_e, m, s_hist, state.alpha, hp, rng, step)
    return state, accepted


def refresh_aux(state, data, mask, rng):
    """Resample every observed positive cell's auxiliary split given (Z, B)."""
    state = state.copy()
    training = mask.training_dense
    aux = {}
    for (n, d), xv in sorted(data.entries.items()):
        if not training[n, d]:
            continue
        rates = state.z[n].astype(np.float64) * state.b[:, d]
        aux[(n, d)] = sample_aux_counts(xv, rates, rng)
    state.aux = aux
    return state


def predictive_log_lik(summary, cell, x):
    """Posterior-predictive log likelihood of a single cell.

    log of the average Poisson pmf across retained samples, evaluated at the
    per-sample rate Z_n . B_d; a rate of zero contributes the point mass at
    zero.
    """
    n, d = cell
    s = summary.n_samples
    if s < 1:
        raise DomainError("summary holds no retained samples")
    if not (0 <= n < summary.z_samples.shape[1] and 0 <= d < summary.b_samples.shape[2]):
        raise DomainError(f"cell ({n}, {d}) outside the summary's shape")
    lam = np.einsum("sk,sk->s", summary.z_samples[:, n, :].astype(np.float64), summary.b_samples[:, :, d])
    lp = poisson_log_pmf(int(x), lam)
    return float(logsumexp(lp) - math.log(s))


# ---------------------------------------------------------------------------
# chain driver


class ChainRunner:
    """Stateful engine behind run_chain, exposed for stepping and resuming.

    All randomness flows through one generator in a fixed order (row scans,
    atom proposals, auxiliary allocation, loading and mass draws), which is
    what makes fixed-seed reruns and checkpoint resumes bit-for-bit equal.
    """

    def __init__(self, data, mask, config, _restore=None):
        if mask is None:
            mask = ObservationMask.none_held_out(data.n_rows, data.n_cols)
        if mask.n_rows != data.n_rows or mask.n_cols != data.n_cols:
            raise DomainError("mask shape disagrees with data shape")
        self.data = data
        self.mask = mask
        self.config = config
        self._hp = config.hyper
        self._n = data.n_rows
        self._d = data.n_cols
        self._k = self._hp.k_max
        self._log_f = negbin_row_sum_log_pmf(self._hp.nb_r, self._hp.nb_p, self._k)
        self._levy_mass = levy_exposure_mass(self._hp.eps_trunc, self._hp.c, self._hp.sigma)
        self._obs = mask.training_dense.copy()
        self._obs_f = self._obs.astype(np.float64)
        self._zero_k = np.zeros(self._k)
        self._set_count_caches(data.dense)
        self._retained = []
        self._runtime = 0.0
        if _restore is not None:
            self._restore_from(_restore)
        else:
            self._rng = np.random.default_rng(self._hp.seed)
            self._iteration = 0
            self._step = float(self._hp.mh_step)
            self._win_prop = 0
            self._win_acc = 0
            self._post_prop = 0
            self._post_acc = 0
            self._init_state()
        self._validate_internal()

    # -- workspace ---------------------------------------------------------

    def _set_count_caches(self, x_dense):
        x = np.asarray(x_dense, dtype=np.int64)
        if x.shape != (self._n, self._d) or np.any(x < 0):
            raise DomainError("count array must be non-negative with the data's shape")
        self._x = x
        obs_cols, pos_cols, x_pos = [], [], []
        e_rows, e_cols, e_x = [], [], []
        for n in range(self._n):
            oc = np.flatnonzero(self._obs[n])
            xr = x[n, oc]
            pos = xr > 0
            obs_cols.append(oc)
            pos_cols.append(oc[pos])
            x_pos.append(xr[pos].astype(np.float64))
            for d, xv in zip(oc[pos], xr[pos]):
                e_rows.append(n)
                e_cols.append(int(d))
                e_x.append(int(xv))
        self._obs_cols = obs_cols
        self._pos_cols = pos_cols
        self._x_pos = x_pos
        self._e_rows = np.asarray(e_rows, dtype=np.int64)
        self._e_cols = np.asarray(e_cols, dtype=np.int64)
        self._e_x = np.asarray(e_x, dtype=np.int64)
        self._n_entries = self._e_x.shape[0]
        self._unit_entry = np.repeat(np.arange(self._n_entries), self._e_x)
        self._total_units = int(self._e_x.sum())
        self._flat_cols = (self._e_cols[:, None] * self._k + np.arange(self._k)).ravel()

    def set_data_counts(self, x_dense):
        """Swap the observed counts (same shape/mask) and refresh aux splits.

        Used by calibration harnesses that resample data inside the loop.
        """
        self._set_count_caches(np.asarray(x_dense))
        labels = (self.data.row_labels, self.data.col_labels)
        self.data = CountMatrix.from_dense(self._x, *labels)
        self._refresh_aux_internal()
        self._validate_internal()

    # -- initialization ----------------------------------------------------

    def _init_state(self):
        hp = self._hp
        rng = self._rng
        self._alpha = float(rng.gamma(hp.alpha_prior_shape, hp.alpha_prior_scale))
        self._pi = sample_pi_truncated(self._alpha, hp.c, hp.sigma, self._k, hp.eps_trunc, rng)
        self._logw = log_odds(self._pi)
        self._log_e = _log_esp_from_logw(self._logw)
        self._b = np.maximum(rng.gamma(hp.alpha_b, hp.mu_b / hp.alpha_b, size=(self._k, self._d)), _B_FLOOR)
        self._z = np.zeros((self._n, self._k), dtype=np.int8)
        for n in range(self._n):
            s = int(min(rng.negative_binomial(hp.nb_r, hp.nb_p), self._k))
            if self._pos_cols[n].shape[0]:
                # a row with positive counts needs at least one active feature
                # (weights are floored above zero, so any active feature keeps
                # the likelihood finite and the allocation step well defined)
                for _ in range(1000):
                    if s:
                        break
                    s = int(min(rng.negative_binomial(hp.nb_r, hp.nb_p), self._k))
                if not s:
                    s = 1
            if s:
                self._z[n] = sample_row_given_sum(self._pi, s, rng)
        self._row_sums = self._z.sum(axis=1, dtype=np.int64)
        self._aux = np.zeros((self._n_entries, self._k), dtype=np.int64)
        self._refresh_aux_internal()

    # -- kernel ------------------------------------------------------------

    def _sweep_z_internal(self):
        z = self._z
        b = self._b
        rng = self._rng
        log_f = self._log_f
        logw = self._logw
        log_e = self._log_e
        for n in range(self._n):
            oc = self._obs_cols[n]
            pc = self._pos_cols[n]
            b_pos = b[:, pc] if pc.shape[0] else None
            b_obs_mass = b[:, oc].sum(axis=1) if oc.shape[0] else self._zero_k
            s, _ = _scan_row(z[n], logw, log_e, log_f, b_pos, self._x_pos[n], b_obs_mass, rng)
            self._row_sums[n] = s

    def _mh_pi_internal(self):
        m = self._z.sum(axis=0, dtype=np.int64)
        s_hist = np.bincount(self._row_sums, minlength=self._k + 1).astype(np.float64)
        accepted = _pi_sweep(
            self._pi, self._logw, self._log_e, m, s_hist, self._alpha, self._hp, self._rng, self._step
        )
        n_acc = int(accepted.sum())
        self._win_prop += self._k
        self._win_acc += n_acc
        if self._iteration >= self.config.burn_in:
            self._post_prop += self._k
            self._post_acc += n_acc

    def _refresh_aux_internal(self):
        if self._n_entries == 0:
            return
        z_rows = self._z[self._e_rows].astype(np.float64)
        b_cols = self._b[:, self._e_cols].T
        rates = z_rows * b_cols
        cum = np.cumsum(rates, axis=1)
        tot = cum[:, -1]
        if np.any(tot <= 0):
            bad = int(np.argmax(tot <= 0))
            raise InvariantError(
                f"positive count with all-zero rates at cell ({self._e_rows[bad]}, {self._e_cols[bad]})"
            )
        u = (1.0 - self._rng.random(self._total_units)) * tot[self._unit_entry]
        cats = (cum[self._unit_entry] < u[:, None]).sum(axis=1)
        flat = self._unit_entry * self._k + cats
        self._aux = np.bincount(flat, minlength=self._n_entries * self._k).reshape(self._n_entries, self._k)

    def _update_b_internal(self):
        activity = self._z.astype(np.float64).T @ self._obs_f
        if self._n_entries:
            sums = np.bincount(self._flat_cols, weights=self._aux.ravel().astype(np.float64), minlength=self._d * self._k)
            aux_kd = sums.reshape(self._d, self._k).T
        else:
            aux_kd = np.zeros((self._k, self._d))
        shape = self._hp.alpha_b + aux_kd
        rate = self._hp.alpha_b / self._hp.mu_b + activity
        self._b = np.maximum(self._rng.gamma(shape, 1.0 / rate), _B_FLOOR)

    def _update_alpha_internal(self):
        k_plus = int(self._z.any(axis=0).sum())
        shape = self._hp.alpha_prior_shape + k_plus
        rate = 1.0 / self._hp.alpha_prior_scale + self._levy_mass
        self._alpha = float(self._rng.gamma(shape, 1.0 / rate))

    def _validate_internal(self):
        if self._n_entries:
            if not np.array_equal(self._aux.sum(axis=1), self._e_x):
                raise InvariantError("auxiliary counts do not sum to the observed counts")
            if np.any((self._aux > 0) & (self._z[self._e_rows] == 0)):
                raise InvariantError("auxiliary mass allocated to an inactive feature")
        if np.any(self._pi < self._hp.eps_trunc) or np.any(self._pi > PI_CEILING):
            raise InvariantError("a feature weight left its support")

    def step_once(self):
        """Run one full kernel iteration (no retention bookkeeping)."""
        self._sweep_z_internal()
        self._mh_pi_internal()
        self._refresh_aux_internal()
        self._update_b_internal()
        self._update_alpha_internal()
        self._validate_internal()
        self._iteration += 1
        if (
            self.config.adapt_mh
            and self._iteration <= self.config.burn_in
            and self._iteration % _ADAPT_EVERY == 0
            and self._win_prop
        ):
            rate = self._win_acc / self._win_prop
            if rate < _ADAPT_LO:
                self._step = max(self._step * 0.7, _STEP_MIN)
            elif rate > _ADAPT_HI:
                self._step = min(self._step * 1.4, _STEP_MAX)
            self._win_prop = 0
            self._win_acc = 0

    # -- retention and results ----------------------------------------------

    def _maybe_retain(self):
        cfg = self.config
        past = self._iteration - cfg.burn_in
        if past > 0 and past % cfg.thin == 0 and len(self._retained) < cfg.n_samples:
            self._retained.append(
                (
                    self._z.copy(),
                    self._b.copy(),
                    self._pi.copy(),
                    float(self._alpha),
                    int(self._z.any(axis=0).sum()),
                )
            )

    def run(self):
        cfg = self.config
        t0 = time.monotonic()
        while self._iteration < cfg.total_iterations:
            self.step_once()
            self._maybe_retain()
            if cfg.checkpoint_interval and self._iteration % cfg.checkpoint_interval == 0:
                self.save_checkpoint(cfg.checkpoint_path)
            if cfg.log_every and self._iteration % cfg.log_every == 0:
                log.info(
                    "iteration %d/%d kplus=%d alpha=%.3f step=%.3f",
                    self._iteration,
                    cfg.total_iterations,
                    int(self._z.any(axis=0).sum()),
                    self._alpha,
                    self._step,
                )
        self._runtime += time.monotonic() - t0
        return self.summary()

    def summary(self):
        if not self._retained:
            raise DomainError("no retained samples; run the chain first")
        z_s = np.stack([r[0] for r in self._retained])
        b_s = np.stack([r[1] for r in self._retained])
        pi_s = np.stack([r[2] for r in self._retained])
        a_s = np.array([r[3] for r in self._retained])
        kp = np.array([r[4] for r in self._retained], dtype=np.int64)
        rate = self._post_acc / self._post_prop if self._post_prop else 0.0
        return PosteriorSummary(
            z_samples=z_s,
            b_samples=b_s,
            pi_samples=pi_s,
            alpha_samples=a_s,
            kplus_trace=kp,
            z_mean=z_s.mean(axis=0),
            b_mean=b_s.mean(axis=0),
            pi_accept_rate=float(rate),
            mh_step_final=float(self._step),
            burn_in=self.config.burn_in,
            thin=self.config.thin,
            seed=self._hp.seed,
            hyper=self._hp,
            runtime_seconds=float(self._runtime),
        )

    # -- state access --------------------------------------------------------

    @property
    def iteration(self):
        return self._iteration

    @property
    def z(self):
        return self._z

    @property
    def b(self):
        return self._b

    @property
    def pi(self):
        return self._pi

    @property
    def alpha(self):
        return self._alpha

    def state_snapshot(self):
        aux = {}
        for i in range(self._n_entries):
            aux[(int(self._e_rows[i]), int(self._e_cols[i]))] = self._aux[i].copy()
        return LatentState(z=self._z.copy(), b=self._b.copy(), pi=self._pi.copy(), alpha=self._alpha, aux=aux)

    # -- checkpointing -------------------------------------------------------

    def save_checkpoint(self, path):
        n_ret = len(self._retained)
        arrays = {
            "z": self._z,
            "b": self._b,
            "pi": self._pi,
            "aux": self._aux,
            "ret_z": np.stack([r[0] for r in self._retained]) if n_ret else np.zeros((0, self._n, self._k), np.int8),
            "ret_b": np.stack([r[1] for r in self._retained]) if n_ret else np.zeros((0, self._k, self._d)),
            "ret_pi": np.stack([r[2] for r in self._retained]) if n_ret else np.zeros((0, self._k)),
            "ret_alpha": np.array([r[3] for r in self._retained]),
            "ret_kplus": np.array([r[4] for r in self._retained], dtype=np.int64),
            "mask_cells": np.asarray(self.mask.held_out_sorted(), dtype=np.int64).reshape(-1, 2),
        }
        meta = {
            "kind": "chain-checkpoint",
            "schema_version": CHECKPOINT_SCHEMA,
            "iteration": self._iteration,
            "alpha": self._alpha,
            "step": self._step,
            "win_prop": self._win_prop,
            "win_acc": self._win_acc,
            "post_prop": self._post_prop,
            "post_acc": self._post_acc,
            "runtime": self._runtime,
            "rng_state": self._rng.bit_generator.state,
            "config": self.config.to_dict(),
            "hyper_digest": self._hp.digest(),
            "data_digest": self.data.digest(),
            "mask_digest": self.mask.digest(),
        }
        write_records(path, arrays, meta)

    def _restore_from(self, payload):
        arrays, meta = payload
        self._z = arrays["z"].astype(np.int8)
        self._b = arrays["b"].astype(np.float64)
        self._pi = arrays["pi"].astype(np.float64)
        self._aux = arrays["aux"].astype(np.int64)
        self._logw = log_odds(self._pi)
        self._log_e = _log_esp_from_logw(self._logw)
        self._alpha = float(meta["alpha"])
        self._row_sums = self._z.sum(axis=1, dtype=np.int64)
        self._iteration = int(meta["iteration"])
        self._step = float(meta["step"])
        self._win_prop = int(meta["win_prop"])
        self._win_acc = int(meta["win_acc"])
        self._post_prop = int(meta["post_prop"])
        self._post_acc = int(meta["post_acc"])
        self._runtime = float(meta["runtime"])
        self._retained = [
            (
                arrays["ret_z"][i].astype(np.int8),
                arrays["ret_b"][i],
                arrays["ret_pi"][i],
                float(arrays["ret_alpha"][i]),
                int(arrays["ret_kplus"][i]),
            )
            for i in range(arrays["ret_z"].shape[0])
        ]
        rng = np.random.default_rng(0)
        rng.bit_generator.state = meta["rng_state"]
        self._rng = rng

    @classmethod
    def from_checkpoint(cls, path, data, mask=None, config=None):
        """Rebuild a runner mid-trajectory; mask=None restores the stored one."""
        arrays, meta = read_records(path)
        if meta.get("kind") != "chain-checkpoint":
            raise CheckpointError(f"{path} is not a chain checkpoint")
        if meta.get("schema_version") != CHECKPOINT_SCHEMA:
            raise CheckpointError(
                f"checkpoint schema {meta.get('schema_version')} unsupported (expected {CHECKPOINT_SCHEMA})"
            )
        stored = ChainConfig.from_dict(meta["config"])
        if config is None:
            config = stored
        if config.hyper.digest() != meta["hyper_digest"]:
            raise CheckpointError("checkpoint hyperparameters disagree with the requested configuration")
        if data.digest() != meta["data_digest"]:
            raise CheckpointError("checkpoint was written against different data")
        if mask is None:
            cells = frozenset((int(a), int(b)) for a, b in arrays["mask_cells"])
            mask = ObservationMask(cells, data.n_rows, data.n_cols)
        if mask.digest() != meta["mask_digest"]:
            raise CheckpointError("checkpoint was written against a different observation mask")
        return cls(data, mask, config, _restore=(arrays, meta))


def load_checkpoint(path):
    """Read a checkpoint file into a ChainCheckpoint (state view, no driver)."""
    arrays, meta = read_records(path)
    if meta.get("kind") != "chain-checkpoint":
        raise CheckpointError(f"{path} is not a chain checkpoint")
    if meta.get("schema_version") != CHECKPOINT_SCHEMA:
        raise CheckpointError(
            f"checkpoint schema {meta.get('schema_version')} unsupported (expected {CHECKPOINT_SCHEMA})"
        )
    z = arrays["z"].astype(np.int8)
    state = LatentState(z=z, b=arrays["b"], pi=arrays["pi"], alpha=float(meta["alpha"]), aux={})
    return ChainCheckpoint(
        schema_version=int(meta["schema_version"]),
        iteration=int(meta["iteration"]),
        state=state,
        rng_state=meta["rng_state"],
        hyper_digest=meta["hyper_digest"],
    )


def run_chain(data, mask, config):
    """Run the full kernel for burn_in + n_samples * thin iterations.

    Deterministic given config.hyper.seed; returns the posterior summary of
    the retained samples.
    """
    return ChainRunner(data, mask, config).run()
