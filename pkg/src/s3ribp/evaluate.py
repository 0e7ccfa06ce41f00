"""Evaluation suite: held-out perplexity, coherence, qq structure checks,
cross-fold feature matching, and the simple binomial baseline.

All metrics are pure functions of immutable inputs (posterior summaries,
count matrices, masks), so folds can be evaluated independently.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .mcmc import ChainConfig, predictive_log_lik, run_chain
from .model import CountMatrix, ObservationMask, poisson_log_pmf

__all__ = [
    "log_perplexity",
    "baseline_row_mean_log_perplexity",
    "umass_coherence",
    "qq_row_nonzeros",
    "binomial_baseline_qq",
    "jaccard_match",
    "MatchResult",
    "top_features",
    "feature_line",
    "live_features",
    "meta_features",
    "evaluate_folds",
    "EvalReport",
]


def log_perplexity(summary, data, mask):
    """Negative mean predictive log-likelihood over the held-out cells.

    Lower is better.  The predictive is the posterior mixture across the
    summary's retained samples.
    """
    cells = mask.held_out_sorted()
    if not cells:
        raise DomainError("mask holds nothing out; there is nothing to score")
    total = 0.0
    for n, d in cells:
        total += predictive_log_lik(summary, (n, d), data.value(n, d))
    return -total / len(cells)


def baseline_row_mean_log_perplexity(data, mask):
    """Held-out log-perplexity of a rate-only Poisson baseline.

    Each row's rate is its observed training mean; a row with no observed
    cells falls back to the global training mean.
    """
    cells = mask.held_out_sorted()
    if not cells:
        raise DomainError("mask holds nothing out; there is nothing to score")
    x = data.dense.astype(np.float64)
    obs = mask.training_dense
    n_obs_row = obs.sum(axis=1)
    row_tot = np.where(obs, x, 0.0).sum(axis=1)
    global_mean = row_tot.sum() / max(int(n_obs_row.sum()), 1)
    with np.errstate(invalid="ignore"):
        row_mean = np.where(n_obs_row > 0, row_tot / np.maximum(n_obs_row, 1), global_mean)
    total = 0.0
    for n, d in cells:
        total += float(poisson_log_pmf(data.value(n, d), row_mean[n]))
    return -total / len(cells)


def _top_m_columns(weights, top_m):
    """Indices of the top_m largest weights, ties broken by ascending column."""
    w = np.asarray(weights, dtype=np.float64)
    order = np.lexsort((np.arange(w.shape[0]), -w))
    return order[:top_m]


def umass_coherence(b_mean, data, top_m=10, live=None):
    """Mean intrinsic coherence of the live features' top columns.

    For each feature, take its top_m columns by weight and score all ordered
    pairs (later, earlier) as log((D(v_m, v_l) + 1) / D(v_l)) with document
    counts computed on the binarized data (x > 0).  Pairs whose conditioning
    count D(v_l) is zero are skipped.  Closer to zero is better.
    """
    b_mean = np.asarray(b_mean, dtype=np.float64)
    if b_mean.ndim != 2:
        raise DomainError("expected a feature-by-column weight matrix")
    if top_m < 1:
        raise DomainError("top_m must be at least 1")
    if live is None:
        live = np.ones(b_mean.shape[0], dtype=bool)
    live = np.asarray(live, dtype=bool)
    present = data.dense > 0
    doc = present.sum(axis=0).astype(np.float64)
    co = (present.T.astype(np.float64) @ present.astype(np.float64))
    scores = []
    for k in range(b_mean.shape[0]):
        if not live[k] or not np.any(b_mean[k] > 0):
            continue
        cols = _top_m_columns(b_mean[k], top_m)
        total = 0.0
        for m in range(1, len(cols)):
            for l in range(m):
                d_l = doc[cols[l]]
                if d_l == 0:
                    continue
                total += math.log((co[cols[m], cols[l]] + 1.0) / d_l)
        scores.append(total)
    if not scores:
        raise DomainError("no live feature has positive weights; coherence is undefined")
    return float(np.mean(scores))


def _sorted_row_nonzeros(x):
    return np.sort((np.asarray(x) > 0).sum(axis=1))


def qq_row_nonzeros(summary, data, n_draws, rng):
    """qq pairs of per-row non-zero counts: empirical vs posterior predictive.

    The empirical side is the sorted vector of each row's non-zero count.
    The predicted side averages, over n_draws replicate matrices drawn
    Poisson(Z B) at randomly chosen retained samples, the same sorted vector.
    """
    if n_draws < 1:
        raise DomainError("n_draws must be at least 1")
    empirical = _sorted_row_nonzeros(data.dense).astype(np.float64)
    acc = np.zeros_like(empirical)
    s_total = summary.n_samples
    for _ in range(n_draws):
        s = int(rng.integers(s_total))
        lam = summary.z_samples[s].astype(np.float64) @ summary.b_samples[s]
        rep = rng.poisson(lam)
        acc += _sorted_row_nonzeros(rep)
    predicted = acc / n_draws
    return [(float(e), float(p)) for e, p in zip(empirical, predicted)]


def binomial_baseline_qq(data, n_draws, rng):
    """qq pairs under an entrywise Bernoulli baseline.

    Cell (n, d) is non-zero with probability min(1, k_n k_d / W) where k_n
    and k_d are the row and column non-zero counts and W the matrix total;
    an empty matrix gives probability zero everywhere.
    """
    if n_draws < 1:
        raise DomainError("n_draws must be at least 1")
    present = data.dense > 0
    k_n = present.sum(axis=1).astype(np.float64)
    k_d = present.sum(axis=0).astype(np.float64)
    w = float(present.sum())
    if w > 0:
        p = np.minimum(1.0, np.outer(k_n, k_d) / w)
    else:
        p = np.zeros((data.n_rows, data.n_cols))
    empirical = _sorted_row_nonzeros(data.dense).astype(np.float64)
    acc = np.zeros_like(empirical)
    for _ in range(n_draws):
        rep = rng.random(p.shape) < p
        acc += np.sort(rep.sum(axis=1))
    predicted = acc / n_draws
    return [(float(e), float(q)) for e, q in zip(empirical, predicted)]


def _jaccard(a, b):
    if not a and not b:
        return 1.0
    union = len(a | b)
    return len(a & b) / union if union else 0.0


@dataclass(frozen=True)
class MatchResult:
    """Greedy feature matching: (index_a, index_b, jaccard) triples plus leftovers."""

    pairs: tuple
    unmatched_a: tuple
    unmatched_b: tuple

    @property
    def scores(self):
        return tuple(p[2] for p in self.pairs)

    @property
    def mean_score(self):
        return float(np.mean(self.scores)) if self.pairs else 0.0


def jaccard_match(features_a, features_b):
    """Greedily pair the most-similar feature index sets across two lists.

    Repeatedly takes the unmatched pair with the highest Jaccard similarity
    (ties broken by lowest index pair) until one side runs out.
    """
    sets_a = [frozenset(s) for s in features_a]
    sets_b = [frozenset(s) for s in features_b]
    for side, sets in (("a", sets_a), ("b", sets_b)):
        for i, s in enumerate(sets):
            if not s:
                raise DomainError(f"feature {i} on side {side} is empty")
    free_a = set(range(len(sets_a)))
    free_b = set(range(len(sets_b)))
    pairs = []
    while free_a and free_b:
        best = None
        for i in sorted(free_a):
            for j in sorted(free_b):
                s = _jaccard(sets_a[i], sets_b[j])
                if best is None or s > best[0]:
                    best = (s, i, j)
        s, i, j = best
        pairs.append((i, j, s))
        free_a.remove(i)
        free_b.remove(j)
    return MatchResult(tuple(pairs), tuple(sorted(free_a)), tuple(sorted(free_b)))


def live_features(z_mean):
    """Columns whose posterior-mean activity exceeds 1/N (never-used slots drop out)."""
    z_mean = np.asarray(z_mean, dtype=np.float64)
    if z_mean.ndim != 2:
        raise DomainError("expected an N-by-K posterior-mean activity matrix")
    return z_mean.mean(axis=0) > 1.0 / z_mean.shape[0]


def top_features(b_mean, col_labels, top_m, live=None):
    """Per live feature, its top_m (label, weight) pairs by descending weight.

    Ties are broken by ascending column index.  Features with no positive
    weight (or flagged dead) are omitted.  Returns (feature_index, pairs)
    tuples.
    """
    b_mean = np.asarray(b_mean, dtype=np.float64)
    if top_m < 1:
        raise DomainError("top_m must be at least 1")
    col_labels = tuple(col_labels)
    if len(col_labels) != b_mean.shape[1]:
        raise DomainError("label count disagrees with the weight matrix width")
    if live is None:
        live = np.ones(b_mean.shape[0], dtype=bool)
    out = []
    for k in range(b_mean.shape[0]):
        if not live[k] or not np.any(b_mean[k] > 0):
            continue
        cols = _top_m_columns(b_mean[k], top_m)
        out.append((k, tuple((col_labels[d], float(b_mean[k, d])) for d in cols)))
    return out


def feature_line(pairs):
    """Render one feature's pairs as ``label (0.78), label (0.72), ...``."""
    return ", ".join(f"{label} ({weight:.2f})" for label, weight in pairs)


def meta_features(summary, config):
    """Fit a second layer to the first layer's binarized activity pattern.

    The posterior-mean Z is thresholded at 0.5 (0.5 itself maps to 1), dead
    columns are dropped, the result is treated as a count matrix with
    feature labels F0, F1, ..., and a fresh chain is run on it.
    """
    live = live_features(summary.z_mean)
    binary = (summary.z_mean >= 0.5).astype(np.int64)
    binary = binary[:, live]
    if binary.size == 0 or not binary.any():
        raise DomainError("binarized activity is all zero; no meta structure to fit")
    labels = tuple(f"F{k}" for k in np.flatnonzero(live))
    meta_data = CountMatrix.from_dense(binary, col_labels=labels)
    mask = ObservationMask.none_held_out(meta_data.n_rows, meta_data.n_cols)
    return run_chain(meta_data, mask, config)


@dataclass(frozen=True)
class EvalReport:
    """Cross-fold evaluation results with provenance per fold.

    ``folds`` holds one record per fold: fold index, chain seed, mask
    digest, log-perplexity, baseline perplexity, and coherence.  Feature
    matches compare every later fold's top-column sets against fold 0's.
    """

    folds: tuple
    log_perplexity_mean: float
    log_perplexity_std: float
    coherence_mean: float
    coherence_std: float
    qq_points: tuple
    qq_baseline_points: tuple
    feature_matches: tuple
    top_m: int

    @property
    def n_folds(self):
        return len(self.folds)

    def to_json(self):
        return json.dumps(
            {
                "n_folds": self.n_folds,
                "top_m": self.top_m,
                "log_perplexity": {"mean": self.log_perplexity_mean, "std": self.log_perplexity_std},
                "coherence": {"mean": self.coherence_mean, "std": self.coherence_std},
                "folds": [dict(f) for f in self.folds],
                "qq_points": [list(p) for p in self.qq_points],
                "qq_baseline_points": [list(p) for p in self.qq_baseline_points],
                "feature_matches": [
                    {
                        "fold": m["fold"],
                        "pairs": [list(p) for p in m["pairs"]],
                        "unmatched_reference": list(m["unmatched_reference"]),
                        "unmatched_fold": list(m["unmatched_fold"]),
                        "mean_jaccard": m["mean_jaccard"],
                    }
                    for m in self.feature_matches
                ],
            },
            indent=2,
            sort_keys=True,
        )

    def to_text(self):
        lines = [
            f"folds: {self.n_folds}",
            f"log-perplexity: {self.log_perplexity_mean:.4f} +/- {self.log_perplexity_std:.4f}",
            f"coherence (closer to zero is better): {self.coherence_mean:.4f} +/- {self.coherence_std:.4f}",
            "baseline is the rate-only row-mean Poisson model, not a literature reproduction",
            "",
            "fold  seed        perplexity  baseline    coherence",
        ]
        for f in self.folds:
            lines.append(
                f"{f['fold']:>4}  {f['seed']:<10}  {f['log_perplexity']:<10.4f}"
                f"  {f['baseline_log_perplexity']:<10.4f}  {f['coherence']:.4f}"
            )
        if self.feature_matches:
            lines.append("")
            lines.append("feature matches vs fold 0 (greedy Jaccard):")
            for m in self.feature_matches:
                lines.append(f"  fold {m['fold']}: mean {m['mean_jaccard']:.3f} over {len(m['pairs'])} pairs")
        return "\n".join(lines) + "\n"


def evaluate_folds(data, masks, config, top_m=10, qq_draws=50):
    """Fit one chain per fold mask and aggregate the evaluation metrics.

    Fold i runs with seed <base seed + i>.  qq tables come from the first
    fold's summary over the full matrix; feature matches compare each fold's
    live top-column sets to fold 0's.
    """
    if not masks:
        raise DomainError("need at least one fold mask")
    folds = []
    top_sets = []
    first_summary = None
    for i, mask in enumerate(masks):
        hp = config.hyper.replace(seed=config.hyper.seed + i)
        cfg = ChainConfig(
            hyper=hp,
            checkpoint_path=None,
            checkpoint_interval=0,
            init_mode=config.init_mode,
            adapt_mh=config.adapt_mh,
            log_every=config.log_every,
        )
        summary = run_chain(data, mask, cfg)
        if first_summary is None:
            first_summary = summary
        live = live_features(summary.z_mean)
        report = top_features(summary.b_mean, data.col_labels, top_m, live=live)
        top_sets.append([frozenset(label for label, _ in pairs) for _, pairs in report])
        folds.append(
            {
                "fold": i,
                "seed": hp.seed,
                "mask_digest": mask.digest(),
                "log_perplexity": log_perplexity(summary, data, mask),
                "baseline_log_perplexity": baseline_row_mean_log_perplexity(data, mask),
                "coherence": umass_coherence(summary.b_mean, data, top_m, live=live),
                "k_plus_mode": int(np.bincount(summary.kplus_trace).argmax()),
            }
        )
    matches = []
    for i in range(1, len(masks)):
        if top_sets[0] and top_sets[i]:
            m = jaccard_match(top_sets[0], top_sets[i])
            matches.append(
                {
                    "fold": i,
                    "pairs": m.pairs,
                    "unmatched_reference": m.unmatched_a,
                    "unmatched_fold": m.unmatched_b,
                    "mean_jaccard": m.mean_score,
                }
            )
    rng = np.random.default_rng(config.hyper.seed)
    qq = qq_row_nonzeros(first_summary, data, qq_draws, rng)
    qq_base = binomial_baseline_qq(data, qq_draws, rng)
    perp = np.array([f["log_perplexity"] for f in folds])
    coh = np.array([f["coherence"] for f in folds])
    return EvalReport(
        folds=tuple(folds),
        log_perplexity_mean=float(perp.mean()),
        log_perplexity_std=float(perp.std()),
        coherence_mean=float(coh.mean()),
        coherence_std=float(coh.std()),
        qq_points=tuple(qq),
        qq_baseline_points=tuple(qq_base),
        feature_matches=tuple(matches),
        top_m=top_m,
    )
