import numpy as np
import pytest

from _acceptance_log import RESULTS


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if RESULTS:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)


def enumerate_rows(k):
    """All 2^k binary rows as a (2^k, k) int8 array, row i = bits of i."""
    states = np.arange(2**k)
    return ((states[:, None] >> np.arange(k)) & 1).astype(np.int8)


def brute_force_sum_probs(pi):
    """Exact P(sum = s) for independent Bernoulli(pi) by enumeration."""
    pi = np.asarray(pi, dtype=np.float64)
    rows = enumerate_rows(pi.shape[0])
    probs = np.prod(np.where(rows == 1, pi, 1.0 - pi), axis=1)
    return np.bincount(rows.sum(axis=1), weights=probs, minlength=pi.shape[0] + 1)


def brute_force_inclusion(pi, s):
    """Exact P(z_k = 1 | sum = s) by subset enumeration."""
    pi = np.asarray(pi, dtype=np.float64)
    rows = enumerate_rows(pi.shape[0])
    probs = np.prod(np.where(rows == 1, pi, 1.0 - pi), axis=1)
    keep = rows.sum(axis=1) == s
    total = probs[keep].sum()
    return (probs[keep, None] * rows[keep]).sum(axis=0) / total


@pytest.fixture
def rng():
    return np.random.default_rng(42)
