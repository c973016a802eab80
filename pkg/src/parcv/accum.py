"""Constant-memory online accumulators.

Every accumulator holds one row per chain (leading axis C) and never grows
with the chain length.  Fold-level statistics are obtained afterwards by
reducing over the chains that share a fold.

* ``Welford``: shifted sums A_x = sum(x - c), A_xx = sum((x - c)(x - c)')
  giving means and (co)variances.
* ``LogSpace``: U_x = log sum exp(s), U_x2 = log sum exp(2 s).
* ``BatchMeans``: log-space sums over completed batch means (V_x, V_x2),
  with the running batch in Z_x.
* ``ShuffleBlocks``: centered sums and squares of s - C per contiguous block.
"""

import copy
import json

import numpy as np
from scipy.special import logsumexp

from .core import InvalidInputError, UndefinedDiagnosticError


class NumericFaultError(InvalidInputError):
    """A log-density draw was +inf or NaN."""


def _check_log_values(s):
    s = np.asarray(s, dtype=float)
    if np.any(np.isnan(s)) or np.any(s == np.inf):
        raise NumericFaultError("log value is NaN or +inf")
    return s


class Welford:
    """Shifted-sum mean and (co)variance for C streams of d-vectors.

    ``diag=True`` keeps only the diagonal of A_xx.
    """

    def __init__(self, n_chains, dim, c=None, diag=False):
        self.count = 0
        self.diag = diag
        self.c = np.zeros((n_chains, dim)) if c is None else \
            np.broadcast_to(np.asarray(c, dtype=float), (n_chains, dim)).copy()
        self.a_x = np.zeros((n_chains, dim))
        self.a_xx = np.zeros((n_chains, dim) if diag else (n_chains, dim, dim))

    def update(self, x):
        d = np.asarray(x, dtype=float).reshape(self.a_x.shape) - self.c
        self.a_x += d
        if self.diag:
            self.a_xx += d * d
        else:
            self.a_xx += d[:, :, None] * d[:, None, :]
        self.count += 1
        return self

    def copy(self):
        return copy.deepcopy(self)

    def merge(self, other):
        """Combine with an accumulator over a disjoint part of the same streams."""
        if not np.array_equal(self.c, other.c):
            raise InvalidInputError("can only merge accumulators with equal centering")
        out = copy.deepcopy(self)
        out.count += other.count
        out.a_x += other.a_x
        out.a_xx += other.a_xx
        return out

    def pooled(self):
        """Sums over the chain axis: (count, A_x, A_xx, c) for the pooled stream.

        All chains must share the same centering constant.
        """
        if not np.all(self.c == self.c[:1]):
            raise InvalidInputError("pooling needs a common centering constant")
        return self.count * self.a_x.shape[0], self.a_x.sum(0), self.a_xx.sum(0), self.c[0]

    def mean(self):
        return self.a_x / self.count + self.c

    def cov(self):
        if self.count < 2:
            raise UndefinedDiagnosticError("variance needs at least two values")
        n = self.count
        if self.diag:
            return (self.a_xx - self.a_x ** 2 / n) / (n - 1)
        return (self.a_xx - self.a_x[:, :, None] * self.a_x[:, None, :] / n) / (n - 1)


def welford_update(acc, x):
    return acc.update(x)


def welford_stats(acc):
    return acc.mean(), acc.cov()


def pooled_mean_cov(acc):
    """Mean and covariance of all chains' values pooled into one stream."""
    n, a_x, a_xx, c = acc.pooled()
    if n < 2:
        raise UndefinedDiagnosticError("variance needs at least two values")
    if acc.diag:
        cov = (a_xx - a_x ** 2 / n) / (n - 1)
    else:
        cov = (a_xx - np.outer(a_x, a_x) / n) / (n - 1)
    return a_x / n + c, cov


class LogSpace:
    def __init__(self, n_chains):
        self.u_x = np.full(n_chains, -np.inf)
        self.u_x2 = np.full(n_chains, -np.inf)
        self.count = 0

    def update(self, s):
        s = _check_log_values(s)
        self.u_x = np.logaddexp(self.u_x, s)
        self.u_x2 = np.logaddexp(self.u_x2, 2 * s)
        self.count += 1
        return self


def logspace_update(acc, log_value):
    return acc.update(log_value)


class BatchMeans:
    def __init__(self, n_chains, b):
        if int(b) < 1:
            raise InvalidInputError("batch size must be at least 1")
        self.b = int(b)
        self.z_x = np.full(n_chains, -np.inf)
        self.v_x = np.full(n_chains, -np.inf)
        self.v_x2 = np.full(n_chains, -np.inf)
        self.a = 0
        self.in_batch = 0

    def update(self, s):
        s = _check_log_values(s)
        self.z_x = np.logaddexp(self.z_x, s)
        self.in_batch += 1
        if self.in_batch == self.b:
            self.commit()
        return self

    def commit(self):
        if self.in_batch != self.b:
            raise InvalidInputError(f"batch holds {self.in_batch} of {self.b} values")
        zbar = self.z_x - np.log(self.b)
        self.v_x = np.logaddexp(self.v_x, zbar)
        self.v_x2 = np.logaddexp(self.v_x2, 2 * zbar)
        self.z_x = np.full_like(self.z_x, -np.inf)
        self.a += 1
        self.in_batch = 0
        return self

    @property
    def dropped(self):
        """Draws in the trailing partial batch (excluded from V)."""
        return self.in_batch


def batch_commit(state):
    return state.commit()


class ShuffleBlocks:
    """Centered per-block sums for R-hat and its shuffle benchmark.

    Draw ``n`` of a chain of planned length ``N`` goes to block floor(n D / N).
    """

    def __init__(self, n_chains, D, N):
        if D < 1 or N < 1:
            raise InvalidInputError("need D >= 1 and N >= 1")
        self.D, self.N = int(D), int(N)
        self.y_x = np.zeros((n_chains, self.D))
        self.y_x2 = np.zeros((n_chains, self.D))
        self.count = 0

    def block_index(self, n):
        return min(n * self.D // self.N, self.D - 1)

    def update(self, s, c, block_index=None):
        d = np.asarray(s, dtype=float) - c
        j = self.block_index(self.count) if block_index is None else block_index
        self.y_x[:, j] += d
        self.y_x2[:, j] += d * d
        self.count += 1
        return self


def shuffle_update(blocks, log_pred_draw, c_k, block_index):
    return blocks.update(log_pred_draw, c_k, block_index)


def batch_means_variance(batch_means, b, grand_mean=None):
    """Batch-means estimate of the limiting variance in linear space.

    ``batch_means`` has shape (L, a).  ``grand_mean`` is the mean over all
    draws; by default the mean of the batch means.
    """
    g = np.asarray(batch_means, dtype=float)
    La = g.size
    if La < 2:
        raise UndefinedDiagnosticError("batch-means variance needs L * a >= 2")
    gm = g.mean() if grand_mean is None else grand_mean
    return b / (La - 1) * ((g - gm) ** 2).sum()


def _cancel(pos, neg):
    """pos - neg, with differences below the rounding error of the terms set to 0."""
    d = pos - neg
    if d <= 64 * np.finfo(float).eps * (pos + neg):
        return 0.0
    return float(d)


def relative_batch_variance(v_x, v_x2, log_f, a, b):
    """sigma^2 / f^2 from log-space batch sums, with f = exp(log_f) the grand mean.

    Expands sum (g_h - f)^2 / f^2 = S2 - 2 S1 + L a.
    """
    v_x = np.asarray(v_x, dtype=float)
    La = v_x.size * a
    if La < 2:
        raise UndefinedDiagnosticError("batch-means variance needs L * a >= 2")
    s1 = np.exp(v_x - log_f).sum()
    s2 = np.exp(np.asarray(v_x2) - 2 * log_f).sum()
    return b / (La - 1) * _cancel(s2 + La, 2 * s1)


def relative_naive_variance(u_x2, log_f, n_total):
    """s^2 / f^2 (sample variance of the raw draws over squared mean) from U_x2."""
    if n_total < 2:
        raise UndefinedDiagnosticError("sample variance needs at least two draws")
    t2 = np.exp(np.asarray(u_x2) - 2 * log_f).sum()
    return _cancel(t2, n_total) / (n_total - 1)


class AccumulatorSet:
    """Everything one batch of chains accumulates about its log-predictive draws.

    ``c`` is each chain's centering constant (the warm-up mean of its fold).
    """

    def __init__(self, n_chains, N, b, D, c=None):
        self.N = int(N)
        self.c = np.zeros(n_chains) if c is None else \
            np.broadcast_to(np.asarray(c, dtype=float), (n_chains,)).copy()
        self.logspace = LogSpace(n_chains)
        self.batches = BatchMeans(n_chains, b)
        self.blocks = ShuffleBlocks(n_chains, D, N)

    @property
    def count(self):
        return self.logspace.count

    def update(self, s):
        s = _check_log_values(s)
        if self.count >= self.N:
            raise InvalidInputError("more draws than the planned chain length")
        self.logspace.update(s)
        self.batches.update(s)
        self.blocks.update(s, self.c)
        return self

    def snapshot(self):
        return copy.deepcopy(self)

    def select(self, rows):
        """A new set holding only the given chain rows."""
        out = copy.deepcopy(self)
        out.c = self.c[rows].copy()
        for name in ("u_x", "u_x2"):
            setattr(out.logspace, name, getattr(self.logspace, name)[rows].copy())
        for name in ("z_x", "v_x", "v_x2"):
            setattr(out.batches, name, getattr(self.batches, name)[rows].copy())
        out.blocks.y_x = self.blocks.y_x[rows].copy()
        out.blocks.y_x2 = self.blocks.y_x2[rows].copy()
        return out

    def to_dict(self):
        return {
            "u_x": self.logspace.u_x.tolist(), "u_x2": self.logspace.u_x2.tolist(),
            "v_x": self.batches.v_x.tolist(), "v_x2": self.batches.v_x2.tolist(),
            "y_x": self.blocks.y_x.tolist(), "y_x2": self.blocks.y_x2.tolist(),
            "c": self.c.tolist(), "count": self.count, "batches": self.batches.a,
            "batch_size": self.batches.b, "blocks": self.blocks.D, "N": self.N,
        }

    def dump_json(self, path):
        with open(path, "w") as fh:
            json.dump(_json_safe(self.to_dict()), fh, indent=1)


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return None if np.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def accumulate_draws(draws, c=None, b=50, D=5):
    """Replay stored draws of shape (L, N) through a fresh AccumulatorSet."""
    draws = np.asarray(draws, dtype=float)
    L, N = draws.shape
    acc = AccumulatorSet(L, N, b, D, c)
    for n in range(N):
        acc.update(draws[:, n])
    return acc


def default_batch_size(N, L, b=None):
    """50 unless overridden; ``b="auto"`` gives floor(sqrt(N L))."""
    if b is None:
        return 50
    if b == "auto":
        return max(int(np.floor(np.sqrt(N * L))), 1)
    return int(b)


def log_mean_exp(u_x, n_total):
    return logsumexp(u_x) - np.log(n_total)


def concat_accumulators(parts):
    """Stack the chain rows of several AccumulatorSets with equal progress."""
    first = parts[0]
    if any(p.count != first.count or p.N != first.N for p in parts):
        raise InvalidInputError("accumulators are at different iterations")
    out = copy.deepcopy(first)
    out.c = np.concatenate([p.c for p in parts])
    for name in ("u_x", "u_x2"):
        setattr(out.logspace, name, np.concatenate([getattr(p.logspace, name) for p in parts]))
    for name in ("z_x", "v_x", "v_x2"):
        setattr(out.batches, name, np.concatenate([getattr(p.batches, name) for p in parts]))
    out.blocks.y_x = np.concatenate([p.blocks.y_x for p in parts])
    out.blocks.y_x2 = np.concatenate([p.blocks.y_x2 for p in parts])
    return out


def concat_welford(parts):
    first = parts[0]
    out = copy.deepcopy(first)
    out.c = np.concatenate([p.c for p in parts])
    out.a_x = np.concatenate([p.a_x for p in parts])
    out.a_xx = np.concatenate([p.a_xx for p in parts])
    return out


def welford_rows(acc, rows):
    """A Welford accumulator holding only the given chain rows."""
    out = copy.copy(acc)
    out.c, out.a_x, out.a_xx = acc.c[rows], acc.a_x[rows], acc.a_xx[rows]
    return out
