"""Convergence diagnostics on the log-predictive draws.

R-hat is computed per fold from the centered block sums Y_x, Y_x2 (no chain
splitting or rank normalization).  The shuffle benchmark recombines blocks
across a fold's own chains to show how large R-hat max gets when every chain
is, by construction, drawn from the same distribution.
"""

from dataclasses import dataclass

import numpy as np

from . import streams
from .accum import relative_batch_variance, relative_naive_variance
from .core import InvalidInputError, UndefinedDiagnosticError
from .scoring import logs_fold_score

_W_RTOL = 1e-12


def rhat_from_sums(y, y2, N):
    """(W, B, R-hat) from per-chain centered sums and sums of squares."""
    y = np.asarray(y, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    L = y.shape[-1]
    if L < 2 or N < 2:
        raise InvalidInputError("R-hat needs L >= 2 chains of N >= 2 draws")
    with np.errstate(invalid="ignore"):
        W = (y2 - y ** 2 / N).sum(-1) / (L * (N - 1))
        means = y / N
        B = N / (L - 1) * ((means - means.mean(-1, keepdims=True)) ** 2).sum(-1)
    scale = y2.sum(-1) / (L * N)
    if np.ndim(W) == 0:
        if W <= _W_RTOL * scale:
            raise UndefinedDiagnosticError("within-chain variance is zero")
        return float(W), float(B), float(np.sqrt(((N - 1) / N * W + B / N) / W))
    undefined = W <= _W_RTOL * scale
    with np.errstate(divide="ignore", invalid="ignore"):
        rhat = np.sqrt(((N - 1) / N * W + B / N) / W)
    return W, B, np.where(undefined, np.nan, rhat)


def rhat_from_blocks(y_x, y_x2, L=None, N=None):
    """R-hat of one fold from block sums of shape (L, D)."""
    y_x = np.asarray(y_x, dtype=float)
    if L is not None and y_x.shape[0] != L:
        raise InvalidInputError("block sums do not have L rows")
    return rhat_from_sums(y_x.sum(-1), np.asarray(y_x2).sum(-1), N)[2]


def rhat_draws(draws):
    """Two-pass R-hat of stored draws (L, N)."""
    d = np.asarray(draws, dtype=float)
    L, N = d.shape
    means = d.mean(1)
    W = d.var(1, ddof=1).mean()
    B = N * means.var(ddof=1)
    if W == 0:
        raise UndefinedDiagnosticError("within-chain variance is zero")
    return float(np.sqrt(((N - 1) / N * W + B / N) / W))


def rhat_max(per_fold_rhats):
    """Maximum over valid (finite) fold R-hats and the number excluded."""
    r = np.asarray(per_fold_rhats, dtype=float).ravel()
    ok = np.isfinite(r)
    if not ok.any():
        raise UndefinedDiagnosticError("no fold has a defined R-hat")
    return float(r[ok].max()), int((~ok).sum())


@dataclass
class BenchmarkDraws:
    values: np.ndarray      # (R,) replicate R-hat max
    per_fold: np.ndarray    # (R, F) replicate R-hat per fold (nan where undefined)
    D: int
    R: int

    def to_dict(self):
        return {"values": self.values.tolist(), "D": self.D, "R": self.R}


def shuffle_benchmark(y_x, y_x2, N, R=500, seed=0):
    """Block-shuffle null distribution of R-hat max.

    ``y_x`` and ``y_x2`` have shape (F, L, D) for F folds (across all models).
    In each replicate every (chain, block) slot of a fold takes that block
    from a chain of the same fold chosen uniformly with replacement.
    Replicate streams are keyed by replicate index.
    """
    y_x = np.asarray(y_x, dtype=float)
    y_x2 = np.asarray(y_x2, dtype=float)
    F, L, D = y_x.shape
    if R < 1:
        raise InvalidInputError("need at least one benchmark replicate")
    keys = streams.chain_keys(seed, 0, 0, np.arange(R))
    keys[:, 1] |= np.uint64(0xFF) << np.uint64(56)
    u = streams.uniforms(keys, 0, streams.BENCHMARK, 0, F * L * D)
    src = np.minimum((u * L).astype(int), L - 1).reshape(R, F, L, D)
    f_idx = np.arange(F)[None, :, None, None]
    d_idx = np.arange(D)[None, None, None, :]
    y = y_x[f_idx, src, d_idx].sum(-1)
    y2 = y_x2[f_idx, src, d_idx].sum(-1)
    _, _, rh = rhat_from_sums(y, y2, N)
    with np.errstate(invalid="ignore"):
        values = np.nanmax(np.where(np.isfinite(rh), rh, -np.inf), axis=1)
    values = np.where(values == -np.inf, np.nan, values)
    return BenchmarkDraws(values=values, per_fold=rh, D=D, R=R)


@dataclass
class Verdict:
    passed: bool
    observed: float
    threshold: float
    quantile: float
    hist_counts: list
    hist_edges: list

    def to_dict(self):
        return dict(self.__dict__)


def benchmark_verdict(observed_rhat_max, benchmark_draws, quantile=0.99, bins=30):
    """Pass when the observed R-hat max is at most the benchmark quantile."""
    values = benchmark_draws.values if isinstance(benchmark_draws, BenchmarkDraws) \
        else np.asarray(benchmark_draws, dtype=float)
    values = values[np.isfinite(values)]
    if values.size == 0:
        raise InvalidInputError("benchmark is empty")
    threshold = float(np.quantile(values, quantile))
    counts, edges = np.histogram(values, bins=bins)
    return Verdict(bool(observed_rhat_max <= threshold), float(observed_rhat_max), threshold,
                   float(quantile), counts.tolist(), edges.tolist())


def ess(u_x, u_x2, v_x, v_x2, L, N, b, a=None, log_f=None):
    """Effective sample size of one fold's mean predictive density."""
    a = N // b if a is None else a
    log_f = logs_fold_score(u_x, L, N) if log_f is None else log_f
    s2 = relative_naive_variance(u_x2, log_f, L * N)
    sig2 = relative_batch_variance(v_x, v_x2, log_f, a, b)
    if s2 == 0 or sig2 == 0:
        raise UndefinedDiagnosticError("ESS undefined for zero variance")
    return L * N * s2 / sig2


def ess_overall(naive_rel_vars, mc_rel_vars, L, N):
    """L N sum(s_k^2 / f_k^2) / sum(sigma_k^2 / f_k^2) over folds (and models)."""
    s2 = float(np.sum(naive_rel_vars))
    sig2 = float(np.sum(mc_rel_vars))
    if s2 == 0 or sig2 == 0 or not np.isfinite(s2 + sig2):
        raise UndefinedDiagnosticError("ESS undefined for zero or infinite variance")
    return L * N * s2 / sig2


def batch_means_ess(draws, b=None):
    """ESS of the mean of stored draws (L, N) by batch means."""
    d = np.asarray(draws, dtype=float)
    L, N = d.shape
    b = max(int(np.sqrt(N)), 1) if b is None else b
    a = N // b
    g = d[:, : a * b].reshape(L, a, b).mean(-1)
    sig2 = b / (L * a - 1) * ((g - d.mean()) ** 2).sum()
    s2 = d.var(ddof=1)
    if sig2 == 0:
        raise UndefinedDiagnosticError("ESS undefined for zero variance")
    return L * N * s2 / sig2


def parameter_summary(draws, names=None):
    """Per-parameter mean, sd, R-hat and batch-means ESS for draws (L, N, p)."""
    d = np.asarray(draws, dtype=float)
    L, N, p = d.shape
    names = names or [f"theta[{i}]" for i in range(p)]
    out = {}
    for i, name in enumerate(names):
        x = d[:, :, i]
        try:
            rh = rhat_draws(x) if L >= 2 else float("nan")
            e = batch_means_ess(x)
        except UndefinedDiagnosticError:
            rh, e = float("nan"), float("nan")
        out[name] = {"mean": float(x.mean()), "sd": float(x.std(ddof=1)), "rhat": rh, "ess": e}
    return out
