"""Scoring-rule functionals, CV objectives and their uncertainties.

All scores are positively oriented (larger is better) when reported by the
engine and model differences are always taken as A - B.  ``hs_fold_score``
returns the raw Hyvarinen sum, which is smaller-is-better; the engine
negates it.
"""

import copy
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, ndtr

from .accum import relative_batch_variance, relative_naive_variance
from .core import InvalidInputError, PCVError

SCORES = ("logs", "hs", "dss")


class ScoreError(PCVError, ArithmeticError):
    """A fold score could not be computed (e.g. singular predictive covariance)."""


@dataclass
class FoldScore:
    fold: int
    estimate: float
    log_f: float = float("nan")
    mc_rel_var: float = float("nan")
    naive_rel_var: float = float("nan")
    flags: list = field(default_factory=list)

    def to_dict(self):
        return {"fold": self.fold, "estimate": self.estimate, "log_f": self.log_f,
                "mc_rel_var": self.mc_rel_var, "naive_rel_var": self.naive_rel_var,
                "flags": list(self.flags)}


def normalize_score(name):
    key = str(name).lower()
    if key not in SCORES:
        raise InvalidInputError(f"unknown score {name!r}; choose from {SCORES}")
    return key


def logs_fold_score(u_x, L, N):
    """log of the mean predictive density: logsumexp over chains of U_x minus log(L N)."""
    u_x = np.asarray(u_x, dtype=float)
    if np.all(u_x == -np.inf):
        return -np.inf
    return float(logsumexp(u_x) - np.log(L * N))


def logs_fold_summary(fold, u_x, u_x2, v_x, v_x2, N, a, b):
    """LogS estimate with its batch-means and naive relative variances."""
    L = len(u_x)
    est = logs_fold_score(u_x, L, N)
    out = FoldScore(fold=fold, estimate=est, log_f=est)
    if est == -np.inf:
        out.flags.append("numeric-fault")
        out.mc_rel_var = out.naive_rel_var = float("inf")
        return out
    if L * a >= 2:
        out.mc_rel_var = relative_batch_variance(v_x, v_x2, est, a, b)
    if L * N >= 2:
        out.naive_rel_var = relative_naive_variance(u_x2, est, L * N)
    return out


def hs_fold_score(mean_d1, mean_d2_plus_sq, valid=None):
    """Raw Hyvarinen score of one fold from posterior means.

    Per test observation: 2 E[d2 + d1^2] - (E d1)^2, with d1, d2 the first
    and second y-derivatives of log p(y | theta); summed over the fold's
    test observations.
    """
    m1 = np.asarray(mean_d1, dtype=float)
    m2 = np.asarray(mean_d2_plus_sq, dtype=float)
    per_obs = 2 * m2 - m1 ** 2
    if valid is not None:
        per_obs = np.where(valid, per_obs, 0.0)
    return float(per_obs.sum(-1)) if per_obs.ndim == 1 else per_obs.sum(-1)


def dss_fold_score(mean, cov, y):
    """Dawid-Sebastiani score -log|S| - (y - m)' S^-1 (y - m).

    Returns ``(score, ridged)``.  A singular covariance gets a ridge of
    1e-8 * trace / d once; if it is still singular a ScoreError is raised.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    r = np.atleast_1d(np.asarray(y, dtype=float)) - mean
    ridged = False
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        chol = None
    if chol is None or not np.all(np.diag(chol) > 0):
        d = cov.shape[0]
        ridge = 1e-8 * np.trace(cov) / d
        ridged = True
        try:
            chol = np.linalg.cholesky(cov + ridge * np.eye(d))
        except np.linalg.LinAlgError:
            chol = None
        if chol is None or not np.all(np.diag(chol) > 0):
            raise ScoreError("predictive covariance is singular")
    z = np.linalg.solve(chol, r)
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    return float(-logdet - z @ z), ridged


def delta_method_mcse(fold_scores_a, fold_scores_b=None, L=1, N=1):
    """Monte Carlo SE of S (one model) or Delta (two models).

    Sums sigma^2_k / f_k^2 over folds and models and divides by L N.
    """
    total = 0.0
    for scores in (fold_scores_a, fold_scores_b):
        if scores is None:
            continue
        for fs in scores:
            if fs.log_f == -np.inf or not np.isfinite(fs.mc_rel_var):
                return float("inf")
            total += fs.mc_rel_var
    return float(np.sqrt(total / (L * N)))


def epistemic_variance(contributions):
    """Sample variance (ddof 1) of the per-fold contributions."""
    c = np.asarray(contributions, dtype=float)
    if c.size < 2:
        raise InvalidInputError("epistemic variance needs at least two folds")
    return float(c.var(ddof=1))


def epistemic_se(contributions):
    """sqrt(K * sigma^2): the standard error of the fold sum."""
    c = np.asarray(contributions, dtype=float)
    return float(np.sqrt(c.size * epistemic_variance(c)))


def selection_probability(delta_hat, fold_deltas):
    """Normal-approximation probability that model A beats model B."""
    var = epistemic_variance(fold_deltas)
    if var == 0.0:
        if delta_hat == 0:
            return 0.5
        return 1.0 if delta_hat > 0 else 0.0
    return float(ndtr(delta_hat / np.sqrt(len(fold_deltas) * var)))


def fd_pred_derivs(model, theta, fold, h=1e-4):
    """Finite-difference y-derivatives of the log predictive (debug only).

    Perturbs each test observation of ``fold`` in turn; valid for models
    whose test observations are conditionally independent.
    """
    slots = model.folds.test_slots()[fold]
    d1 = np.zeros(slots.shape[0])
    d2 = np.zeros(slots.shape[0])
    base = model.log_pred(theta, fold)
    for t, i in enumerate(slots):
        if i < 0:
            continue
        vals = []
        for step in (h, -h):
            m = copy.copy(model)
            m.y_obs = model.y_obs.copy()
            m.y_obs[i] += step
            vals.append(m.log_pred(theta, fold))
        d1[t] = (vals[0] - vals[1]) / (2 * h)
        d2[t] = (vals[0] - 2 * base + vals[1]) / h ** 2
    return d1, d2
