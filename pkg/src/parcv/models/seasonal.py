"""Seasonal autoregression for monthly growth rates.

    y_t = sum_i rho_i y_{t - lag_i} + beta_0 + sum_j beta_j d_j(t) + sigma e_t

d_j(t) is 1 when t falls in season j (j = 1..q, season 0 is the baseline).
M_A uses month-on-month lags 1..p, M_B uses year-on-year lags 12, 24, ...
Both models score the same rows: the first ``start`` observations only
serve as lagged values.

The AR coefficients are sampled through u_i with v_i = sigmoid(u_i) and
v_i ~ Beta(5, 5).  The "literal" transform reads the prior on (2 rho_i - 1)
as written, rho_i = (1 + v_i)/2 in (0.5, 1); the "symmetric" transform
takes rho_i = 2 v_i - 1 in (-1, 1).
"""

import numpy as np
from scipy.special import betaln, expit

from ..core import Dataset, FoldAssignment, InvalidInputError
from ._gaussian import LOG2PI, DiagPredictive, GaussianModel

BETA_A = 5.0
_LOG_BETA_NORM = betaln(BETA_A, BETA_A)
_HALF_NORMAL_CONST = np.log(2.0) - 0.5 * LOG2PI
RHO_TRANSFORMS = ("literal", "symmetric")


def season_dummies(time_index, q, period=12):
    """(n, q+1) design: intercept column then q season indicators."""
    season = np.asarray(time_index) % period
    d = np.zeros((season.shape[0], q + 1))
    d[:, 0] = 1.0
    for j in range(1, q + 1):
        d[:, j] = season == j
    return d


def make_seasonal_block_scheme(dataset, K, start):
    """Contiguous time blocks over the scored rows (all rows after ``start``)."""
    n = dataset.n_obs - start
    if start < 0 or not 2 <= K <= n:
        raise InvalidInputError(f"K={K} outside 2..{n} scored rows")
    sizes = np.full(K, n // K)
    sizes[: n % K] += 1
    return FoldAssignment(K=K, test_index=np.repeat(np.arange(K), sizes))


class SeasonalARModel(GaussianModel):
    name = "seasonal-ar"

    def __init__(self, dataset, folds, lags, q=11, start=None, rho_transform="literal",
                 period=12):
        lags = np.asarray(lags, dtype=int).ravel()
        if lags.size < 1 or lags.min() < 1:
            raise InvalidInputError("need at least one positive lag")
        if rho_transform not in RHO_TRANSFORMS:
            raise InvalidInputError(f"rho_transform must be one of {RHO_TRANSFORMS}")
        start = int(lags.max()) if start is None else int(start)
        if start < lags.max():
            raise InvalidInputError("start must cover the largest lag")
        series = dataset.y
        if folds.n_obs != series.shape[0] - start:
            raise InvalidInputError("folds must cover exactly the rows after start")
        t = dataset.time_index if dataset.time_index is not None else np.arange(series.shape[0])
        rows = np.arange(start, series.shape[0])
        self.y_obs = series[rows]
        self.Z = np.column_stack([series[rows - lag] for lag in lags])
        self.X = season_dummies(t[rows], q, period)
        self.lags, self.q, self.start = lags, q, start
        self.rho_transform = rho_transform
        self.folds = folds
        self.p = lags.size
        self.param_names = ([f"u[{i}]" for i in range(self.p)]
                            + [f"beta[{j}]" for j in range(q + 1)] + ["log_sigma"])
        self._init_slots()

    def _rho(self, u):
        v = expit(u)
        if self.rho_transform == "literal":
            return 0.5 + 0.5 * v, 0.5 * v * (1 - v), v
        return 2 * v - 1, 2 * v * (1 - v), v

    def _mean(self, theta):
        p = self.p
        rho, _, _ = self._rho(theta[:, :p])
        return rho @ self.Z.T + theta[:, p:-1] @ self.X.T

    def _log_joint_and_grad(self, theta, fold):
        p = self.p
        u, beta, ls = theta[:, :p], theta[:, p:-1], theta[:, -1]
        rho, drho, v = self._rho(u)
        s2 = np.exp(2 * ls)
        w = (self.folds.test_index[None, :] != fold[:, None]).astype(float)
        r = self.y_obs - rho @ self.Z.T - beta @ self.X.T
        wr = w * r
        ss = (wr * r).sum(1)
        n_train = w.sum(1)
        lp = (-0.5 * ss / s2 - n_train * (ls + 0.5 * LOG2PI)
              + (BETA_A * (np.log(v) + np.log1p(-v))).sum(1) - p * _LOG_BETA_NORM
              - 0.5 * (beta ** 2).sum(1) - 0.5 * beta.shape[1] * LOG2PI
              + _HALF_NORMAL_CONST - 0.5 * s2 + ls)
        grad = np.empty_like(theta)
        grad[:, :p] = (wr @ self.Z) / s2[:, None] * drho + BETA_A * (1 - 2 * v)
        grad[:, p:-1] = (wr @ self.X) / s2[:, None] - beta
        grad[:, -1] = ss / s2 - n_train - s2 + 1
        return lp, grad

    def _predictive(self, theta, fold):
        _, valid, idx = self._test_y(fold)
        mean = np.take_along_axis(self._mean(theta), idx, axis=1)
        var = np.broadcast_to(np.exp(2 * theta[:, -1])[:, None], mean.shape)
        return DiagPredictive(mean, var, valid)

    def sample_prior(self, n, rng):
        v = rng.beta(BETA_A, BETA_A, (n, self.p))
        u = np.log(v) - np.log1p(-v)
        beta = rng.normal(size=(n, self.q + 1))
        sigma = np.abs(rng.normal(size=n))
        return np.column_stack([u, beta, np.log(sigma)])

    def constrain(self, theta):
        theta = np.atleast_2d(theta)
        rho, _, _ = self._rho(theta[:, : self.p])
        return {"rho": rho, "beta": theta[:, self.p:-1], "sigma": np.exp(theta[:, -1])}


def month_on_month(dataset, folds, p=1, **kw):
    return SeasonalARModel(dataset, folds, lags=np.arange(1, p + 1), **kw)


def year_on_year(dataset, folds, p=1, **kw):
    return SeasonalARModel(dataset, folds, lags=12 * np.arange(1, p + 1), **kw)


def simulate_seasonal_ar(T, p, q, rng, rho=None, beta=None, sigma=1.0, lags=None,
                         period=12, burn=120):
    """Monthly series from a seasonal AR with the given (or random) coefficients.

    By default the lags are 1..p and ``rho`` is drawn uniformly on
    (0.1, 0.5) / p; pass ``rho=np.zeros(p)`` and ``beta=np.zeros(q+1)`` for
    white noise.  A burn-in of ``burn`` steps is discarded.
    """
    if T <= p + q:
        raise InvalidInputError("need T > p + q")
    rng = np.random.default_rng(rng)
    lags = np.arange(1, p + 1) if lags is None else np.asarray(lags, dtype=int)
    rho = rng.uniform(0.1, 0.5, p) / p if rho is None else np.asarray(rho, dtype=float)
    beta = rng.normal(size=q + 1) if beta is None else np.asarray(beta, dtype=float)
    n = T + burn
    t_all = np.arange(n) - burn
    season = season_dummies(t_all, q, period) @ beta
    y = np.zeros(n)
    eps = rng.normal(size=n) * sigma
    for t in range(n):
        ar = sum(rho[i] * y[t - lag] for i, lag in enumerate(lags) if t - lag >= 0)
        y[t] = ar + season[t] + eps[t]
    data = Dataset(y=y[burn:], time_index=np.arange(T))
    truth = {"rho": rho.tolist(), "beta": beta.tolist(), "sigma": float(sigma),
             "lags": lags.tolist()}
    return data, truth
