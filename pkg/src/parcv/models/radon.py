"""Radon-style county model, non-centered county intercepts.

M_A:  y_i ~ N(alpha_j[i] + beta x_i, sigma_y^2)      M_B: drops beta x_i
alpha_j = mu_alpha + sigma_alpha z_j,  z_j ~ N(0, 1)
mu_alpha ~ N(0, 4) (variance),  beta ~ N(0, 1),
sigma_alpha^2 ~ Gamma(6, 9),  sigma_y^2 ~ Gamma(10, 10)  (shape, rate)

Variances are sampled on the log scale.
"""

import numpy as np
from scipy.special import gammaln

from ..core import Dataset, InvalidInputError
from ._gaussian import (LOG2PI, DensePredictive, DiagPredictive, GaussianModel,
                        random_intercept_logpdf, whole_groups_held_out)

MU_VAR = 4.0
VAR_ALPHA = (6.0, 9.0)
VAR_Y = (10.0, 10.0)


def _log_gamma_lp(s, shape, rate):
    return shape * np.log(rate) - gammaln(shape) + shape * s - rate * np.exp(s)


class RadonModel(GaussianModel):
    name = "radon"

    def __init__(self, dataset, folds, floor=True, predictive="auto"):
        if dataset.group_id is None:
            raise InvalidInputError("radon model needs county group_id")
        if floor and dataset.x is None:
            raise InvalidInputError("radon model with floor effect needs a floor covariate")
        self.y_obs = dataset.y
        self.group = dataset.group_id
        self.x = dataset.x[:, 0] if dataset.x is not None else np.zeros_like(self.y_obs)
        self.folds = folds
        self.J = dataset.n_groups
        self.floor = floor
        self._onehot = (self.group[:, None] == np.arange(self.J)[None, :]).astype(float)
        if predictive == "auto":
            predictive = "marginal" if whole_groups_held_out(folds, self.group) else "conditional"
        self.predictive = predictive
        self.param_names = ([f"z[{j}]" for j in range(self.J)] + (["beta"] if floor else [])
                            + ["mu_alpha", "log_var_alpha", "log_var_y"])
        self._init_slots()

    def _unpack(self, theta):
        J = self.J
        z = theta[:, :J]
        if self.floor:
            beta = theta[:, J]
            mu, lva, lvy = theta[:, J + 1:].T
        else:
            beta = np.zeros(theta.shape[0])
            mu, lva, lvy = theta[:, J:].T
        return z, beta, mu, lva, lvy

    def _log_joint_and_grad(self, theta, fold):
        J = self.J
        z, beta, mu, lva, lvy = self._unpack(theta)
        w = (self.folds.test_index[None, :] != fold[:, None]).astype(float)
        sa, vy = np.exp(0.5 * lva), np.exp(lvy)
        alpha = mu[:, None] + sa[:, None] * z
        r = self.y_obs - alpha[:, self.group] - beta[:, None] * self.x
        wr = w * r
        n_train = w.sum(1)
        ss = (wr * r).sum(1)
        group_wr = wr @ self._onehot

        lp = (-0.5 * ss / vy - 0.5 * n_train * (lvy + LOG2PI)
              - 0.5 * (z ** 2).sum(1) - 0.5 * J * LOG2PI
              - 0.5 * mu ** 2 / MU_VAR - 0.5 * np.log(2 * np.pi * MU_VAR)
              + _log_gamma_lp(lva, *VAR_ALPHA) + _log_gamma_lp(lvy, *VAR_Y))
        grad = np.empty_like(theta)
        grad[:, :J] = sa[:, None] * group_wr / vy[:, None] - z
        off = J
        if self.floor:
            lp += -0.5 * beta ** 2 - 0.5 * LOG2PI
            grad[:, J] = (wr * self.x).sum(1) / vy - beta
            off += 1
        grad[:, off] = wr.sum(1) / vy - mu / MU_VAR
        grad[:, off + 1] = 0.5 * sa * (z * group_wr).sum(1) / vy + VAR_ALPHA[0] - VAR_ALPHA[1] * sa ** 2
        grad[:, off + 2] = 0.5 * ss / vy - 0.5 * n_train + VAR_Y[0] - VAR_Y[1] * vy
        return lp, grad

    def _log_pred(self, theta, fold):
        if self.predictive == "conditional":
            return super()._log_pred(theta, fold)
        z, beta, mu, lva, lvy = self._unpack(theta)
        test = (self.folds.test_index[None, :] == fold[:, None]).astype(float)
        r = self.y_obs - mu[:, None] - beta[:, None] * self.x
        s1 = (test * r) @ self._onehot
        s2 = (test * r ** 2) @ self._onehot
        n = test @ self._onehot
        return random_intercept_logpdf(s1, s2, n, np.exp(lvy)[:, None], np.exp(lva)[:, None]).sum(1)

    def _predictive(self, theta, fold):
        z, beta, mu, lva, lvy = self._unpack(theta)
        _, valid, idx = self._test_y(fold)
        g = self.group[idx]
        x = self.x[idx]
        vy = np.exp(lvy)[:, None]
        if self.predictive == "conditional":
            alpha = mu[:, None] + np.exp(0.5 * lva)[:, None] * z
            mean = np.take_along_axis(alpha, g, 1) + beta[:, None] * x
            return DiagPredictive(mean, np.broadcast_to(vy, mean.shape), valid)
        mean = mu[:, None] + beta[:, None] * x
        same = (g[:, :, None] == g[:, None, :]).astype(float)
        cov = np.exp(lva)[:, None, None] * same + vy[:, :, None] * np.eye(g.shape[1])
        return DensePredictive(mean, cov, valid)

    def sample_prior(self, n, rng):
        z = rng.normal(size=(n, self.J))
        mu = rng.normal(0, np.sqrt(MU_VAR), n)
        va = rng.gamma(VAR_ALPHA[0], 1 / VAR_ALPHA[1], n)
        vy = rng.gamma(VAR_Y[0], 1 / VAR_Y[1], n)
        cols = [z] + ([rng.normal(size=n)] if self.floor else []) + [mu, np.log(va), np.log(vy)]
        return np.column_stack(cols)

    def constrain(self, theta):
        z, beta, mu, lva, lvy = self._unpack(np.atleast_2d(theta))
        out = {"alpha": mu[:, None] + np.exp(0.5 * lva)[:, None] * z, "mu_alpha": mu,
               "sigma_alpha": np.exp(0.5 * lva), "sigma_y": np.exp(0.5 * lvy)}
        if self.floor:
            out["beta"] = beta
        return out


def simulate_radon(n_houses=600, J=30, rng=None, p_first_floor=0.2):
    """Synthetic county data: uneven county sizes, floor indicator, prior-drawn truth."""
    rng = np.random.default_rng(rng)
    if n_houses < 2 * J:
        raise InvalidInputError("need at least two houses per county")
    weights = rng.dirichlet(np.full(J, 2.0))
    sizes = 2 + rng.multinomial(n_houses - 2 * J, weights)
    group = np.repeat(np.arange(J), sizes)
    x = (rng.random(n_houses) < p_first_floor).astype(float)
    mu = rng.normal(0, np.sqrt(MU_VAR))
    va = rng.gamma(VAR_ALPHA[0], 1 / VAR_ALPHA[1])
    vy = rng.gamma(VAR_Y[0], 1 / VAR_Y[1])
    beta = rng.normal()
    alpha = rng.normal(mu, np.sqrt(va), J)
    y = rng.normal(alpha[group] + beta * x, np.sqrt(vy))
    data = Dataset(y=y, x=x[:, None], group_id=group, covariate_names=["floor"])
    truth = {"alpha": alpha.tolist(), "beta": float(beta), "mu_alpha": float(mu),
             "sigma_alpha": float(np.sqrt(va)), "sigma_y": float(np.sqrt(vy))}
    return data, truth
