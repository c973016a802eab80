"""Grouped Gaussian regression with group-level covariates.

    y_ij ~ N(alpha_j + x_j' beta, sigma_y^2),   alpha_j ~ N(mu_alpha, sigma_alpha^2)
    mu_alpha ~ N(0, 1),  beta ~ N(0, I),  sigma_alpha, sigma_y ~ half-normal, variance 10

Sampling uses the group means m_j = alpha_j + x_j' beta as coordinates (a
shift with unit Jacobian), so m_j ~ N(mu_alpha + x_j' beta, sigma_alpha^2).
Scales are sampled on the log scale.
"""

import copy

import numpy as np

from ..core import Dataset, InvalidInputError
from ._gaussian import (LOG2PI, DensePredictive, DiagPredictive, GaussianModel,
                        random_intercept_logpdf, whole_groups_held_out)

SCALE_PRIOR_VAR = 10.0
_HALF_NORMAL_CONST = np.log(2.0) - 0.5 * np.log(2.0 * np.pi * SCALE_PRIOR_VAR)


class GroupedRegressionModel(GaussianModel):
    """Hierarchical regression for LOGO or within-group CV.

    ``selection`` is a binary vector over the covariates; unselected
    coefficients stay in the parameter vector but drop out of the linear
    predictor, so their gradient is the prior gradient only.

    ``predictive`` is "marginal" (a test group's intercept is integrated
    against its hierarchical prior, for groups absent from training),
    "conditional" (uses the sampled group mean), or "auto".
    """

    name = "grouped-reg"

    def __init__(self, dataset, folds, selection=None, predictive="auto"):
        if dataset.group_id is None or dataset.x is None:
            raise InvalidInputError("grouped regression needs covariates and group_id")
        if folds.n_obs != dataset.n_obs:
            raise InvalidInputError("fold assignment does not match the dataset")
        self.y_obs = dataset.y
        self.group = dataset.group_id
        self.folds = folds
        J = dataset.n_groups
        first = np.array([np.flatnonzero(self.group == j)[0] for j in range(J)])
        self.x_group = dataset.x[first]
        if not np.allclose(dataset.x, self.x_group[self.group]):
            raise InvalidInputError("covariates must be constant within each group")
        self.J, self.P = self.x_group.shape
        self.selection = np.ones(self.P) if selection is None else \
            np.asarray(selection, dtype=float).ravel()
        if self.selection.shape != (self.P,) or not np.all(np.isin(self.selection, (0, 1))):
            raise InvalidInputError(f"selection must be a binary vector of length {self.P}")
        self._onehot = (self.group[:, None] == np.arange(self.J)[None, :]).astype(float)
        # per fold (rows 0..K, K = full data) and group: training and test sums
        K = folds.K
        test = (folds.test_index[None, :] == np.arange(K + 1)[:, None]).astype(float)
        train = 1.0 - test
        y = self.y_obs
        self._train_n, self._train_s1, self._train_s2 = (
            train @ self._onehot, (train * y) @ self._onehot, (train * y * y) @ self._onehot)
        self._test_n, self._test_s1, self._test_s2 = (
            test @ self._onehot, (test * y) @ self._onehot, (test * y * y) @ self._onehot)
        if predictive == "auto":
            predictive = "marginal" if whole_groups_held_out(folds, self.group) else "conditional"
        if predictive not in ("marginal", "conditional"):
            raise InvalidInputError(f"unknown predictive {predictive!r}")
        self.predictive = predictive
        self.param_names = ([f"m[{j}]" for j in range(self.J)]
                            + [f"beta[{i}]" for i in range(self.P)]
                            + ["mu_alpha", "log_sigma_alpha", "log_sigma_y"])
        self._init_slots()

    def select(self, selection):
        other = copy.copy(self)
        other.selection = np.asarray(selection, dtype=float).ravel()
        if other.selection.shape != (self.P,):
            raise InvalidInputError(f"selection must have length {self.P}")
        return other

    def _unpack(self, theta):
        J, P = self.J, self.P
        m = theta[:, :J]
        beta = theta[:, J:J + P]
        mu, la, ly = theta[:, J + P], theta[:, J + P + 1], theta[:, J + P + 2]
        return m, beta, mu, la, ly

    def _group_effect_mean(self, beta, mu):
        return mu[:, None] + (beta * self.selection) @ self.x_group.T

    def _log_joint_and_grad(self, theta, fold):
        m, beta, mu, la, ly = self._unpack(theta)
        J = self.J
        sa2, sy2 = np.exp(2 * la), np.exp(2 * ly)

        dm = m - self._group_effect_mean(beta, mu)
        # sum_i w_i (y_i - m_g)^2 from per-group training sums
        n_g, s1_g, s2_g = self._train_n[fold], self._train_s1[fold], self._train_s2[fold]
        resid_g = s1_g - m * n_g
        n_train = n_g.sum(1)
        ss_lik = (s2_g - 2 * m * s1_g + m * m * n_g).sum(1)
        ss_m = (dm ** 2).sum(1)

        lp = (-0.5 * ss_lik / sy2 - n_train * (ly + 0.5 * LOG2PI)
              - 0.5 * ss_m / sa2 - J * (la + 0.5 * LOG2PI)
              - 0.5 * (beta ** 2).sum(1) - 0.5 * self.P * LOG2PI
              - 0.5 * mu ** 2 - 0.5 * LOG2PI
              + 2 * _HALF_NORMAL_CONST - (sa2 + sy2) / (2 * SCALE_PRIOR_VAR) + la + ly)

        dm_s = dm / sa2[:, None]
        grad = np.empty_like(theta)
        grad[:, :J] = -dm_s + resid_g / sy2[:, None]
        grad[:, J:J + self.P] = -beta + self.selection * (dm_s @ self.x_group)
        grad[:, J + self.P] = -mu + dm_s.sum(1)
        grad[:, J + self.P + 1] = ss_m / sa2 - J - sa2 / SCALE_PRIOR_VAR + 1
        grad[:, J + self.P + 2] = ss_lik / sy2 - n_train - sy2 / SCALE_PRIOR_VAR + 1
        return lp, grad

    def _log_pred(self, theta, fold):
        if self.predictive == "conditional":
            return super()._log_pred(theta, fold)
        m, beta, mu, la, ly = self._unpack(theta)
        mean_g = self._group_effect_mean(beta, mu)
        n = self._test_n[fold]
        t1 = self._test_s1[fold]
        s1 = t1 - n * mean_g
        s2 = self._test_s2[fold] - 2 * mean_g * t1 + n * mean_g ** 2
        sa2, sy2 = np.exp(2 * la)[:, None], np.exp(2 * ly)[:, None]
        return random_intercept_logpdf(s1, s2, n, sy2, sa2).sum(1)

    def _predictive(self, theta, fold):
        m, beta, mu, la, ly = self._unpack(theta)
        _, valid, idx = self._test_y(fold)
        g = self.group[idx]
        sy2 = np.exp(2 * ly)[:, None]
        if self.predictive == "conditional":
            mean = np.take_along_axis(m, g, axis=1)
            return DiagPredictive(mean, np.broadcast_to(sy2, mean.shape), valid)
        mean = np.take_along_axis(self._group_effect_mean(beta, mu), g, axis=1)
        same = (g[:, :, None] == g[:, None, :]).astype(float)
        cov = np.exp(2 * la)[:, None, None] * same + sy2[:, :, None] * np.eye(g.shape[1])
        return DensePredictive(mean, cov, valid)

    def sample_prior(self, n, rng):
        sd = np.sqrt(SCALE_PRIOR_VAR)
        sa = np.abs(rng.normal(0, sd, n))
        sy = np.abs(rng.normal(0, sd, n))
        mu = rng.normal(0, 1, n)
        beta = rng.normal(0, 1, (n, self.P))
        alpha = mu[:, None] + sa[:, None] * rng.normal(0, 1, (n, self.J))
        m = alpha + (beta * self.selection) @ self.x_group.T
        return np.column_stack([m, beta, mu, np.log(sa), np.log(sy)])

    def constrain(self, theta):
        theta = np.atleast_2d(theta)
        m, beta, mu, la, ly = self._unpack(theta)
        return {"alpha": m - (beta * self.selection) @ self.x_group.T, "beta": beta,
                "mu_alpha": mu, "sigma_alpha": np.exp(la), "sigma_y": np.exp(ly)}


def simulate_grouped_regression(J, N_j, rng, n_covariates=4, min_abs_last_beta=None):
    """Synthetic grouped data with true parameters drawn from the priors.

    Group-level covariates are N(0, 10) (variance 10).  With
    ``min_abs_last_beta`` the coefficient of the last covariate is redrawn
    until its magnitude reaches that value, so dropping it is a genuine
    misspecification.
    """
    if J < 2:
        raise InvalidInputError("need at least two groups")
    rng = np.random.default_rng(rng)
    x_group = rng.normal(0.0, np.sqrt(10.0), (J, n_covariates))
    sd = np.sqrt(SCALE_PRIOR_VAR)
    mu = rng.normal()
    sigma_alpha = abs(rng.normal(0, sd))
    sigma_y = abs(rng.normal(0, sd))
    beta = rng.normal(size=n_covariates)
    if min_abs_last_beta is not None:
        while abs(beta[-1]) < min_abs_last_beta:
            beta[-1] = rng.normal()
    alpha = rng.normal(mu, sigma_alpha, J)
    group = np.repeat(np.arange(J), N_j)
    y = rng.normal(alpha[group] + x_group[group] @ beta, sigma_y)
    data = Dataset(y=y, x=x_group[group], group_id=group,
                   covariate_names=[f"x{i}" for i in range(n_covariates)])
    truth = {"alpha": alpha.tolist(), "beta": beta.tolist(), "mu_alpha": float(mu),
             "sigma_alpha": float(sigma_alpha), "sigma_y": float(sigma_y)}
    return data, truth
