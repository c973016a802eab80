"""Rat growth curves with per-rat intercepts and (optionally) per-rat slopes.

M_A:  y_jt ~ N(alpha_j + beta_j t, sigma_y^2),  alpha_j ~ N(mu_alpha, sigma_alpha^2),
      beta_j ~ N(mu_beta, sigma_beta^2)
M_B:  y_jt ~ N(alpha_j + beta t, sigma_y^2)

Time is centered at day 22.  Normal priors are (mean, sd) and gamma priors
are (shape, rate).
"""

import numpy as np
from scipy.special import gammaln

from ..core import Dataset, InvalidInputError
from ._gaussian import LOG2PI, DensePredictive, DiagPredictive, GaussianModel, whole_groups_held_out

TIMES = np.array([8.0, 15.0, 22.0, 29.0, 36.0])
TIME_CENTER = 22.0
MU_ALPHA = (250.0, 20.0)
MU_BETA = (6.0, 2.0)
SIGMA_ALPHA = (25.0, 2.0)
SIGMA_BETA = (5.0, 10.0)
SIGMA_Y = (1.0, 2.0)


def _normal_lp(x, loc, sd):
    return -0.5 * ((x - loc) / sd) ** 2 - np.log(sd) - 0.5 * LOG2PI


def _log_gamma_lp(s, shape, rate):
    # density of log(sigma) when sigma ~ Gamma(shape, rate), Jacobian included
    return shape * np.log(rate) - gammaln(shape) + shape * s - rate * np.exp(s)


class RatGrowthModel(GaussianModel):
    name = "rats"

    def __init__(self, dataset, folds, random_slope=True, predictive="auto"):
        if dataset.group_id is None or dataset.x is None:
            raise InvalidInputError("rat model needs a time covariate and group_id")
        self.y_obs = dataset.y
        self.group = dataset.group_id
        self.t = dataset.x[:, 0] - TIME_CENTER
        self.folds = folds
        self.J = dataset.n_groups
        self.random_slope = random_slope
        self._onehot = (self.group[:, None] == np.arange(self.J)[None, :]).astype(float)
        if predictive == "auto":
            predictive = "marginal" if whole_groups_held_out(folds, self.group) else "conditional"
        self.predictive = predictive
        J = self.J
        if random_slope:
            self.param_names = ([f"alpha[{j}]" for j in range(J)] + [f"beta[{j}]" for j in range(J)]
                                + ["mu_alpha", "mu_beta", "log_sigma_alpha", "log_sigma_beta",
                                   "log_sigma_y"])
        else:
            self.param_names = ([f"alpha[{j}]" for j in range(J)]
                                + ["beta", "mu_alpha", "log_sigma_alpha", "log_sigma_y"])
        self._init_slots()

    def _unpack(self, theta):
        J = self.J
        out = {"alpha": theta[:, :J]}
        if self.random_slope:
            out["beta"] = theta[:, J:2 * J]
            (out["mu_alpha"], out["mu_beta"], out["ls_alpha"], out["ls_beta"],
             out["ls_y"]) = theta[:, 2 * J:].T
        else:
            out["beta"] = theta[:, J]
            out["mu_alpha"], out["ls_alpha"], out["ls_y"] = theta[:, J + 1:].T
        return out

    def _log_joint_and_grad(self, theta, fold):
        J = self.J
        p = self._unpack(theta)
        alpha = p["alpha"]
        w = (self.folds.test_index[None, :] != fold[:, None]).astype(float)
        sa, sy = np.exp(p["ls_alpha"]), np.exp(p["ls_y"])
        if self.random_slope:
            slope = p["beta"][:, self.group]
        else:
            slope = p["beta"][:, None]
        r = self.y_obs - alpha[:, self.group] - slope * self.t
        wr = w * r
        n_train = w.sum(1)
        ss = (wr * r).sum(1)
        da = alpha - p["mu_alpha"][:, None]

        lp = (-0.5 * ss / sy ** 2 - n_train * (p["ls_y"] + 0.5 * LOG2PI)
              + _log_gamma_lp(p["ls_y"], *SIGMA_Y)
              - 0.5 * (da ** 2).sum(1) / sa ** 2 - J * (p["ls_alpha"] + 0.5 * LOG2PI)
              + _log_gamma_lp(p["ls_alpha"], *SIGMA_ALPHA)
              + _normal_lp(p["mu_alpha"], *MU_ALPHA))

        grad = np.empty_like(theta)
        grad[:, :J] = (wr @ self._onehot) / sy[:, None] ** 2 - da / sa[:, None] ** 2
        g_mu_a = da.sum(1) / sa ** 2 - (p["mu_alpha"] - MU_ALPHA[0]) / MU_ALPHA[1] ** 2
        g_ls_a = (da ** 2).sum(1) / sa ** 2 - J + SIGMA_ALPHA[0] - SIGMA_ALPHA[1] * sa
        g_ls_y = ss / sy ** 2 - n_train + SIGMA_Y[0] - SIGMA_Y[1] * sy
        if self.random_slope:
            sb = np.exp(p["ls_beta"])
            db = p["beta"] - p["mu_beta"][:, None]
            lp += (-0.5 * (db ** 2).sum(1) / sb ** 2 - J * (p["ls_beta"] + 0.5 * LOG2PI)
                   + _log_gamma_lp(p["ls_beta"], *SIGMA_BETA)
                   + _normal_lp(p["mu_beta"], *MU_BETA))
            grad[:, J:2 * J] = ((wr * self.t) @ self._onehot) / sy[:, None] ** 2 - db / sb[:, None] ** 2
            grad[:, 2 * J] = g_mu_a
            grad[:, 2 * J + 1] = db.sum(1) / sb ** 2 - (p["mu_beta"] - MU_BETA[0]) / MU_BETA[1] ** 2
            grad[:, 2 * J + 2] = g_ls_a
            grad[:, 2 * J + 3] = (db ** 2).sum(1) / sb ** 2 - J + SIGMA_BETA[0] - SIGMA_BETA[1] * sb
            grad[:, 2 * J + 4] = g_ls_y
        else:
            lp += _normal_lp(p["beta"], *MU_BETA)
            grad[:, J] = (wr * self.t).sum(1) / sy ** 2 - (p["beta"] - MU_BETA[0]) / MU_BETA[1] ** 2
            grad[:, J + 1] = g_mu_a
            grad[:, J + 2] = g_ls_a
            grad[:, J + 3] = g_ls_y
        return lp, grad

    def _predictive(self, theta, fold):
        p = self._unpack(theta)
        _, valid, idx = self._test_y(fold)
        g = self.group[idx]
        t = self.t[idx]
        sy2 = np.exp(2 * p["ls_y"])[:, None]
        if self.predictive == "conditional":
            slope = np.take_along_axis(p["beta"], g, 1) if self.random_slope else p["beta"][:, None]
            mean = np.take_along_axis(p["alpha"], g, 1) + slope * t
            return DiagPredictive(mean, np.broadcast_to(sy2, mean.shape), valid)
        same = (g[:, :, None] == g[:, None, :]).astype(float)
        cov = np.exp(2 * p["ls_alpha"])[:, None, None] * same + sy2[:, :, None] * np.eye(g.shape[1])
        if self.random_slope:
            mean = p["mu_alpha"][:, None] + p["mu_beta"][:, None] * t
            cov = cov + (np.exp(2 * p["ls_beta"])[:, None, None] * same
                         * t[:, :, None] * t[:, None, :])
        else:
            mean = p["mu_alpha"][:, None] + p["beta"][:, None] * t
        return DensePredictive(mean, cov, valid)

    def sample_prior(self, n, rng):
        J = self.J
        mu_a = rng.normal(*MU_ALPHA, n)
        sa = rng.gamma(SIGMA_ALPHA[0], 1 / SIGMA_ALPHA[1], n)
        sy = rng.gamma(SIGMA_Y[0], 1 / SIGMA_Y[1], n)
        alpha = mu_a[:, None] + sa[:, None] * rng.normal(size=(n, J))
        if self.random_slope:
            mu_b = rng.normal(*MU_BETA, n)
            sb = rng.gamma(SIGMA_BETA[0], 1 / SIGMA_BETA[1], n)
            beta = mu_b[:, None] + sb[:, None] * rng.normal(size=(n, J))
            return np.column_stack([alpha, beta, mu_a, mu_b, np.log(sa), np.log(sb), np.log(sy)])
        beta = rng.normal(*MU_BETA, n)
        return np.column_stack([alpha, beta, mu_a, np.log(sa), np.log(sy)])

    def constrain(self, theta):
        p = self._unpack(np.atleast_2d(theta))
        out = {"alpha": p["alpha"], "beta": p["beta"], "mu_alpha": p["mu_alpha"],
               "sigma_alpha": np.exp(p["ls_alpha"]), "sigma_y": np.exp(p["ls_y"])}
        if self.random_slope:
            out["mu_beta"] = p["mu_beta"]
            out["sigma_beta"] = np.exp(p["ls_beta"])
        return out


def simulate_rats(J=30, rng=None, times=TIMES):
    """Rat-like growth data with true parameters drawn from the M_A priors."""
    rng = np.random.default_rng(rng)
    mu_a, mu_b = rng.normal(*MU_ALPHA), rng.normal(*MU_BETA)
    sa = rng.gamma(SIGMA_ALPHA[0], 1 / SIGMA_ALPHA[1])
    sb = rng.gamma(SIGMA_BETA[0], 1 / SIGMA_BETA[1])
    sy = rng.gamma(SIGMA_Y[0], 1 / SIGMA_Y[1])
    alpha = rng.normal(mu_a, sa, J)
    beta = rng.normal(mu_b, sb, J)
    group = np.repeat(np.arange(J), len(times))
    t = np.tile(np.asarray(times, dtype=float), J)
    y = rng.normal(alpha[group] + beta[group] * (t - TIME_CENTER), sy)
    data = Dataset(y=y, x=t[:, None], group_id=group, covariate_names=["day"])
    truth = {"alpha": alpha.tolist(), "beta": beta.tolist(), "mu_alpha": float(mu_a),
             "mu_beta": float(mu_b), "sigma_alpha": float(sa), "sigma_beta": float(sb),
             "sigma_y": float(sy)}
    return data, truth
