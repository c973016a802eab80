"""Gaussian predictive densities shared by the example models."""

import numpy as np

from ..core import Model

LOG2PI = np.log(2.0 * np.pi)


def normal_logpdf(y, mean, var):
    return -0.5 * (LOG2PI + np.log(var) + (y - mean) ** 2 / var)


def random_intercept_logpdf(s1, s2, n, var_y, var_a):
    """Joint log density of a group whose shared intercept is integrated out.

    With residuals r from the group's mean (without the intercept), s1 = sum r,
    s2 = sum r**2 and n the group size, the covariance is
    var_y * I + var_a * 11' and Sherman-Morrison gives the closed form below.
    Groups with n == 0 contribute zero.
    """
    tot = var_y + n * var_a
    out = -0.5 * (n * LOG2PI + (n - 1) * np.log(var_y) + np.log(tot)
                  + (s2 - var_a * s1 ** 2 / tot) / var_y)
    return np.where(n > 0, out, 0.0)


def unseen_group_log_pred(y, mean, sigma_y, sigma_alpha):
    """Log predictive of one unseen group's observations, intercept marginalized.

    ``y`` and ``mean`` have the group's observations on the last axis; the
    scales broadcast against the leading axes.
    """
    y = np.asarray(y, dtype=float)
    r = y - mean
    var_y = np.asarray(sigma_y, dtype=float) ** 2
    var_a = np.asarray(sigma_alpha, dtype=float) ** 2
    return random_intercept_logpdf(r.sum(-1), (r ** 2).sum(-1), y.shape[-1], var_y, var_a)


class DiagPredictive:
    """Independent normal predictives on padded test slots."""

    def __init__(self, mean, var, valid):
        self.mean = np.where(valid, mean, 0.0)
        self.var = np.where(valid, var, 1.0)
        self.valid = valid

    def logpdf(self, y):
        lp = normal_logpdf(y, self.mean, self.var)
        return np.where(self.valid, lp, 0.0).sum(-1)

    def derivs(self, y):
        d1 = -(y - self.mean) / self.var
        d2 = -1.0 / self.var
        return np.where(self.valid, d1, 0.0), np.where(self.valid, d2, 0.0)

    def sample(self, z):
        return np.where(self.valid, self.mean + np.sqrt(self.var) * z, 0.0)


class DensePredictive:
    """Multivariate normal predictives on padded test slots.

    Padding rows and columns of the covariance are replaced by the identity so
    every batch member has a well-defined Cholesky factor; padded slots are
    masked out of every result.
    """

    def __init__(self, mean, cov, valid):
        pair = valid[:, :, None] & valid[:, None, :]
        eye = np.eye(valid.shape[1])[None]
        self.cov = np.where(pair, cov, eye)
        self.mean = np.where(valid, mean, 0.0)
        self.valid = valid
        self.chol = np.linalg.cholesky(self.cov)

    def _resid(self, y):
        return np.where(self.valid, y - self.mean, 0.0)

    def logpdf(self, y):
        r = self._resid(y)
        z = np.linalg.solve(self.chol, r[..., None])[..., 0]
        logdet = 2.0 * np.log(np.diagonal(self.chol, axis1=-2, axis2=-1)).sum(-1)
        n = self.valid.sum(-1)
        return -0.5 * (n * LOG2PI + logdet + (z ** 2).sum(-1))

    def derivs(self, y):
        prec = np.linalg.inv(self.cov)
        d1 = -np.einsum("cij,cj->ci", prec, self._resid(y))
        d2 = -np.diagonal(prec, axis1=-2, axis2=-1)
        return np.where(self.valid, d1, 0.0), np.where(self.valid, d2, 0.0)

    def sample(self, z):
        draw = self.mean + np.einsum("cij,cj->ci", self.chol, np.where(self.valid, z, 0.0))
        return np.where(self.valid, draw, 0.0)


def whole_groups_held_out(folds, group_id):
    """True when no test fold shares a group with its own training set."""
    if group_id is None:
        return False
    for k in range(folds.K):
        test = folds.test_index == k
        if np.intersect1d(group_id[test], group_id[~test]).size:
            return False
    return True


class GaussianModel(Model):
    """Model whose predictive for a fold's test set is (multivariate) normal.

    Subclasses set ``y_obs`` and ``folds`` and implement ``_predictive``;
    log predictive, y-derivatives and predictive draws all follow from it.
    """

    def _init_slots(self):
        self._slots = self.folds.test_slots()
        self.t_max = self._slots.shape[1]

    def _test_y(self, fold):
        idx = self._slots[fold]
        valid = idx >= 0
        return self.y_obs[np.maximum(idx, 0)], valid, np.maximum(idx, 0)

    def _predictive(self, theta, fold):
        raise NotImplementedError

    def _log_pred(self, theta, fold):
        y, _, _ = self._test_y(fold)
        return self._predictive(theta, fold).logpdf(y)

    def _pred_derivs(self, theta, fold):
        y, _, _ = self._test_y(fold)
        return self._predictive(theta, fold).derivs(y)

    def _pred_sample(self, theta, fold, noise):
        return self._predictive(theta, fold).sample(noise[:, : self.t_max])
