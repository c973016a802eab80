"""Small models for testing the sampler and the engine."""

import numpy as np

from ..core import Dataset, FoldAssignment, InvalidInputError, Model
from ._gaussian import LOG2PI, DiagPredictive, GaussianModel


class GaussianTarget(Model):
    """Independent normal target N(mean, var) with no data.

    Every fold id gives the same density; the log predictive is zero.
    """

    name = "gaussian-target"

    def __init__(self, dim=1, mean=0.0, var=1.0):
        self.mean = np.broadcast_to(np.asarray(mean, dtype=float), (dim,)).copy()
        self.var = np.broadcast_to(np.asarray(var, dtype=float), (dim,)).copy()
        self.param_names = [f"x[{i}]" for i in range(dim)]
        self.folds = FoldAssignment(K=1, test_index=np.zeros(1, dtype=int))

    def _log_joint_and_grad(self, theta, fold):
        d = theta - self.mean
        lp = -0.5 * (d ** 2 / self.var + np.log(self.var) + LOG2PI).sum(1)
        return lp, -d / self.var

    def _log_pred(self, theta, fold):
        return np.zeros(theta.shape[0])

    def sample_prior(self, n, rng):
        return self.mean + np.sqrt(self.var) * rng.normal(size=(n, self.dim))


class NormalMeanModel(GaussianModel):
    """y_i ~ N(mu, sigma^2) with sigma known and mu ~ N(0, tau^2).

    Conjugate, so fold posteriors and LOO predictives have closed forms
    (see ``exact_fold_posterior``).
    """

    name = "normal-mean"

    def __init__(self, dataset, folds, sigma=1.0, tau=10.0):
        if dataset.n_obs != folds.n_obs:
            raise InvalidInputError("fold assignment does not match the dataset")
        self.y_obs = dataset.y
        self.folds = folds
        self.sigma, self.tau = float(sigma), float(tau)
        self.param_names = ["mu"]
        self._init_slots()

    def _log_joint_and_grad(self, theta, fold):
        mu = theta[:, 0]
        w = (self.folds.test_index[None, :] != fold[:, None]).astype(float)
        r = self.y_obs - mu[:, None]
        s2 = self.sigma ** 2
        lp = (-0.5 * (w * r ** 2).sum(1) / s2 - 0.5 * w.sum(1) * (np.log(s2) + LOG2PI)
              - 0.5 * mu ** 2 / self.tau ** 2 - 0.5 * np.log(2 * np.pi * self.tau ** 2))
        grad = ((w * r).sum(1) / s2 - mu / self.tau ** 2)[:, None]
        return lp, grad

    def _predictive(self, theta, fold):
        _, valid, _ = self._test_y(fold)
        mean = np.broadcast_to(theta[:, :1], valid.shape)
        return DiagPredictive(mean, np.full(valid.shape, self.sigma ** 2), valid)

    def sample_prior(self, n, rng):
        return rng.normal(0.0, self.tau, (n, 1))

    def exact_fold_posterior(self, fold):
        """(mean, variance) of mu given the training data of ``fold``."""
        train = self.folds.test_index != fold
        prec = train.sum() / self.sigma ** 2 + 1 / self.tau ** 2
        return self.y_obs[train].sum() / self.sigma ** 2 / prec, 1 / prec


def simulate_normal_mean(n, rng, mu=0.0, sigma=1.0):
    rng = np.random.default_rng(rng)
    return Dataset(y=rng.normal(mu, sigma, n))
