"""Datasets, fold schemes and the masked model abstraction."""

import abc
import csv
from dataclasses import dataclass, field

import numpy as np


class PCVError(Exception):
    """Base class for errors raised by this package."""


class InvalidInputError(PCVError, ValueError):
    pass


class UnsupportedScoreError(PCVError):
    """The model cannot supply what the requested scoring rule needs."""


class UndefinedDiagnosticError(PCVError, ArithmeticError):
    pass


@dataclass
class Dataset:
    """Observations with optional covariates, group labels and time order."""

    y: np.ndarray
    x: np.ndarray | None = None
    group_id: np.ndarray | None = None
    time_index: np.ndarray | None = None
    covariate_names: list = field(default_factory=list)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        n = self.y.shape[0]
        if n < 1:
            raise InvalidInputError("dataset has no observations")
        if self.x is not None:
            self.x = np.asarray(self.x, dtype=float)
            if self.x.ndim == 1:
                self.x = self.x[:, None]
            if self.x.shape[0] != n:
                raise InvalidInputError(f"x has {self.x.shape[0]} rows, y has {n}")
            if not self.covariate_names:
                self.covariate_names = [f"x{i}" for i in range(self.x.shape[1])]
        if self.group_id is not None:
            self.group_id = np.asarray(self.group_id, dtype=int).ravel()
            if self.group_id.shape[0] != n:
                raise InvalidInputError("group_id length does not match y")
            labels = np.unique(self.group_id)
            if labels[0] != 0 or labels[-1] != labels.size - 1:
                raise InvalidInputError("group_id values must form the range 0..J-1")
        if self.time_index is not None:
            self.time_index = np.asarray(self.time_index, dtype=int).ravel()
            if self.time_index.shape[0] != n:
                raise InvalidInputError("time_index length does not match y")

    @property
    def n_obs(self):
        return self.y.shape[0]

    @property
    def n_groups(self):
        return 0 if self.group_id is None else int(self.group_id.max()) + 1

    def to_csv(self, path):
        header = ["y"]
        cols = [self.y]
        if self.x is not None:
            header += list(self.covariate_names)
            cols += [self.x[:, i] for i in range(self.x.shape[1])]
        if self.group_id is not None:
            header.append("group")
            cols.append(self.group_id)
        if self.time_index is not None:
            header.append("time")
            cols.append(self.time_index)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in zip(*cols):
                w.writerow([repr(float(v)) if isinstance(v, float) else str(v) for v in
                            (v.item() for v in row)])

    @classmethod
    def from_csv(cls, path, response="y", covariates=None, group=None, time=None):
        """Read a CSV with a header row.

        ``covariates`` is a list of column names; ``group`` and ``time`` name
        integer columns.  Parse failures raise InvalidInputError naming the
        row and column.
        """
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise InvalidInputError(f"{path}: empty file")
        header = [h.strip() for h in rows[0]]
        body = [r for r in rows[1:] if r]
        covariates = list(covariates or [])

        def column(name, kind):
            if name not in header:
                raise InvalidInputError(f"{path}: no column named {name!r}")
            j = header.index(name)
            out = []
            for i, r in enumerate(body, start=2):
                if j >= len(r):
                    raise InvalidInputError(f"{path}: row {i} has no value for column {name!r}")
                try:
                    out.append(kind(r[j]))
                except ValueError:
                    raise InvalidInputError(
                        f"{path}: row {i}, column {name!r}: cannot parse {r[j]!r}") from None
            return np.array(out)

        def as_int(s):
            v = float(s)
            if v != int(v):
                raise ValueError(s)
            return int(v)

        y = column(response, float)
        if not np.all(np.isfinite(y)):
            raise InvalidInputError(f"{path}: non-finite response value")
        x = np.column_stack([column(c, float) for c in covariates]) if covariates else None
        g = column(group, as_int) if group else None
        t = column(time, as_int) if time else None
        return cls(y=y, x=x, group_id=g, time_index=t, covariate_names=covariates)


@dataclass
class FoldAssignment:
    """Each observation's test fold.  Fold id ``K`` is the full-data sentinel."""

    K: int
    test_index: np.ndarray

    def __post_init__(self):
        self.test_index = np.asarray(self.test_index, dtype=int).ravel()
        if self.K < 1:
            raise InvalidInputError("need at least one fold")
        if self.test_index.min() < 0 or self.test_index.max() >= self.K:
            raise InvalidInputError("test_index entries must lie in 0..K-1")
        sizes = np.bincount(self.test_index, minlength=self.K)
        if np.any(sizes == 0):
            raise InvalidInputError(f"folds {np.flatnonzero(sizes == 0).tolist()} are empty")

    @property
    def n_obs(self):
        return self.test_index.shape[0]

    @property
    def sentinel(self):
        return self.K

    def sizes(self):
        return np.bincount(self.test_index, minlength=self.K)

    def test_mask(self, fold):
        """Boolean (C, N) membership of each observation in each chain's test set."""
        fold = np.asarray(fold)
        return self.test_index[None, :] == fold.reshape(-1, 1)

    def test_slots(self):
        """Padded test indices, shape (K+1, T_max), -1 where unused.

        Row K (the sentinel) is all padding.
        """
        sizes = self.sizes()
        t_max = int(sizes.max())
        slots = np.full((self.K + 1, t_max), -1, dtype=int)
        for k in range(self.K):
            idx = np.flatnonzero(self.test_index == k)
            slots[k, : idx.size] = idx
        return slots

    def validate(self):
        """Every fold must leave some training data."""
        if np.any(self.sizes() >= self.n_obs):
            raise InvalidInputError("a fold's training set is empty")
        return self


def make_loo_scheme(dataset):
    n = dataset.n_obs
    if n < 2:
        raise InvalidInputError("leave-one-out needs at least 2 observations")
    return FoldAssignment(K=n, test_index=np.arange(n))


def make_logo_scheme(dataset):
    if dataset.group_id is None:
        raise InvalidInputError("leave-one-group-out needs group_id")
    return FoldAssignment(K=dataset.n_groups, test_index=dataset.group_id.copy())


def make_kfold_scheme(dataset, K, rng):
    """Random K-fold partition; remainder observations go to the lowest folds."""
    n = dataset.n_obs
    if not 2 <= K <= n:
        raise InvalidInputError(f"K={K} outside 2..{n}")
    rng = np.random.default_rng(rng)
    perm = rng.permutation(n)
    sizes = np.full(K, n // K)
    sizes[: n % K] += 1
    test_index = np.empty(n, dtype=int)
    test_index[perm] = np.repeat(np.arange(K), sizes)
    return FoldAssignment(K=K, test_index=test_index)


def make_time_block_scheme(dataset, K):
    """Contiguous blocks in time order, as equal in size as possible."""
    n = dataset.n_obs
    if not 2 <= K <= n:
        raise InvalidInputError(f"K={K} outside 2..{n}")
    order = np.argsort(dataset.time_index, kind="stable") if dataset.time_index is not None \
        else np.arange(n)
    sizes = np.full(K, n // K)
    sizes[: n % K] += 1
    test_index = np.empty(n, dtype=int)
    test_index[order] = np.repeat(np.arange(K), sizes)
    return FoldAssignment(K=K, test_index=test_index)


def _batch(theta, fold):
    if isinstance(theta, np.ndarray) and theta.ndim == 2 and isinstance(fold, np.ndarray) \
            and fold.shape == (theta.shape[0],):
        return theta, fold, False
    theta = np.asarray(theta, dtype=float)
    single = theta.ndim == 1
    theta = np.atleast_2d(theta)
    fold = np.broadcast_to(np.asarray(fold, dtype=int), (theta.shape[0],))
    return theta, fold, single


class Model(abc.ABC):
    """A Bayesian model evaluated under fold masks.

    All methods accept either one parameter vector or a (C, dim) batch, and
    either one fold id or one per row.  Fold id ``K`` selects the full data
    set for training and an empty test set.

    Subclasses implement the batched ``_log_joint_and_grad`` and
    ``_log_pred``; HS needs ``_pred_derivs`` and DSS needs ``_pred_sample``.
    """

    name = "model"
    param_names: list
    folds: FoldAssignment

    @property
    def dim(self):
        return len(self.param_names)

    @property
    def K(self):
        return self.folds.K

    def log_joint_and_grad(self, theta, fold):
        theta, fold, single = _batch(theta, fold)
        with np.errstate(all="ignore"):
            lp, grad = self._log_joint_and_grad(theta, fold)
        nan = np.isnan(lp)
        if nan.any():
            lp = np.where(nan, -np.inf, lp)
        return (lp[0], grad[0]) if single else (lp, grad)

    def log_joint(self, theta, fold):
        return self.log_joint_and_grad(theta, fold)[0]

    def grad_log_joint(self, theta, fold):
        return self.log_joint_and_grad(theta, fold)[1]

    def log_pred(self, theta, fold):
        theta, fold, single = _batch(theta, fold)
        with np.errstate(all="ignore"):
            out = self._log_pred(theta, fold)
        return out[0] if single else out

    def pred_derivs(self, theta, fold):
        """First and second y-derivatives of the log predictive, per test slot.

        Returns ``(d1, d2)``, each (C, T_max); unused slots are zero.
        """
        theta, fold, single = _batch(theta, fold)
        d1, d2 = self._pred_derivs(theta, fold)
        return (d1[0], d2[0]) if single else (d1, d2)

    def pred_sample(self, theta, fold, noise):
        """One predictive draw per test slot from standard-normal ``noise``."""
        theta, fold, single = _batch(theta, fold)
        noise = np.atleast_2d(noise)
        out = self._pred_sample(theta, fold, noise)
        return out[0] if single else out

    @property
    def supports_hs(self):
        return type(self)._pred_derivs is not Model._pred_derivs

    @property
    def supports_dss(self):
        return type(self)._pred_sample is not Model._pred_sample

    def _pred_derivs(self, theta, fold):
        raise UnsupportedScoreError(f"{self.name} does not supply predictive derivatives (HS)")

    def _pred_sample(self, theta, fold, noise):
        raise UnsupportedScoreError(f"{self.name} does not supply predictive draws (DSS)")

    @abc.abstractmethod
    def _log_joint_and_grad(self, theta, fold):
        ...

    @abc.abstractmethod
    def _log_pred(self, theta, fold):
        ...

    @abc.abstractmethod
    def sample_prior(self, n, rng):
        """``n`` unconstrained parameter vectors drawn from the prior."""

    def constrain(self, theta):
        """Map unconstrained draws to a dict of named constrained arrays."""
        return {name: np.asarray(theta)[..., i] for i, name in enumerate(self.param_names)}

    def test_values(self):
        """Observed responses per test slot, (K+1, T_max), with validity mask."""
        slots = self.folds.test_slots()
        valid = slots >= 0
        y = np.where(valid, self.y_obs[np.maximum(slots, 0)], 0.0)
        return y, valid


def masked_log_joint(model, params, fold_id):
    return model.log_joint(params, fold_id)


def masked_log_pred(model, params, fold_id):
    return model.log_pred(params, fold_id)


def masked_model_log_joint(model_family, selection_mask, params, fold_id):
    """Log joint of the nested model that keeps only the selected covariates."""
    return model_family.select(selection_mask).log_joint(params, fold_id)
