"""Fixed-trajectory HMC, full-data adaptation and warm-started fold chains.

All routines work on a batch of chains at once: positions are (C, p) arrays
and every chain carries its own fold id and random-stream key.  Chains never
interact during a transition, so a batch gives the same draws as running its
chains one at a time.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from . import streams
from .core import InvalidInputError, PCVError

DIVERGENCE_THRESHOLD = 1000.0


class AdaptationError(PCVError):
    """Adaptation could not find a workable step size."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


@dataclass
class KernelParams:
    step_size: float
    n_leapfrog: int
    inv_mass_diag: np.ndarray

    def __post_init__(self):
        self.inv_mass_diag = np.asarray(self.inv_mass_diag, dtype=float)
        if not (np.isfinite(self.step_size) and self.step_size > 0):
            raise InvalidInputError("step_size must be positive and finite")
        if int(self.n_leapfrog) < 1:
            raise InvalidInputError("n_leapfrog must be at least 1")
        self.n_leapfrog = int(self.n_leapfrog)
        if not np.all(np.isfinite(self.inv_mass_diag) & (self.inv_mass_diag > 0)):
            raise InvalidInputError("inv_mass_diag must be positive and finite")

    def to_dict(self):
        return {"step_size": float(self.step_size), "n_leapfrog": self.n_leapfrog,
                "inv_mass_diag": self.inv_mass_diag.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["step_size"], d["n_leapfrog"], np.asarray(d["inv_mass_diag"]))


@dataclass
class ChainState:
    """A batch of chains: positions, cached density and gradient, fold ids, keys."""

    position: np.ndarray
    logp: np.ndarray
    grad: np.ndarray
    fold: np.ndarray
    keys: np.ndarray
    divergences: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.divergences is None:
            self.divergences = np.zeros(self.position.shape[0], dtype=np.int64)

    @classmethod
    def start(cls, model, position, fold, keys):
        position = np.atleast_2d(np.asarray(position, dtype=float))
        fold = np.broadcast_to(np.asarray(fold, dtype=int), (position.shape[0],)).copy()
        logp, grad = model.log_joint_and_grad(position, fold)
        return cls(position.copy(), logp, grad, fold, np.asarray(keys, dtype=np.uint64))

    @property
    def n_chains(self):
        return self.position.shape[0]

    def copy(self):
        return ChainState(self.position.copy(), self.logp.copy(), self.grad.copy(),
                          self.fold.copy(), self.keys.copy(), self.divergences.copy())


def leapfrog(position, momentum, model, fold_id, step_size, n_steps, inv_mass_diag, grad=None):
    """Leapfrog integration of ``n_steps`` steps.

    Accepts a single vector or a (C, p) batch.  Returns ``(q, p, logp, grad,
    ok)``; chains that met a non-finite position, momentum or gradient get
    ``ok = False`` and their inputs back unchanged.
    """
    if n_steps < 1:
        raise InvalidInputError("n_steps must be at least 1")
    single = np.ndim(position) == 1
    q0 = np.atleast_2d(np.asarray(position, dtype=float))
    p0 = np.atleast_2d(np.asarray(momentum, dtype=float))
    fold = np.broadcast_to(np.asarray(fold_id, dtype=int), (q0.shape[0],))
    step = np.broadcast_to(np.asarray(step_size, dtype=float), (q0.shape[0],))[:, None]
    if grad is None:
        logp0, g = model.log_joint_and_grad(q0, fold)
    else:
        logp0, g = None, np.atleast_2d(grad)
    ok = np.all(np.isfinite(g), axis=1)
    q, p = q0.copy(), p0.copy()
    logp = logp0
    with np.errstate(all="ignore"):
        p = p + 0.5 * step * g
        for i in range(n_steps):
            q = q + step * inv_mass_diag * p
            logp, g = model.log_joint_and_grad(q, fold)
            if i < n_steps - 1:
                p = p + step * g
            ok &= np.all(np.isfinite(g), axis=1) & np.all(np.isfinite(q), axis=1)
        p = p + 0.5 * step * g
    ok &= np.all(np.isfinite(p), axis=1)
    bad = ~ok
    if bad.any():
        q[bad], p[bad] = q0[bad], p0[bad]
        if logp0 is None:
            logp0 = model.log_joint(q0[bad], fold[bad])
            logp[bad] = logp0
        else:
            logp[bad] = logp0[bad]
        g[bad] = model.grad_log_joint(q0[bad], fold[bad])
    if single:
        return q[0], p[0], logp[0], g[0], bool(ok[0])
    return q, p, logp, g, ok


def _energy_change(logp0, logp1, p0, p1, inv_mass_diag):
    with np.errstate(over="ignore", invalid="ignore"):
        k0 = 0.5 * (p0 ** 2 * inv_mass_diag).sum(1)
        k1 = 0.5 * (p1 ** 2 * inv_mass_diag).sum(1)
        return (-logp1 + k1) - (-logp0 + k0)


def _transition(state, model, step_size, n_leapfrog, inv_mass_diag, iteration, phase):
    """One HMC transition; returns (new_state, accept_prob, accepted, divergent)."""
    dim = state.position.shape[1]
    u_mom, u_acc = streams.uniforms_many(state.keys, iteration, phase,
                                         [(streams.MOMENTUM, dim), (streams.ACCEPT, 1)])
    p0 = ndtri(u_mom) / np.sqrt(inv_mass_diag)
    q1, p1, logp1, g1, ok = leapfrog(state.position, p0, model, state.fold, step_size,
                                     n_leapfrog, inv_mass_diag, grad=state.grad)
    dH = _energy_change(state.logp, logp1, p0, p1, inv_mass_diag)
    divergent = ~ok | np.isnan(dH) | ((np.abs(dH) > DIVERGENCE_THRESHOLD) & np.isfinite(dH))
    with np.errstate(over="ignore", invalid="ignore"):
        accept_prob = np.where(divergent | np.isnan(dH), 0.0, np.minimum(1.0, np.exp(-dH)))
    accepted = ~divergent & (u_acc[:, 0] < accept_prob)
    new = state.copy()
    new.position[accepted] = q1[accepted]
    new.logp[accepted] = logp1[accepted]
    new.grad[accepted] = g1[accepted]
    new.divergences += divergent
    return new, accept_prob, accepted, divergent


def hmc_step(state, model, kernel, iteration=0, phase=streams.FOLD_SAMPLING):
    """Advance every chain in ``state`` by one HMC transition.

    Momentum is drawn fresh from N(0, M) with M = diag(1/inv_mass_diag).  A
    transition is divergent when the integrator produced non-finite values or
    the energy error is NaN or finite with magnitude above 1000; divergent
    proposals are rejected and counted.  A proposal with log density -inf is
    an ordinary rejection.

    Returns ``(state', accepted, divergent)``.
    """
    new, _, accepted, divergent = _transition(state, model, kernel.step_size, kernel.n_leapfrog,
                                              kernel.inv_mass_diag, iteration, phase)
    return new, accepted, divergent


class DualAveraging:
    """Nesterov dual averaging of log step size toward a target acceptance rate."""

    def __init__(self, step_size, target=0.8, t0=10.0, gamma=0.05, kappa=0.75):
        self.target, self.t0, self.gamma, self.kappa = target, t0, gamma, kappa
        self.restart(step_size)

    def restart(self, step_size):
        self.mu = np.log(10.0 * step_size)
        self.t = 0
        self.h_bar = 0.0
        self.log_eps = np.log(step_size)
        self.log_eps_bar = 0.0

    def update(self, accept_stat):
        self.t += 1
        eta = 1.0 / (self.t + self.t0)
        self.h_bar = (1 - eta) * self.h_bar + eta * (self.target - accept_stat)
        self.log_eps = self.mu - np.sqrt(self.t) / self.gamma * self.h_bar
        w = self.t ** (-self.kappa)
        self.log_eps_bar = w * self.log_eps + (1 - w) * self.log_eps_bar
        return np.exp(self.log_eps)

    @property
    def step_size(self):
        return float(np.exp(self.log_eps))

    @property
    def final_step_size(self):
        return float(np.exp(self.log_eps_bar))


def find_reasonable_step_size(state, model, step_size, inv_mass_diag, tag):
    """Double or halve a single-leapfrog step until the median acceptance crosses 0.8."""
    dim = state.position.shape[1]

    def log_accept(eps, trial):
        z = streams.normals(state.keys, tag * 64 + trial, streams.ADAPT, streams.STEPSIZE, dim)
        p0 = z / np.sqrt(inv_mass_diag)
        q1, p1, logp1, _, ok = leapfrog(state.position, p0, model, state.fold, eps, 1,
                                        inv_mass_diag, grad=state.grad)
        dH = _energy_change(state.logp, logp1, p0, p1, inv_mass_diag)
        dH = np.where(ok & np.isfinite(dH), dH, np.inf)
        return float(np.median(-dH))

    threshold = np.log(0.8)
    la = log_accept(step_size, 0)
    direction = 1 if la > threshold else -1
    for trial in range(1, 60):
        new = step_size * (2.0 ** direction)
        la = log_accept(new, trial)
        if (direction == 1 and not la > threshold) or (direction == -1 and la > threshold):
            return new if direction == -1 else step_size
        step_size = new
    return step_size


def adaptation_windows(n_warmup, init=75, term=50, base=25):
    """Slow-phase windows (start, end) for mass-matrix estimation.

    Follows the usual layout: a fast initial buffer, doubling slow windows,
    a fast terminal buffer.  Short warm-ups shrink the buffers to 15% and
    10% of the total.
    """
    if n_warmup < 20:
        return []
    if init + term + base > n_warmup:
        init = int(0.15 * n_warmup)
        term = int(0.1 * n_warmup)
        base = n_warmup - init - term
    windows = []
    start, size = init, base
    end_slow = n_warmup - term
    while start < end_slow:
        end = start + size
        if end + 2 * size > end_slow:
            end = end_slow
        windows.append((start, end))
        start, size = end, 2 * size
    return windows


@dataclass
class AdaptConfig:
    chains: int = 4
    warmup: int = 1000
    draws: int = 1000
    n_leapfrog: int = 16
    target_accept: float = 0.8
    seed: int = 0
    model_id: int = 0
    init_step_size: float = 0.1


def adapt_full_data(model, config):
    """Windowed adaptation and sampling on the full-data posterior.

    Chains start from prior draws.  Returns ``(KernelParams, draws, info)``
    with ``draws`` of shape (chains, draws, dim) and ``info`` holding the
    acceptance rate and divergence counts of the sampling phase.
    """
    dim = model.dim
    if dim < 1:
        raise InvalidInputError("model has no parameters")
    L = int(config.chains)
    sentinel = model.K
    keys = streams.chain_keys(config.seed, config.model_id, sentinel, np.arange(L))
    rng = streams.generator(config.seed, config.model_id, sentinel, streams.INIT)
    init = model.sample_prior(L, rng)
    state = ChainState.start(model, init, sentinel, keys)
    bad = ~np.isfinite(state.logp)
    for _ in range(100):
        if not bad.any():
            break
        init[bad] = model.sample_prior(int(bad.sum()), rng)
        state = ChainState.start(model, init, sentinel, keys)
        bad = ~np.isfinite(state.logp)
    if bad.any():
        raise AdaptationError("could not find finite starting points from the prior", state)

    inv_mass = np.ones(dim)
    eps = find_reasonable_step_size(state, model, config.init_step_size, inv_mass, 0)
    da = DualAveraging(eps, target=config.target_accept)
    windows = adaptation_windows(config.warmup)
    window_ends = {end: i for i, (_, end) in enumerate(windows)}
    window_draws = []
    div_streak = 0
    for it in range(config.warmup):
        state, acc_prob, _, divergent = _transition(state, model, da.step_size, config.n_leapfrog,
                                                    inv_mass, it, streams.ADAPT)
        div_streak = div_streak + 1 if divergent.all() else 0
        if div_streak >= 50:
            raise AdaptationError("all chains diverged for 50 consecutive warm-up iterations",
                                  state)
        da.update(float(acc_prob.mean()))
        if any(s <= it < e for s, e in windows):
            window_draws.append(state.position.copy())
        if it + 1 in window_ends:
            w = np.concatenate(window_draws)
            n = w.shape[0]
            var = w.var(axis=0, ddof=1) if n > 1 else np.ones(dim)
            inv_mass = var * n / (n + 5.0) + 1e-3 * 5.0 / (n + 5.0)
            window_draws = []
            eps = find_reasonable_step_size(state, model, da.step_size, inv_mass,
                                            window_ends[it + 1] + 1)
            da.restart(eps)
    step = da.final_step_size if config.warmup > 0 else da.step_size
    if not np.isfinite(step) or step <= 0:
        raise AdaptationError("step size adaptation failed", state)
    kernel = KernelParams(step, config.n_leapfrog, inv_mass)

    state.divergences[:] = 0
    draws = np.empty((L, config.draws, dim))
    n_acc = np.zeros(L)
    for it in range(config.draws):
        state, accepted, _ = hmc_step(state, model, kernel, it, streams.FULL_DATA)
        draws[:, it] = state.position
        n_acc += accepted
    info = {"accept_rate": (n_acc / max(config.draws, 1)).tolist(),
            "divergences": state.divergences.tolist()}
    return kernel, draws, info


def init_fold_chains(full_data_draws, K, L, rng):
    """K x L starting positions drawn uniformly with replacement from the draw bank."""
    bank = np.asarray(full_data_draws, dtype=float)
    bank = bank.reshape(-1, bank.shape[-1]) if bank.ndim > 1 else bank[:, None]
    if bank.shape[0] < 1:
        raise InvalidInputError("empty draw bank")
    idx = np.random.default_rng(rng).integers(0, bank.shape[0], size=(K, L))
    return bank[idx]


def warmup_discard(state, model, kernel, n_warmup, callback=None):
    """Advance every chain ``n_warmup`` steps, keeping only the final state.

    ``callback(iteration, state)`` is called after each step so the caller
    can collect side statistics (e.g. centering constants).
    """
    for it in range(n_warmup):
        state, _, _ = hmc_step(state, model, kernel, it, streams.FOLD_WARMUP)
        if callback is not None:
            callback(it, state)
    return state
