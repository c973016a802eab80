"""A scikit-learn style front end to run_pcv.

``ParallelCV`` holds the run settings as constructor parameters, so
``get_params`` / ``set_params`` / ``clone`` behave as usual.  ``fit`` takes
models rather than arrays: a model already carries its data and folds.
"""

from dataclasses import fields

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .engine import RunConfig, run_full_data, run_pcv


class ParallelCV(BaseEstimator):
    """Brute-force CV of one model, or of a pair of candidate models.

    After ``fit``: ``report_`` (PcvReport), ``full_data_`` (one FullDataResult
    per model), ``delta_hat_`` and ``prob_a_better_`` (None for a single
    model), ``s_hat_`` and ``verdict_``.
    """

    def __init__(self, chains=4, iters=1000, warmup=100, batch_size=None, blocks=5,
                 bench_draws=500, seed=0, score="logs", checkpoint_every=0, thread_budget=1,
                 n_leapfrog=16, fd_chains=4, fd_warmup=1000, fd_draws=1000,
                 target_accept=0.8, quantile=0.99, chains_per_task=256):
        self.chains = chains
        self.iters = iters
        self.warmup = warmup
        self.batch_size = batch_size
        self.blocks = blocks
        self.bench_draws = bench_draws
        self.seed = seed
        self.score = score
        self.checkpoint_every = checkpoint_every
        self.thread_budget = thread_budget
        self.n_leapfrog = n_leapfrog
        self.fd_chains = fd_chains
        self.fd_warmup = fd_warmup
        self.fd_draws = fd_draws
        self.target_accept = target_accept
        self.quantile = quantile
        self.chains_per_task = chains_per_task

    def run_config(self):
        names = {f.name for f in fields(RunConfig)}
        return RunConfig(**{k: v for k, v in self.get_params().items() if k in names})

    def fit(self, model_a, model_b=None):
        cfg = self.run_config()
        models = [model_a] if model_b is None else [model_a, model_b]
        self.full_data_ = [run_full_data(m, cfg, i) for i, m in enumerate(models)]
        self.report_ = run_pcv(models, cfg, full_data=self.full_data_)
        self.s_hat_ = self.report_.s_hat
        self.delta_hat_ = self.report_.delta_hat
        self.prob_a_better_ = self.report_.prob_a_better
        self.verdict_ = self.report_.verdict
        return self

    def summary(self):
        from .cli import format_report
        check_is_fitted(self, "report_")
        return format_report(self.report_)
