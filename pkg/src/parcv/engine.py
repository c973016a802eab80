"""The parallel CV workflow: full-data fits, fold chains, online summaries, report.

Chains are grouped into fixed chunks of whole folds (the chunking depends
only on the configuration, never on the thread budget).  Each chunk runs as
one task that owns its chain states and accumulators; chunk results are
merged in a fixed order, so the report is bit-identical for any number of
threads.
"""

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import streams
from .accum import (AccumulatorSet, Welford, concat_accumulators, concat_welford,
                    default_batch_size, pooled_mean_cov, welford_rows)
from .core import InvalidInputError, UndefinedDiagnosticError, UnsupportedScoreError
from .diagnostics import (benchmark_verdict, ess_overall, parameter_summary, rhat_from_sums,
                          rhat_max, shuffle_benchmark)
from .hmc import AdaptConfig, ChainState, KernelParams, adapt_full_data, hmc_step, init_fold_chains
from .scoring import (ScoreError, delta_method_mcse, dss_fold_score, epistemic_se,
                      hs_fold_score, logs_fold_summary, normalize_score, selection_probability)


@dataclass
class RunConfig:
    chains: int = 4
    iters: int = 1000
    warmup: int = 100
    batch_size: object = None      # None -> 50, "auto" -> floor(sqrt(N L)), or an int
    blocks: int = 5
    bench_draws: int = 500
    seed: int = 0
    score: str = "logs"
    checkpoint_every: int = 0      # 0 -> a single snapshot at the end
    thread_budget: int = 1
    n_leapfrog: int = 16
    fd_chains: int = 4
    fd_warmup: int = 1000
    fd_draws: int = 1000
    target_accept: float = 0.8
    quantile: float = 0.99
    chains_per_task: int = 256
    keep_draws: bool = False

    def __post_init__(self):
        self.score = normalize_score(self.score)
        if self.chains < 2:
            raise InvalidInputError("need at least 2 chains per fold for R-hat")
        if self.iters < 1 or self.warmup < 0:
            raise InvalidInputError("iters must be positive and warmup non-negative")
        if self.checkpoint_every < 0:
            raise InvalidInputError("checkpoint_every must be non-negative")
        if self.thread_budget < 1:
            raise InvalidInputError("thread_budget must be at least 1")
        if self.blocks < 1 or self.bench_draws < 1:
            raise InvalidInputError("blocks and bench_draws must be positive")
        b = self.b
        if self.iters < b:
            raise InvalidInputError(f"iters ({self.iters}) must be at least the batch size ({b})")

    @property
    def b(self):
        return default_batch_size(self.iters, self.chains, self.batch_size)

    def checkpoints(self):
        if self.checkpoint_every == 0:
            return [self.iters]
        pts = list(range(self.checkpoint_every, self.iters + 1, self.checkpoint_every))
        if not pts or pts[-1] != self.iters:
            pts.append(self.iters)
        return pts

    def adapt_config(self, model_id):
        return AdaptConfig(chains=self.fd_chains, warmup=self.fd_warmup, draws=self.fd_draws,
                           n_leapfrog=self.n_leapfrog, target_accept=self.target_accept,
                           seed=self.seed, model_id=model_id)

    # settings that change how the work is scheduled but never the results
    EXECUTION_ONLY = ("thread_budget", "chains_per_task", "keep_draws")

    def to_dict(self):
        return asdict(self)

    def result_dict(self):
        """The settings that determine the report, as recorded in it."""
        return {k: v for k, v in asdict(self).items() if k not in self.EXECUTION_ONLY}


@dataclass
class FullDataResult:
    kernel: KernelParams
    draws: np.ndarray            # (chains, draws, dim)
    diagnostics: dict
    model_id: int = 0


def run_full_data(model, config, model_id=0):
    """Step 1: adapt and sample the full-data posterior."""
    kernel, draws, info = adapt_full_data(model, config.adapt_config(model_id))
    diag = {"parameters": parameter_summary(draws, list(model.param_names)), **info}
    return FullDataResult(kernel, draws, diag, model_id)


# ---------------------------------------------------------------- chunk tasks

@dataclass
class _Chunk:
    model_index: int
    folds: list
    rows: np.ndarray             # global chain rows (fold * L + chain)


@dataclass
class _ChunkResult:
    snapshots: dict              # iteration -> (AccumulatorSet, aux Welford or None, divergences)
    divergences: np.ndarray
    faults: np.ndarray
    draws: np.ndarray = None


def _make_chunks(n_models, K, L, chains_per_task):
    folds_per = max(1, chains_per_task // L)
    chunks = []
    for m in range(n_models):
        for start in range(0, K, folds_per):
            folds = list(range(start, min(K, start + folds_per)))
            rows = np.concatenate([np.arange(k * L, (k + 1) * L) for k in folds])
            chunks.append(_Chunk(m, folds, rows))
    return chunks


def _aux_value(model, score, theta, fold, keys, iteration, phase, t_max):
    """Per-draw statistic for HS (d1, d2 + d1^2) or DSS (one predictive draw)."""
    if score == "hs":
        d1, d2 = model.pred_derivs(theta, fold)
        return np.concatenate([d1, d2 + d1 * d1], axis=1)
    z = streams.normals(keys, iteration, phase, streams.PREDICTIVE, t_max)
    return model.pred_sample(theta, fold, z)


def _clean(s):
    """Replace NaN and +inf log values by -inf; return (clean, fault mask)."""
    bad = np.isnan(s) | (s == np.inf)
    if bad.any():
        s = np.where(bad, -np.inf, s)
    return s, bad


def _fold_means(values, L):
    """Mean over each fold's L consecutive rows, broadcast back to rows."""
    v = values.reshape(-1, L, *values.shape[1:])
    return np.repeat(v.mean(axis=1), L, axis=0)


def _run_chunk(model, kernel, positions, fold, keys, cfg, checkpoints):
    L, N = cfg.chains, cfg.iters
    score = cfg.score
    C = positions.shape[0]
    aux_dim = 0
    t_max = getattr(model, "t_max", 0)
    if score == "hs":
        aux_dim = 2 * t_max
    elif score == "dss":
        aux_dim = t_max
    state = ChainState.start(model, positions, fold, keys)
    faults = np.zeros(C, dtype=bool)

    # warm-up: advance and collect centering constants
    sum_s = np.zeros(C)
    n_finite = np.zeros(C)
    sum_aux = np.zeros((C, aux_dim))
    for it in range(cfg.warmup):
        state, _, _ = hmc_step(state, model, kernel, it, streams.FOLD_WARMUP)
        s, _ = _clean(model.log_pred(state.position, fold))
        ok = np.isfinite(s)
        sum_s += np.where(ok, s, 0.0)
        n_finite += ok
        if aux_dim:
            sum_aux += _aux_value(model, score, state.position, fold, keys, it,
                                  streams.FOLD_WARMUP, t_max)
    if cfg.warmup:
        tot = sum_s.reshape(-1, L).sum(1)
        cnt = n_finite.reshape(-1, L).sum(1)
        c_fold = np.where(cnt > 0, tot / np.maximum(cnt, 1), 0.0)
        c = np.repeat(c_fold, L)
        c_aux = _fold_means(sum_aux / cfg.warmup, L) if aux_dim else None
    else:
        c = np.zeros(C)
        c_aux = np.zeros((C, aux_dim)) if aux_dim else None

    acc = AccumulatorSet(C, N, cfg.b, cfg.blocks, c)
    aux = Welford(C, aux_dim, c_aux, diag=(score == "hs")) if aux_dim else None
    state.divergences[:] = 0
    draws = np.empty((C, N)) if cfg.keep_draws else None
    snapshots = {}
    cp = set(checkpoints)
    for it in range(N):
        state, _, _ = hmc_step(state, model, kernel, it, streams.FOLD_SAMPLING)
        s, bad = _clean(model.log_pred(state.position, fold))
        faults |= bad
        acc.update(s)
        if aux is not None:
            aux.update(_aux_value(model, score, state.position, fold, keys, it,
                                  streams.FOLD_SAMPLING, t_max))
        if draws is not None:
            draws[:, it] = s
        if it + 1 in cp:
            snapshots[it + 1] = (acc.snapshot(), None if aux is None else aux.copy(),
                                 state.divergences.copy())
    return _ChunkResult(snapshots, state.divergences.copy(), faults, draws)


# ---------------------------------------------------------------- summaries

def _model_fold_stats(acc, aux, div, faults, model, cfg, t):
    """Per-fold scores and diagnostics of one model at iteration t."""
    K, L = model.K, cfg.chains
    b = cfg.b
    a = acc.batches.a
    scores, rhats, ws = [], [], []
    ess_fold = []
    flags = {}
    y_test, valid = model.test_values() if cfg.score != "logs" else (None, None)
    for k in range(K):
        rows = slice(k * L, (k + 1) * L)
        fs = logs_fold_summary(k, acc.logspace.u_x[rows], acc.logspace.u_x2[rows],
                               acc.batches.v_x[rows], acc.batches.v_x2[rows], t, a, b)
        if faults[rows].any():
            fs.flags.append("numeric-fault")
        if cfg.score == "hs":
            n, a_x, _, c0 = welford_rows(aux, rows).pooled()
            m = a_x / n + c0
            T = m.shape[0] // 2
            fs.estimate = -hs_fold_score(m[:T], m[T:], valid[k][:T])
        elif cfg.score == "dss":
            v = valid[k]
            try:
                mean, cov = pooled_mean_cov(welford_rows(aux, rows))
                fs.estimate, ridged = dss_fold_score(mean[v], cov[np.ix_(v, v)], y_test[k][v])
                if ridged:
                    fs.flags.append("ridge")
            except (ScoreError, UndefinedDiagnosticError):
                fs.estimate = float("nan")
                fs.flags.append("score-error")
        y = acc.blocks.y_x[rows].sum(1)
        y2 = acc.blocks.y_x2[rows].sum(1)
        try:
            w, _, r = rhat_from_sums(y, y2, t)
        except (UndefinedDiagnosticError, InvalidInputError):
            w, r = 0.0, float("nan")
        if not np.isfinite(r):
            r = float("nan")
        rhats.append(r)
        ws.append(w)
        if np.isfinite(fs.mc_rel_var) and fs.mc_rel_var > 0 and np.isfinite(fs.naive_rel_var):
            ess_fold.append(L * t * fs.naive_rel_var / fs.mc_rel_var)
        else:
            ess_fold.append(float("nan"))
        failed = bool(np.all(div[rows] > t / 2))
        if failed:
            fs.flags.append("divergent")
        flags[k] = failed or "numeric-fault" in fs.flags or "score-error" in fs.flags
        scores.append(fs)
    return scores, np.array(rhats), np.array(ess_fold), flags


def _finite_or_none(x):
    return None if x is None or not np.isfinite(x) else float(x)


def _summarize(states, models, cfg, t, final):
    per_model = [_model_fold_stats(*st, m, cfg, t) for st, m in zip(states, models)]
    K = models[0].K
    excluded = sorted({k for _, _, _, flags in per_model for k, bad in flags.items() if bad})
    keep = [k for k in range(K) if k not in excluded]
    out = {"iteration": t, "excluded_folds": excluded}
    fold_est = [np.array([fs.estimate for fs in scores]) for scores, _, _, _ in per_model]
    out["fold_scores"] = [[fs.to_dict() for fs in scores] for scores, _, _, _ in per_model]
    out["s_hat"] = [float(est[keep].sum()) for est in fold_est]
    if len(models) == 2:
        d = fold_est[0][keep] - fold_est[1][keep]
        out["fold_deltas"] = (fold_est[0] - fold_est[1]).tolist()
        out["delta_hat"] = float(d.sum())
        contrib = d
    else:
        out["fold_deltas"] = None
        out["delta_hat"] = None
        contrib = fold_est[0][keep]
    try:
        out["epistemic_se"] = epistemic_se(contrib)
    except InvalidInputError:
        out["epistemic_se"] = float("nan")
    out["prob_a_better"] = None
    if len(models) == 2:
        try:
            out["prob_a_better"] = selection_probability(out["delta_hat"], contrib)
        except InvalidInputError:
            out["prob_a_better"] = float("nan")
    kept_scores = [[scores[k] for k in keep] for scores, _, _, _ in per_model]
    if cfg.score == "logs":
        out["mcse"] = delta_method_mcse(kept_scores[0], kept_scores[1] if len(models) == 2
                                        else None, cfg.chains, t)
    else:
        out["mcse"] = None
    naive = [fs.naive_rel_var for ss in kept_scores for fs in ss]
    mc = [fs.mc_rel_var for ss in kept_scores for fs in ss]
    try:
        out["ess"] = ess_overall(naive, mc, cfg.chains, t)
    except UndefinedDiagnosticError:
        out["ess"] = float("nan")
    out["ess_fold"] = [e.tolist() for _, _, e, _ in per_model]
    out["rhat"] = [r.tolist() for _, r, _, _ in per_model]
    all_r = np.concatenate([r for _, r, _, _ in per_model])
    try:
        out["rhat_max"], out["rhat_undefined"] = rhat_max(all_r)
    except UndefinedDiagnosticError:
        out["rhat_max"], out["rhat_undefined"] = float("nan"), int(all_r.size)
    if final:
        L, D = cfg.chains, cfg.blocks
        yx = np.concatenate([st[0].blocks.y_x.reshape(-1, L, D) for st in states])
        yx2 = np.concatenate([st[0].blocks.y_x2.reshape(-1, L, D) for st in states])
        bench = shuffle_benchmark(yx, yx2, t, cfg.bench_draws, cfg.seed)
        out["benchmark"] = bench.values.tolist()
        try:
            out["verdict"] = benchmark_verdict(out["rhat_max"], bench, cfg.quantile).to_dict()
        except InvalidInputError:
            out["verdict"] = None
        out["dropped_batch_draws"] = int(states[0][0].batches.dropped)
        out["batches"] = int(states[0][0].batches.a)
    return out


# ---------------------------------------------------------------- report

@dataclass
class PcvReport:
    config: dict
    models: list
    K: int
    kernels: list
    fold_scores: list
    s_hat: list
    delta_hat: object
    fold_deltas: object
    mcse: object
    epistemic_se: float
    prob_a_better: object
    ess: float
    ess_fold: list
    rhat: list
    rhat_max: float
    rhat_undefined: int
    benchmark: list
    verdict: object
    divergences: list
    excluded_folds: list
    dropped_batch_draws: int
    batches: int
    snapshots: list = field(default_factory=list)

    SNAPSHOT_COLUMNS = ("iteration", "delta_hat", "mcse", "epistemic_se", "prob_a_better",
                        "ess", "rhat_max")

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def progressive_snapshots(self):
        """One row per checkpoint: the columns of SNAPSHOT_COLUMNS."""
        return [tuple(row[c] for c in self.SNAPSHOT_COLUMNS) for row in self.snapshots]

    @property
    def failed_folds(self):
        return list(self.excluded_folds)


def progressive_snapshots(report):
    return report.progressive_snapshots()


def _check_models(models, cfg):
    if not 1 <= len(models) <= 2:
        raise InvalidInputError("run_pcv takes one or two models")
    for m in models:
        if cfg.score == "hs" and not m.supports_hs:
            raise UnsupportedScoreError(f"{m.name} does not supply predictive derivatives (HS)")
        if cfg.score == "dss" and not m.supports_dss:
            raise UnsupportedScoreError(f"{m.name} does not supply predictive draws (DSS)")
    K = models[0].K
    for m in models[1:]:
        if m.K != K or not np.array_equal(m.folds.test_index, models[0].folds.test_index):
            raise InvalidInputError("models must share the same fold assignment")
    if len(models) == 2 and K < 2:
        raise InvalidInputError("comparing models needs K >= 2 folds")
    models[0].folds.validate()


def run_pcv(models, config, full_data=None, model_ids=None):
    """Steps 2 to 4: fold chains for one or two models and the assembled report.

    ``full_data`` is a list of FullDataResult (fitted here when omitted).
    ``model_ids`` key the random streams; equal ids give equal streams.
    """
    models = list(models) if isinstance(models, (list, tuple)) else [models]
    cfg = config
    _check_models(models, cfg)
    model_ids = list(range(len(models))) if model_ids is None else list(model_ids)
    if full_data is None:
        full_data = [run_full_data(m, cfg, mid) for m, mid in zip(models, model_ids)]
    K, L = models[0].K, cfg.chains

    starts = []
    for m, fd, mid in zip(models, full_data, model_ids):
        rng = streams.generator(cfg.seed, mid, streams.INIT, 1)
        starts.append(init_fold_chains(fd.draws, K, L, rng).reshape(K * L, -1))
    folds_all = np.repeat(np.arange(K), L)
    chains_all = np.tile(np.arange(L), K)
    chunks = _make_chunks(len(models), K, L, cfg.chains_per_task)
    checkpoints = cfg.checkpoints()

    def task(ch):
        m = models[ch.model_index]
        keys = streams.chain_keys(cfg.seed, model_ids[ch.model_index], folds_all[ch.rows],
                                  chains_all[ch.rows])
        return _run_chunk(m, full_data[ch.model_index].kernel, starts[ch.model_index][ch.rows],
                          folds_all[ch.rows], keys, cfg, checkpoints)

    if cfg.thread_budget == 1:
        results = [task(ch) for ch in chunks]
    else:
        with ThreadPoolExecutor(max_workers=cfg.thread_budget) as pool:
            results = list(pool.map(task, chunks))

    def merged(t):
        states = []
        for mi in range(len(models)):
            parts = [r for ch, r in zip(chunks, results) if ch.model_index == mi]
            acc = concat_accumulators([p.snapshots[t][0] for p in parts])
            aux = None if parts[0].snapshots[t][1] is None else \
                concat_welford([p.snapshots[t][1] for p in parts])
            div = np.concatenate([p.snapshots[t][2] for p in parts])
            faults = np.concatenate([p.faults for p in parts])
            states.append((acc, aux, div, faults))
        return states

    snaps = []
    final = None
    for t in checkpoints:
        summary = _summarize(merged(t), models, cfg, t, final=(t == cfg.iters))
        snaps.append({c: summary.get(c) for c in PcvReport.SNAPSHOT_COLUMNS if c != "iteration"}
                     | {"iteration": t})
        if t == cfg.iters:
            final = summary
    if final["delta_hat"] is None:
        for row in snaps:
            row["delta_hat"] = None
    divergences = [np.concatenate([r.divergences for ch, r in zip(chunks, results)
                                   if ch.model_index == mi]).reshape(K, L).tolist()
                   for mi in range(len(models))]
    report = PcvReport(
        config=cfg.result_dict(),
        models=[{"name": m.name, "model_id": mid, "dim": m.dim}
                for m, mid in zip(models, model_ids)],
        K=K,
        kernels=[fd.kernel.to_dict() for fd in full_data],
        snapshots=snaps,
        divergences=divergences,
        **{k: final[k] for k in ("fold_scores", "s_hat", "delta_hat", "fold_deltas", "mcse",
                                 "epistemic_se", "prob_a_better", "ess", "ess_fold", "rhat",
                                 "rhat_max", "rhat_undefined", "benchmark", "verdict",
                                 "excluded_folds", "dropped_batch_draws", "batches")},
    )
    if cfg.keep_draws:
        report.draws = [np.concatenate([r.draws for ch, r in zip(chunks, results)
                                        if ch.model_index == mi]).reshape(K, L, -1)
                        for mi in range(len(models))]
    return report


def run_model_pair_masked(model_family, mask_a, mask_b, config, full_data=None,
                          shared_streams=True):
    """Compare two nested models given by covariate masks over one model family.

    With ``shared_streams`` both models use the same random streams, so equal
    masks give exactly zero fold differences.
    """
    mask_a = np.asarray(mask_a, dtype=float)
    mask_b = np.asarray(mask_b, dtype=float)
    if mask_a.shape != mask_b.shape:
        raise InvalidInputError("masks must have the same length")
    models = [model_family.select(mask_a), model_family.select(mask_b)]
    ids = [0, 0] if shared_streams else [0, 1]
    return run_pcv(models, config, full_data=full_data, model_ids=ids)

