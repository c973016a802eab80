import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from parcv.accum import (AccumulatorSet, BatchMeans, LogSpace, NumericFaultError, ShuffleBlocks,
                         Welford, accumulate_draws, batch_commit, batch_means_variance,
                         concat_accumulators, default_batch_size, logspace_update,
                         pooled_mean_cov, relative_batch_variance, relative_naive_variance,
                         shuffle_update, welford_stats, welford_update)
from parcv.core import InvalidInputError, UndefinedDiagnosticError


def _stream(values, c=0.0):
    acc = Welford(1, 1, c=c, diag=True)
    for v in values:
        welford_update(acc, [v])
    return acc


def test_welford_textbook():
    mean, var = welford_stats(_stream([1.0, 2.0, 3.0]))
    assert mean[0, 0] == 2.0 and var[0, 0] == 1.0


def test_welford_large_offset_with_centering():
    mean, var = welford_stats(_stream([1e9 + 1, 1e9 + 2, 1e9 + 3], c=1e9))
    assert mean[0, 0] == 1e9 + 2
    assert abs(var[0, 0] - 1) < 1e-9


def test_welford_constant_stream():
    _, var = welford_stats(_stream([4.2] * 10, c=4.2))
    assert var[0, 0] == 0.0


def test_welford_needs_two_values():
    with pytest.raises(UndefinedDiagnosticError):
        welford_stats(_stream([1.0]))


def test_welford_covariance_two_pass():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(500, 3)) @ rng.normal(size=(3, 3))
    acc = Welford(1, 3, c=x[0])
    for row in x:
        acc.update(row)
    mean, cov = welford_stats(acc)
    assert np.allclose(mean[0], x.mean(0), rtol=1e-12)
    assert np.allclose(cov[0], np.cov(x.T), rtol=1e-10)


def test_welford_merge_equals_concatenation():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(40, 2))
    a, b, both = Welford(1, 2), Welford(1, 2), Welford(1, 2)
    for row in x[:15]:
        a.update(row)
    for row in x[15:]:
        b.update(row)
    for row in x:
        both.update(row)
    m = a.merge(b)
    assert m.count == both.count
    assert np.allclose(m.a_x, both.a_x, rtol=1e-12)
    assert np.allclose(m.a_xx, both.a_xx, rtol=1e-12)


def test_pooled_mean_cov():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(3, 100, 2))
    acc = Welford(3, 2)
    for n in range(100):
        acc.update(x[:, n])
    mean, cov = pooled_mean_cov(acc)
    flat = x.reshape(-1, 2)
    assert np.allclose(mean, flat.mean(0), rtol=1e-12)
    assert np.allclose(cov, np.cov(flat.T), rtol=1e-10)


def test_logaddexp_empty_identity():
    acc = logspace_update(LogSpace(1), [0.7])
    assert acc.u_x[0] == 0.7


def test_logspace_small_sum():
    acc = LogSpace(1)
    for v in (0.1, 0.2, 0.3):
        logspace_update(acc, [np.log(v)])
    assert np.isclose(acc.u_x[0], np.log(0.6), rtol=1e-14)


def test_logspace_no_underflow():
    acc = LogSpace(1)
    for _ in range(1000):
        acc.update([np.log(1e-300)])
    assert np.isfinite(acc.u_x[0])
    assert np.isclose(acc.u_x[0], np.log(1e-300) + np.log(1000), rtol=1e-13)


@pytest.mark.parametrize("bad", [np.inf, np.nan])
def test_logspace_rejects_faults(bad):
    with pytest.raises(NumericFaultError):
        LogSpace(1).update([bad])


def test_logspace_accepts_minus_infinity():
    acc = LogSpace(1).update([-np.inf]).update([0.0])
    assert acc.u_x[0] == 0.0


def test_unit_batches_reproduce_raw_sums():
    rng = np.random.default_rng(3)
    s = rng.normal(size=(2, 30))
    bm, ls = BatchMeans(2, 1), LogSpace(2)
    for n in range(30):
        bm.update(s[:, n])
        ls.update(s[:, n])
    assert np.allclose(bm.v_x, ls.u_x, rtol=1e-14)
    assert np.allclose(bm.v_x2, ls.u_x2, rtol=1e-14)
    assert bm.a == 30


def test_batch_counts_and_truncation():
    acc = accumulate_draws(np.zeros((1, 505)), b=50)
    assert acc.batches.a == 10
    assert acc.batches.dropped == 5
    assert acc.count == 505
    assert np.isclose(acc.logspace.u_x[0], np.log(505))
    assert np.isclose(acc.batches.v_x[0], np.log(10))


def test_partial_commit_rejected():
    bm = BatchMeans(1, 5)
    bm.update([0.0])
    with pytest.raises(InvalidInputError):
        batch_commit(bm)


def test_batch_means_variance_constant():
    assert batch_means_variance(np.full((2, 5), 3.0), 10) == 0.0


def test_batch_means_variance_needs_two():
    with pytest.raises(UndefinedDiagnosticError):
        batch_means_variance(np.ones((1, 1)), 10)


def test_batch_means_variance_iid():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(4, 10_000))
    g = x.reshape(4, -1, 100).mean(-1)
    assert 0.8 <= batch_means_variance(g, 100, x.mean()) <= 1.2


def test_batch_means_variance_ar1():
    rng = np.random.default_rng(5)
    rho, N, L = 0.9, 50_000, 4
    e = rng.normal(size=(L, N)) * np.sqrt(1 - rho ** 2)
    x = np.empty((L, N))
    x[:, 0] = rng.normal(size=L)
    for n in range(1, N):
        x[:, n] = rho * x[:, n - 1] + e[:, n]
    b = int(np.sqrt(N))
    a = N // b
    g = x[:, : a * b].reshape(L, a, b).mean(-1)
    # limiting variance (1 + rho)/(1 - rho) = 19 for unit marginal variance
    assert abs(batch_means_variance(g, b) / 19 - 1) < 0.3


def test_relative_variances_match_linear_space():
    rng = np.random.default_rng(6)
    s = rng.normal(-1.0, 0.5, size=(3, 400))
    acc = accumulate_draws(s, b=20)
    f = np.exp(s).mean()
    log_f = np.log(f)
    g = np.exp(s).reshape(3, -1, 20).mean(-1)
    ref = batch_means_variance(g, 20, f) / f ** 2
    got = relative_batch_variance(acc.batches.v_x, acc.batches.v_x2, log_f, acc.batches.a, 20)
    assert np.isclose(got, ref, rtol=1e-10)
    naive = relative_naive_variance(acc.logspace.u_x2, log_f, s.size)
    assert np.isclose(naive, np.exp(s).var(ddof=1) / f ** 2, rtol=1e-10)


def test_single_block_is_full_chain():
    rng = np.random.default_rng(7)
    s = rng.normal(size=(2, 50))
    blocks = ShuffleBlocks(2, 1, 50)
    for n in range(50):
        shuffle_update(blocks, s[:, n], 0.3, 0)
    assert np.allclose(blocks.y_x[:, 0], (s - 0.3).sum(1), rtol=1e-13)
    assert np.allclose(blocks.y_x2[:, 0], ((s - 0.3) ** 2).sum(1), rtol=1e-13)


def test_perfect_centering_gives_zero_blocks():
    acc = accumulate_draws(np.full((2, 20), -1.5), c=-1.5, D=4, b=5)
    assert np.all(acc.blocks.y_x == 0) and np.all(acc.blocks.y_x2 == 0)


def test_block_sums_add_to_chain_sums():
    rng = np.random.default_rng(8)
    s = rng.normal(size=(3, 103))
    acc = accumulate_draws(s, c=0.1, D=5, b=10)
    assert np.allclose(acc.blocks.y_x.sum(1), (s - 0.1).sum(1), rtol=1e-12)
    assert [acc.blocks.block_index(n) for n in (0, 20, 21, 102)] == [0, 0, 1, 4]


@given(arrays(np.float64, st.tuples(st.integers(2, 4), st.integers(10, 200)),
              elements=st.floats(-30, 5)))
@settings(max_examples=40, deadline=None)
def test_online_equals_two_pass(draws):
    L, N = draws.shape
    acc = accumulate_draws(draws, c=draws[:, :1].mean(), b=5, D=2)
    assert np.allclose(acc.logspace.u_x, np.log(np.exp(draws).sum(1)), rtol=1e-10, atol=1e-12)
    d = draws - draws[:, :1].mean()
    assert np.allclose(acc.blocks.y_x.sum(1), d.sum(1), rtol=1e-9, atol=1e-9)
    assert np.allclose(acc.blocks.y_x2.sum(1), (d ** 2).sum(1), rtol=1e-9, atol=1e-9)


def test_merge_order_invariance():
    rng = np.random.default_rng(9)
    s = rng.normal(size=(6, 40))
    whole = accumulate_draws(s, b=10)
    parts = [accumulate_draws(s[i:i + 2], b=10) for i in (0, 2, 4)]
    merged = concat_accumulators(parts)
    assert np.array_equal(merged.logspace.u_x, whole.logspace.u_x)
    assert np.array_equal(merged.blocks.y_x, whole.blocks.y_x)
    assert np.array_equal(merged.select([4, 5]).batches.v_x, parts[2].batches.v_x)


def test_memory_does_not_grow_with_chain_length():
    short = accumulate_draws(np.zeros((2, 10)), b=5)
    long = accumulate_draws(np.zeros((2, 10_000)), b=5)
    for name in ("u_x", "u_x2", "v_x", "v_x2", "y_x", "y_x2"):
        assert np.shape(short.to_dict()[name]) == np.shape(long.to_dict()[name])


def test_too_many_draws_rejected():
    acc = AccumulatorSet(1, 2, 1, 1)
    acc.update([0.0]).update([0.0])
    with pytest.raises(InvalidInputError):
        acc.update([0.0])


def test_dump_json(tmp_path):
    acc = accumulate_draws(np.array([[-np.inf, 0.0, 1.0, 2.0]]), b=2, D=2)
    p = tmp_path / "acc.json"
    acc.dump_json(p)
    d = json.loads(p.read_text())
    assert {"u_x", "u_x2", "v_x", "v_x2", "y_x", "y_x2", "c", "count", "batches"} <= set(d)
    assert d["count"] == 4 and d["batches"] == 2


def test_default_batch_size():
    assert default_batch_size(1000, 4) == 50
    assert default_batch_size(1000, 4, "auto") == 63
    assert default_batch_size(1000, 4, 25) == 25
