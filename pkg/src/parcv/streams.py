"""Counter-based random streams.

Every random number used by a chain is a pure function of
``(seed, model_id, fold, chain)`` (the key) and ``(iteration, phase,
purpose, block)`` (the counter).  The generator is Philox4x64-10, the same
bijection numpy's ``Philox`` bit generator uses, vectorized here over many
keys at once so that a batch of chains can draw its momenta in one call.
Results therefore do not depend on how chains are grouped into tasks.
"""

import numpy as np
from scipy.special import ndtri

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_LO32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)

# phases
ADAPT, FULL_DATA, FOLD_WARMUP, FOLD_SAMPLING, BENCHMARK = 0, 1, 2, 3, 4
# purposes
MOMENTUM, ACCEPT, PREDICTIVE, INIT, STEPSIZE = 0, 1, 2, 3, 4

_U53 = 1.0 / 9007199254740992.0  # 2**-53


def _mulhilo(a, b):
    lo = a * b
    a_lo, a_hi = a & _LO32, a >> _S32
    b_lo, b_hi = b & _LO32, b >> _S32
    t = a_lo * b_lo
    k = t >> _S32
    t = a_hi * b_lo + k
    w1 = t & _LO32
    w2 = t >> _S32
    t = a_lo * b_hi + w1
    hi = a_hi * b_hi + w2 + (t >> _S32)
    return hi, lo


def philox4x64(counter, key, rounds=10):
    """Philox4x64 block function.

    ``counter`` has shape (..., 4) and ``key`` shape (..., 2); they broadcast
    against each other.  Returns uint64 words of shape (..., 4).
    """
    counter = np.asarray(counter, dtype=np.uint64)
    key = np.asarray(key, dtype=np.uint64)
    shape = np.broadcast_shapes(counter.shape[:-1], key.shape[:-1])
    x0, x1, x2, x3 = (np.broadcast_to(counter[..., i], shape).copy() for i in range(4))
    k0 = np.broadcast_to(key[..., 0], shape).copy()
    k1 = np.broadcast_to(key[..., 1], shape).copy()
    with np.errstate(over="ignore"):
        for r in range(rounds):
            if r:
                k0 = k0 + _W0
                k1 = k1 + _W1
            hi0, lo0 = _mulhilo(_M0, x0)
            hi1, lo1 = _mulhilo(_M1, x2)
            x0, x1, x2, x3 = hi1 ^ x1 ^ k0, lo1, hi0 ^ x3 ^ k1, lo0
    return np.stack([x0, x1, x2, x3], axis=-1)


def chain_keys(seed, model_id, folds, chains):
    """Philox keys for a set of chains, shape (C, 2)."""
    folds = np.asarray(folds, dtype=np.uint64)
    chains = np.asarray(chains, dtype=np.uint64)
    folds, chains = np.broadcast_arrays(folds, chains)
    k0 = np.full(folds.shape, np.uint64(seed & 0xFFFFFFFFFFFFFFFF), dtype=np.uint64)
    k1 = (np.uint64(model_id) << np.uint64(48)) | (folds << np.uint64(24)) | chains
    return np.stack([k0, k1], axis=-1)


def uniforms_many(keys, iteration, phase, requests):
    """Several uniform draws in one Philox call.

    ``requests`` is a list of ``(purpose, n)``; the result is a list of (C, n)
    arrays identical to separate ``uniforms`` calls.
    """
    keys = np.asarray(keys, dtype=np.uint64)
    sizes = [-(-n // 4) for _, n in requests]
    counter = np.zeros((sum(sizes), 4), dtype=np.uint64)
    counter[:, 0] = iteration
    counter[:, 1] = phase
    row = 0
    for (purpose, _), nb in zip(requests, sizes):
        counter[row:row + nb, 2] = purpose
        counter[row:row + nb, 3] = np.arange(nb, dtype=np.uint64)
        row += nb
    words = philox4x64(counter[None, :, :], keys[:, None, :]).reshape(keys.shape[0], -1)
    out = []
    row = 0
    for (_, n), nb in zip(requests, sizes):
        w = words[:, 4 * row:4 * row + n]
        out.append(((w >> np.uint64(11)).astype(np.float64) + 0.5) * _U53)
        row += nb
    return out


def uniforms(keys, iteration, phase, purpose, n):
    """Open-interval uniforms, shape (C, n), one row per key."""
    return uniforms_many(keys, iteration, phase, [(purpose, n)])[0]


def normals(keys, iteration, phase, purpose, n):
    """Standard normals by inversion, shape (C, n)."""
    return ndtri(uniforms(keys, iteration, phase, purpose, n))


def generator(seed, *words):
    """A numpy Generator on a Philox stream keyed by ``seed`` and ``words``.

    Used for one-off draws (initial positions, fold assignment) where a
    sequential stream is convenient.
    """
    tag = 0
    for w in words:
        tag = (tag * 1000003 + int(w) + 1) & 0xFFFFFFFFFFFFFFFF
    return np.random.Generator(np.random.Philox(key=[seed & 0xFFFFFFFFFFFFFFFF, tag]))
