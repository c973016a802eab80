import numpy as np

from parcv import io
from parcv.hmc import KernelParams


def test_draw_bank_roundtrip(tmp_path):
    draws = np.random.default_rng(0).normal(size=(3, 7, 2))
    p = tmp_path / "bank.bin"
    io.write_draw_bank(p, draws, ["a", "b"])
    assert p.stat().st_size == draws.size * 8
    # little-endian row-major: the first two values are draw 0 of chain 0
    raw = np.frombuffer(p.read_bytes(), dtype="<f8")
    assert np.array_equal(raw[:2], draws[0, 0])
    back, meta = io.read_draw_bank(p)
    assert np.array_equal(back, draws)
    assert meta["param_names"] == ["a", "b"] and meta["shape"] == [3, 7, 2]


def test_draw_bank_size_mismatch(tmp_path):
    p = tmp_path / "bank.bin"
    io.write_draw_bank(p, np.zeros((2, 2, 1)), ["a"])
    p.write_bytes(p.read_bytes()[:-8])
    try:
        io.read_draw_bank(p)
    except io.InvalidInputError as exc:
        assert "expected 4" in str(exc)
    else:
        raise AssertionError("short bank accepted")


def test_kernel_roundtrip(tmp_path):
    k = KernelParams(0.3, 12, np.array([1.5, 0.25]))
    io.write_kernel(tmp_path / "k.json", k)
    back = io.read_kernel(tmp_path / "k.json")
    assert back.step_size == k.step_size and back.n_leapfrog == 12
    assert np.array_equal(back.inv_mass_diag, k.inv_mass_diag)
