"""Readers and writers for draw banks, reports and plot-ready CSVs."""

import csv
import json
import os

import numpy as np

from .core import InvalidInputError
from .engine import PcvReport
from .hmc import KernelParams


def _sidecar(path):
    return os.path.splitext(path)[0] + ".json"


def write_draw_bank(path, draws, param_names):
    """Little-endian float64, row-major, plus a JSON sidecar with shape and names."""
    draws = np.ascontiguousarray(draws, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(draws.tobytes(order="C"))
    meta = {"shape": list(draws.shape), "param_names": list(param_names), "dtype": "<f8",
            "order": "C"}
    with open(_sidecar(path), "w") as fh:
        json.dump(meta, fh, indent=1)


def read_draw_bank(path):
    try:
        with open(_sidecar(path)) as fh:
            meta = json.load(fh)
        raw = np.fromfile(path, dtype="<f8")
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"cannot read draw bank {path}: {exc}") from None
    shape = tuple(meta["shape"])
    if raw.size != int(np.prod(shape)):
        raise InvalidInputError(f"{path}: expected {int(np.prod(shape))} values, found {raw.size}")
    return raw.reshape(shape), meta


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"cannot read {path}: {exc}") from None


def write_kernel(path, kernel):
    write_json(path, kernel.to_dict())


def read_kernel(path):
    return KernelParams.from_dict(read_json(path))


def write_report(path, report):
    with open(path, "w") as fh:
        fh.write(report.to_json())


def read_report(path):
    d = read_json(path)
    try:
        return PcvReport.from_dict(d)
    except (KeyError, TypeError) as exc:
        raise InvalidInputError(f"{path}: not a report ({exc})") from None


def _fmt(v):
    if v is None:
        return ""
    return repr(float(v))


def write_progressive_csv(path, report):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PcvReport.SNAPSHOT_COLUMNS)
        for row in report.progressive_snapshots():
            w.writerow([row[0]] + [_fmt(v) for v in row[1:]])


def read_progressive_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    out = []
    for r in body:
        out.append({h: (int(v) if h == "iteration" else (float(v) if v else None))
                    for h, v in zip(header, r)})
    return out


def write_benchmark_csv(path, report):
    """First line: observed R-hat max, D, R; then one row per replicate."""
    cfg = report.config
    with open(path, "w", newline="") as fh:
        fh.write(f"# observed_rhat_max={_fmt(report.rhat_max)},D={cfg['blocks']},"
                 f"R={cfg['bench_draws']}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replicate", "rhat_max_replicate"])
        for i, v in enumerate(report.benchmark):
            w.writerow([i, _fmt(v)])


def read_benchmark_csv(path):
    with open(path, newline="") as fh:
        first = fh.readline().lstrip("#").strip()
        meta = dict(item.split("=") for item in first.split(","))
        rows = list(csv.reader(fh))[1:]
    values = np.array([float(v) if v else np.nan for _, v in rows])
    return float(meta["observed_rhat_max"]), int(meta["D"]), int(meta["R"]), values
