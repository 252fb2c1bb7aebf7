"""
Artifact writers/readers. Every float is written with 17 significant digits.
"""

from __future__ import annotations

import csv
import io
import os
import shutil
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .. import __version__
from ..analysis import BoundReport, DisagreementReport, RegretReport
from ..dynamics import trajectory_to_csv
from ..engine import RunRecord, tracking_path_length
from .config import format_set

REGRET = "regret.csv"
TRAJECTORY = "trajectory.csv"
ESTIMATES = "estimates.csv"
MANIFEST = "manifest.txt"
BOUND = "bound_report.txt"
DISAGREEMENT = "disagreement.csv"
SWEEP = "sweep.csv"
SUMMARY = "summary.csv"

# manifest lines that legitimately differ between identical runs
VOLATILE_KEYS = ("wall_clock",)


class ArtifactError(ValueError):
    pass


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def regret_csv(rep: RegretReport) -> str:
    cum = rep.cumulative_series
    norm = rep.normalized_series
    return _csv(["t", "cum_regret", "norm_regret"], ((t + 1, cum[t], norm[t]) for t in range(rep.T)))


def estimates_csv(record: RunRecord) -> str:
    d = record.config.d
    header = (["t", "agent"] + [f"x{k + 1}" for k in range(d)] + [f"xhat{k + 1}" for k in range(d)]
              + [f"y{k + 1}" for k in range(d)])
    rows = ([t + 1, i, *record.x[t, i], *record.x_hat[t, i], *record.y[t, i]]
            for t in range(record.T) for i in range(record.n))
    return _csv(header, rows)


def disagreement_csv(rep: DisagreementReport) -> str:
    return _csv(["t", "measured", "bound"],
                ((t + 1, rep.measured[t], rep.bound[t]) for t in range(rep.measured.size)))


def kv_text(items: dict) -> str:
    return "".join(f"{k} = {fmt(v)}\n" for k, v in items.items())


def read_kv(path) -> dict:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        key, sep, value = line.partition(" = ")
        if not sep:
            raise ArtifactError(f"{path}:{lineno}: malformed line {line!r}")
        out[key] = value
    return out


def manifest(record: RunRecord, extra=None) -> dict:
    c = record.config
    etas = record.etas
    dev = np.linalg.norm(record.trajectory.noises, ord=c.mirror.norm_ord, axis=1)
    items = {"version": __version__}
    items.update({f"config.{k}": v for k, v in sorted(c.echo.items())})
    items.update({
        "seed": c.seed,
        "T": c.T,
        "n": c.n,
        "d": c.d,
        "topology": c.graph.name if c.graph is not None else "given",
        "weights": c.weights.method,
        "sigma2": record.sigma2,
        "A": ";".join(",".join(fmt(a) for a in row) for row in c.dynamics.A),
        "A_spectral_norm": c.dynamics.spectral_norm,
        "mirror_map": c.mirror.kind,
        "feasible_set": format_set(c.fset),
        "bound_set": format_set(record.bound_set) if record.bound_set is not None else "none",
        "bound_set_source": record.bound_set_source,
        "Rsq": record.constants.Rsq if record.constants is not None else "none",
        "K": record.constants.K if record.constants is not None else "none",
        "constants_source": "closed form / vertex enumeration over bound_set",
        "L": record.clip_L if record.clip_L is not None else "none",
        "L_source": record.L_source,
        "clip_count": record.clip_count,
        "schedule": c.schedule.describe(),
        "eta_1": etas[1],
        "eta_T_plus_1": etas[c.T + 1],
        "sum_eta": float(np.sum(etas[1:c.T + 1])),
        "path_length": tracking_path_length(record),
        "tracking_sum": float(np.sum(dev / etas[2:c.T + 2])),
        "hypothesis.compact": c.fset.compact,
        "hypothesis.non_expansive": c.dynamics.non_expansive,
        "record": c.record,
        "wall_clock": record.wall_clock,
    })
    if extra:
        items.update(extra)
    return items


def bound_text(rep: BoundReport) -> str:
    return kv_text(rep.as_dict())


@contextmanager
def staging(out_dir):
    """Collect files in a temp dir next to ``out_dir``; publish them on success.

    Each file is moved into place with an atomic rename. On failure nothing
    is published and the staging directory is removed.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".staging-", dir=out))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    try:
        for f in sorted(tmp.iterdir()):
            os.replace(f, out / f.name)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


def write_run(record: RunRecord, regret: RegretReport, out_dir, extra_manifest=None):
    with staging(out_dir) as tmp:
        (tmp / REGRET).write_text(regret_csv(regret))
        (tmp / TRAJECTORY).write_text(trajectory_to_csv(record.trajectory))
        if record.full:
            (tmp / ESTIMATES).write_text(estimates_csv(record))
        (tmp / MANIFEST).write_text(kv_text(manifest(record, extra_manifest)))


def read_regret(path) -> np.ndarray:
    """(T, 3) array of t, cum_regret, norm_regret."""
    rows = _read_numeric(path, ["t", "cum_regret", "norm_regret"])
    if rows.shape[0] and not np.array_equal(rows[:, 0], np.arange(1, rows.shape[0] + 1)):
        raise ArtifactError(f"{path}: rounds are not 1..T")
    return rows


def read_estimates(path, T, n, d) -> np.ndarray:
    """x_{i,t} as a (T, n, d) array."""
    header = ["t", "agent"] + [f"x{k + 1}" for k in range(d)] + [f"xhat{k + 1}" for k in range(d)] \
        + [f"y{k + 1}" for k in range(d)]
    rows = _read_numeric(path, header)
    if rows.shape[0] != T * n:
        raise ArtifactError(f"{path}: expected {T * n} rows, found {rows.shape[0]}")
    t_idx = np.repeat(np.arange(1, T + 1), n)
    a_idx = np.tile(np.arange(n), T)
    if not (np.array_equal(rows[:, 0], t_idx) and np.array_equal(rows[:, 1], a_idx)):
        raise ArtifactError(f"{path}: rows are not ordered by (t, agent)")
    return rows[:, 2:2 + d].reshape(T, n, d)


def _read_numeric(path, header) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise ArtifactError(f"missing artifact {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            got = next(reader)
        except StopIteration:
            raise ArtifactError(f"{path}: empty file") from None
        if got != header:
            raise ArtifactError(f"{path}: unexpected header {got}")
        data = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ArtifactError(f"{path}:{lineno}: expected {len(header)} fields")
            try:
                data.append([float(v) for v in row])
            except ValueError:
                raise ArtifactError(f"{path}:{lineno}: non-numeric field") from None
    arr = np.array(data, dtype=float).reshape(-1, len(header))
    if not np.all(np.isfinite(arr)):
        raise ArtifactError(f"{path}: non-finite values")
    return arr
