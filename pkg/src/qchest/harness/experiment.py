"""
Seeded Monte-Carlo trials and sweeps over (SNR, bits, training length).

A trial samples a channel, sends ZC training, quantizes, splits the
measurements into estimation and CV parts, runs the greedy estimator and
scores the reconstructed channel by its normalized squared error.
"""
from __future__ import annotations

import csv
import hashlib
import itertools
import logging
import math
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from functools import lru_cache
from pathlib import Path

import numpy as np

from ..channel import (ChannelInstance, GridSpec, SystemDims, build_dictionaries,
                       reconstruct_channel, sample_channel, snap_to_grid)
from ..estimator import SolveTrace, default_max_support, fcfgs_cv, split_estimation_cv
from ..measurement import (SensingOperator, agc_input_std, build_training,
                           design_quantizer, noisy_measurements, observe, select_zc_root)
from ..oracles import DenseProblem, dense_sensing, dense_split, unquantized_map
from .config import ExperimentConfig, format_bits

__all__ = [
    "ResultRow",
    "nmse",
    "trial_seed",
    "run_trial",
    "run_sweep",
    "summarize",
    "write_trace",
    "trace_filename",
    "cell_label",
    "RESULT_COLUMNS",
    "SUMMARY_COLUMNS",
    "TIMING_COLUMNS",
]

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = ("cell", "snr_db", "bits", "n_train", "mean_nmse", "se", "trials")
TIMING_COLUMNS = ("wall_ms",)


@dataclass(frozen=True)
class ResultRow:
    snr_db: float
    bits: float
    n_train: int
    trial: int
    seed: int
    nmse: float
    iterations: int
    halt_reason: str
    wall_ms: float

    def csv_fields(self) -> list[str]:
        return [format(self.snr_db, "g"), format_bits(self.bits), str(self.n_train),
                str(self.trial), str(self.seed), repr(float(self.nmse)),
                str(self.iterations), self.halt_reason, f"{self.wall_ms:.3f}"]


RESULT_COLUMNS = tuple(f.name for f in fields(ResultRow))


def nmse(h_hat: np.ndarray, h_true: np.ndarray) -> float:
    """``||h_hat - h_true||_F^2 / ||h_true||_F^2``."""
    h_hat, h_true = np.asarray(h_hat), np.asarray(h_true)
    if h_hat.shape != h_true.shape:
        raise ValueError(f"shape mismatch {h_hat.shape} vs {h_true.shape}")
    ref = float(np.vdot(h_true, h_true).real)
    if ref == 0:
        raise ValueError("true channel is identically zero")
    err = h_hat - h_true
    return float(np.vdot(err, err).real) / ref


def trial_seed(base_seed: int, snr_db: float, bits, n_train: int, trial: int) -> int:
    """63-bit seed hashed from the full cell/trial coordinate."""
    key = f"{int(base_seed)}|{float(snr_db)!r}|{format_bits(bits)}|{int(n_train)}|{int(trial)}"
    digest = hashlib.blake2b(key.encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


@lru_cache(maxsize=16)
def _dictionaries(dims: SystemDims, grid: GridSpec, rolloff: float):
    return build_dictionaries(dims, grid, rolloff)


@lru_cache(maxsize=64)
def _zc_root(root, n_users: int, n_taps: int, n_train: int, cv_slots: int) -> int:
    if root == "auto":
        return select_zc_root(n_users, n_taps, n_train, cv_slots)
    return int(root)


def _draw_channel(config: ExperimentConfig, seed) -> ChannelInstance:
    dims = config.system_dims()
    channel = sample_channel(seed, dims, config.dims.rolloff)
    if config.mc.on_grid:
        channel = snap_to_grid(channel, _dictionaries(dims, config.grid_spec(), config.dims.rolloff))
    return channel


def run_trial(config: ExperimentConfig, snr_db: float, bits, n_train: int, seed: int,
              trial: int = 0, *, return_trace: bool = False):
    """One Monte-Carlo trial; deterministic in ``seed``.

    Estimator failures are reported through ``halt_reason`` (with a NaN
    NMSE) instead of being raised.  With ``return_trace`` the result is
    ``(row, trace)``.
    """
    start = time.perf_counter()
    trace = SolveTrace(halt_reason="error")
    try:
        value, trace = _solve_trial(config, snr_db, bits, n_train, seed)
        halt = trace.halt_reason
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        log.warning("trial seed=%d failed: %s", seed, exc)
        value, halt = math.nan, f"error:{type(exc).__name__}"
    wall_ms = (time.perf_counter() - start) * 1e3
    row = ResultRow(float(snr_db), bits, int(n_train), int(trial), int(seed), value,
                    trace.iterations if trace.records else 0, halt, wall_ms)
    return (row, trace) if return_trace else row


def _solve_trial(config: ExperimentConfig, snr_db, bits, n_train, seed):
    dims = config.system_dims()
    dicts = _dictionaries(dims, config.grid_spec(), config.dims.rolloff)
    channel_seed, noise_seed = np.random.SeedSequence(int(seed)).spawn(2)
    channel = _draw_channel(config, channel_seed)
    snr = 10.0 ** (snr_db / 10.0)
    cv_slots = config.cv_slots
    root = _zc_root(config.train.zc_root, dims.n_users, dims.n_taps, n_train, cv_slots)
    train = build_training(dims.n_users, dims.n_taps, n_train, snr, root)
    solver = config.solver
    n_est = dims.n_antennas * (n_train - cv_slots)
    max_support = solver.max_support or default_max_support(
        dicts.size, n_est, dims.n_antennas, dims.total_paths)

    def score(coeffs):
        return nmse(reconstruct_channel(coeffs, dicts), channel.taps)

    if math.isinf(bits):
        y = noisy_measurements(channel, train, noise_seed)
        full = DenseProblem(dense_sensing(dicts, train, solver.dense_cap), y=y, cap=solver.dense_cap)
        est, cv = dense_split(full, dims.n_antennas, n_train, cv_slots)
        x_hat, trace = unquantized_map(est, max_support, cv, prior_weight=solver.prior_weight,
                                       nmse=score)
    else:
        quantizer = design_quantizer(int(bits), agc_input_std(snr, dims.n_users),
                                     config.quantizer.step)
        obs = observe(channel, train, quantizer, noise_seed)
        op = SensingOperator.from_parts(dicts, train)
        est, cv = split_estimation_cv(obs, op, cv_slots, prior_weight=solver.prior_weight)
        x_hat, trace = fcfgs_cv(est, cv, max_support, nmse=score, method=solver.method,
                                tol=solver.tol, max_iter=solver.max_inner)
    return score(x_hat.coeffs), trace


def write_trace(trace: SolveTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SolveTrace.COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in trace.rows():
            writer.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                             for k, v in row.items()})


def _cells(config: ExperimentConfig):
    return list(itertools.product(config.train.snr_db, config.quantizer.bits,
                                  config.train.n_train))


def cell_label(snr_db, bits, n_train) -> str:
    return f"snr={format(float(snr_db), 'g')},b={format_bits(bits)},n={int(n_train)}"


def trace_filename(snr_db, bits, n_train) -> str:
    return f"trace_snr{format(float(snr_db), 'g')}_b{format_bits(bits)}_n{int(n_train)}.csv"


def _run_job(args):
    config, snr_db, bits, n_train, trial, want_trace = args
    seed = trial_seed(config.mc.base_seed, snr_db, bits, n_train, trial)
    return run_trial(config, snr_db, bits, n_train, seed, trial, return_trace=want_trace)


def summarize(rows) -> list[dict]:
    """Per-cell mean NMSE and its standard error; failed trials excluded."""
    groups: dict[tuple, list[float]] = {}
    for r in rows:
        groups.setdefault((r.snr_db, r.bits, r.n_train), [])
        if math.isfinite(r.nmse):
            groups[(r.snr_db, r.bits, r.n_train)].append(r.nmse)
    out = []
    for (snr_db, bits, n_train), vals in groups.items():
        v = np.asarray(vals)
        mean = float(v.mean()) if v.size else math.nan
        se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else math.nan
        out.append({"cell": cell_label(snr_db, bits, n_train), "snr_db": snr_db,
                    "bits": bits, "n_train": n_train, "mean_nmse": mean, "se": se,
                    "trials": int(v.size)})
    return out


def _atomic_write(path: Path, header, lines) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(lines)
    os.replace(tmp, path)


def run_sweep(config: ExperimentConfig, out_dir=None, *, trace_cell=None,
              threads: int = 1, trace_sink=None) -> tuple[list[ResultRow], list[dict]]:
    """Run every (snr, bits, n_train) cell x trials and write the CSV files.

    Writes ``results.csv``, ``summary.csv`` and, when ``trace_cell`` names a
    cell as ``(snr_db, bits, n_train)``, ``trace_*.csv`` for that cell's
    first trial.  Rows come out in canonical (cell, trial) order regardless
    of ``threads``.  ``trace_sink(row, trace)``, if given, is called for
    every trial in that order.
    """
    out_dir = Path(out_dir if out_dir is not None else config.output.dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if trace_cell is not None:
        trace_cell = (float(trace_cell[0]), trace_cell[1], int(trace_cell[2]))
    jobs = []
    for snr_db, bits, n_train in _cells(config):
        is_trace = trace_cell == (float(snr_db), bits, int(n_train))
        for t in range(config.mc.trials):
            jobs.append((config, snr_db, bits, n_train, t,
                         trace_sink is not None or (is_trace and t == 0)))

    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(_run_job, jobs, chunksize=4))
    else:
        outcomes = [_run_job(j) for j in jobs]

    rows = []
    for job, outcome in zip(jobs, outcomes):
        if not job[-1]:
            rows.append(outcome)
            continue
        row, trace = outcome
        if trace_cell == (float(row.snr_db), row.bits, row.n_train) and row.trial == 0:
            write_trace(trace, out_dir / trace_filename(row.snr_db, row.bits, row.n_train))
        if trace_sink is not None:
            trace_sink(row, trace)
        rows.append(row)

    _atomic_write(out_dir / "results.csv", RESULT_COLUMNS, [r.csv_fields() for r in rows])
    summary = summarize(rows)
    _atomic_write(out_dir / "summary.csv", SUMMARY_COLUMNS,
                  [[s["cell"], format(s["snr_db"], "g"), format_bits(s["bits"]), s["n_train"],
                    repr(s["mean_nmse"]), repr(s["se"]), s["trials"]] for s in summary])
    return rows, summary
