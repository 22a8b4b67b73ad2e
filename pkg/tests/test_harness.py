import csv
import json
import math

import numpy as np
import pytest

from qchest.estimator import SolveTrace
from qchest.harness.config import ExperimentConfig, format_bits, load_config, parse_bits
from qchest.harness.experiment import (RESULT_COLUMNS, SUMMARY_COLUMNS, ResultRow, nmse,
                                       run_sweep, run_trial, summarize, trace_filename,
                                       trial_seed)

from conftest import crandn

SMALL = {"dims": {"n_antennas": 4, "n_users": 1, "n_taps": 2, "n_paths": 1},
         "grid": {"n_aoa": 8, "n_delay": 4},
         "train": {"n_train": [10], "snr_db": [0, 10]},
         "quantizer": {"bits": [1, 2]},
         "mc": {"trials": 3}}


@pytest.fixture
def small():
    return ExperimentConfig.from_dict(SMALL)


def test_nmse_examples(rng):
    h = crandn(rng, 4, 6)
    assert nmse(h, h) == 0
    assert nmse(np.zeros_like(h), h) == pytest.approx(1)
    assert nmse(2 * h, h) == pytest.approx(1)
    with pytest.raises(ValueError):
        nmse(h, np.zeros_like(h))
    with pytest.raises(ValueError):
        nmse(h[:, :3], h)


def test_trial_seeds_unique_across_grid():
    seeds = {trial_seed(0, s, b, n, t) for s in (-10, -5, 0, 5, 10, 15, 20)
             for b in (1, 2, 3, 4, math.inf) for n in (48, 96, 160) for t in range(100)}
    assert len(seeds) == 7 * 5 * 3 * 100
    assert all(0 <= s < 2 ** 63 for s in seeds)
    assert trial_seed(1, 0, 2, 48, 0) != trial_seed(0, 0, 2, 48, 0)


def test_trial_is_deterministic(small):
    a = run_trial(small, 0.0, 2, 10, 1234)
    b = run_trial(small, 0.0, 2, 10, 1234)
    assert a.csv_fields()[:-1] == b.csv_fields()[:-1]
    assert math.isfinite(a.nmse) and a.nmse >= 0


def test_infinite_bits_routes_to_unquantized_reference(small):
    row, trace = run_trial(small, 10.0, math.inf, 10, 5, return_trace=True)
    assert row.bits == math.inf and math.isfinite(row.nmse)
    # the reference solves each support in closed form: one inner step
    assert all(r.inner_iterations == 1 for r in trace.records[1:])
    assert row.csv_fields()[1] == "inf"


def test_on_grid_truth_is_recovered_at_high_snr():
    cfg = ExperimentConfig().replace(mc={"on_grid": True})
    for t in range(5):
        row = run_trial(cfg, 20.0, 4, 48, trial_seed(0, 20.0, 4, 48, t))
        assert row.nmse < 1e-2


def test_trial_errors_become_halt_reasons(small, monkeypatch):
    from qchest.harness import experiment

    def boom(*args, **kwargs):
        raise FloatingPointError("overflow")

    monkeypatch.setattr(experiment, "fcfgs_cv", boom)
    row = run_trial(small, 0.0, 2, 10, 1)
    assert row.halt_reason == "error:FloatingPointError" and math.isnan(row.nmse)


def test_sweep_counts_and_files(small, tmp_path):
    rows, summary = run_sweep(small, tmp_path, trace_cell=(10, 2, 10))
    assert len(rows) == 12 and len(summary) == 4
    with open(tmp_path / "results.csv") as fh:
        data = list(csv.reader(fh))
    assert tuple(data[0]) == RESULT_COLUMNS and len(data) == 13
    with open(tmp_path / "summary.csv") as fh:
        summ = list(csv.DictReader(fh))
    assert tuple(summ[0]) == SUMMARY_COLUMNS
    assert [s["cell"] for s in summ] == ["snr=0,b=1,n=10", "snr=0,b=2,n=10",
                                          "snr=10,b=1,n=10", "snr=10,b=2,n=10"]
    assert all(int(s["trials"]) == 3 for s in summ)
    # canonical order: cell then trial
    keys = [(r.snr_db, r.bits, r.trial) for r in rows]
    assert keys == sorted(keys)
    trace_file = tmp_path / trace_filename(10, 2, 10)
    with open(trace_file) as fh:
        trace_rows = list(csv.DictReader(fh))
    assert tuple(trace_rows[0]) == SolveTrace.COLUMNS
    for col in ("iteration", "nmse", "f_cv", "f_e_norm"):
        assert all(r[col] != "" for r in trace_rows)
    assert sum(int(r["selected"]) for r in trace_rows) == 1


def test_sweep_rerun_is_byte_identical(small, tmp_path):
    def strip(path):
        with open(path) as fh:
            return [line.rsplit(",", 1)[0] for line in fh]

    run_sweep(small, tmp_path / "a")
    run_sweep(small, tmp_path / "b")
    assert strip(tmp_path / "a" / "results.csv") == strip(tmp_path / "b" / "results.csv")
    assert (tmp_path / "a" / "summary.csv").read_bytes() == (tmp_path / "b" / "summary.csv").read_bytes()


def test_parallel_sweep_matches_serial(small, tmp_path):
    serial, _ = run_sweep(small, tmp_path / "s")
    parallel, _ = run_sweep(small, tmp_path / "p", threads=2)
    assert [r.csv_fields()[:-1] for r in serial] == [r.csv_fields()[:-1] for r in parallel]


def test_summarize_mean_and_se():
    rows = [ResultRow(0.0, 2, 10, t, t, v, 1, "cv-drop", 0.0) for t, v in enumerate([1.0, 2.0, 3.0])]
    rows.append(ResultRow(0.0, 2, 10, 3, 3, math.nan, 0, "error:ValueError", 0.0))
    (s,) = summarize(rows)
    assert s["mean_nmse"] == pytest.approx(2.0)
    assert s["se"] == pytest.approx(1 / math.sqrt(3))
    assert s["trials"] == 3


def test_config_rejects_unknown_keys():
    with pytest.raises(ValueError, match="unknown"):
        ExperimentConfig.from_dict({"dims": {"n_antenas": 4}})
    with pytest.raises(ValueError, match="unknown"):
        ExperimentConfig.from_dict({"plots": {}})


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"train": {"n_train": [4]}})
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"solver": {"method": "bfgs"}})
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"mc": {"trials": 0}})
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"train": {"cv_slots": 48}})


def test_config_round_trip(tmp_path):
    cfg = ExperimentConfig.from_dict({"quantizer": {"bits": [1, "inf"]}, "train": {"snr_db": 5}})
    assert cfg.quantizer.bits == (1, math.inf) and cfg.train.snr_db == (5,)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert load_config(path) == cfg
    assert cfg.cv_slots == cfg.dims.n_users * cfg.dims.n_taps


def test_shipped_configs_load():
    from pathlib import Path
    root = Path(__file__).resolve().parents[1] / "configs"
    desk = load_config(root / "desk.json")
    assert desk.system_dims().total_paths == 4 and desk.cv_slots == 8
    large = load_config(root / "large.json")
    assert large.grid.n_aoa == 2 * large.dims.n_antennas
    assert large.grid.n_delay == 2 * large.dims.n_taps


def test_parse_and_format_bits():
    assert parse_bits("inf") == math.inf and parse_bits(3) == 3 and parse_bits("2") == 2
    assert format_bits(math.inf) == "inf" and format_bits(4) == "4"
    for bad in (0, 1.5, "x"):
        with pytest.raises(ValueError):
            parse_bits(bad)
