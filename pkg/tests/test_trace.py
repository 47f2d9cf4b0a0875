"""Tests for trace records and the CSV format."""

import math

import numpy as np

from dualdescent.trace import BASE_COLUMNS, IterationRecord, RunResult, RunStatus, read_trace_csv, write_trace_csv


def _record(k, **extras):
    return IterationRecord(k=k, potential=1.0 / (k + 1), lip=2.0, h_norm=0.1, mu_norm=0.2,
                           max_block_disp=0.3, resid_max=0.4, feas=0.1, extras=extras)


def test_header_and_full_precision(tmp_path):
    rec = _record(0, L_aug=1.0 / 3.0)
    path = write_trace_csv(tmp_path / "t.csv", [rec], ("L_aug",))
    header = path.read_text().splitlines()[0].split(",")
    assert header == list(BASE_COLUMNS) + ["L_aug"]
    row = read_trace_csv(path)[0]
    assert row["L_aug"] == 1.0 / 3.0
    assert row["potential"] == 1.0


def test_missing_extra_is_nan(tmp_path):
    path = write_trace_csv(tmp_path / "t.csv", [_record(0)], ("mu_tilde_norm",))
    assert math.isnan(read_trace_csv(path)[0]["mu_tilde_norm"])


def test_every_keeps_last_row(tmp_path):
    trace = [_record(k) for k in range(7)]
    rows = read_trace_csv(write_trace_csv(tmp_path / "t.csv", trace, every=3))
    assert [int(r["k"]) for r in rows] == [0, 3, 6]
    rows = read_trace_csv(write_trace_csv(tmp_path / "u.csv", trace[:5], every=3))
    assert [int(r["k"]) for r in rows] == [0, 3, 4]


def test_empty_trace_writes_header(tmp_path):
    path = write_trace_csv(tmp_path / "t.csv", [])
    assert path.read_text() == ",".join(BASE_COLUMNS) + "\n"


def test_run_result_summary():
    result = RunResult(solver="sdd_admm", status=RunStatus.CONVERGED, trace=[_record(0), _record(1)],
                       certificate=None, x=np.zeros(2), mu=np.zeros(1), rho=4.0, k_star=1)
    assert result.iterations == 2
    assert result.converged
    summary = result.summary()
    assert summary["status"] == "converged"
    assert summary["potential"] == 0.5
    assert summary["k_star"] == 1


def test_empty_result_summary():
    result = RunResult(solver="udd_affine", status=RunStatus.MAX_ITERS, trace=[], certificate=None,
                       x=np.zeros(1), mu=np.zeros(1), rho=1.0)
    assert result.final() is None
    assert result.summary()["resid_max"] is None
