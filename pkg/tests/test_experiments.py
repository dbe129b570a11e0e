import io
import math

import mpmath
import pandas as pd
import pytest

import bench
from src import experiments
from src.experiments import (
    PRESETS,
    RESULT_COLUMNS,
    STATUS_BREAKDOWN,
    ExperimentSpec,
    ResultRow,
    describe_h0,
    emit_propagation,
    median_time,
    preset_specs,
    read_results,
    run,
    run_matrix,
    summarize,
    write_results,
)
from src.extrapolation import StepFailure, build_sequence


def small_linear(mode="double", steps=4, **kw) -> ExperimentSpec:
    return ExperimentSpec("linear", 8, mode, "romberg", 4, steps=steps, reps=1, **kw)


def failing_integrate(problem, config):
    raise StepFailure(0.0, 2.0 ** -31, "halvings exhausted")


def rows_equal(a: ResultRow, b: ResultRow) -> bool:
    for name in RESULT_COLUMNS:
        x, y = getattr(a, name), getattr(b, name)
        if isinstance(x, float) and math.isnan(x):
            if not math.isnan(y):
                return False
        elif x != y or type(x) is not type(y):
            return False
    return True


# ─────────────────────────────────────────────
# SPECS
# ─────────────────────────────────────────────

@pytest.mark.parametrize("kwargs", [
    {"steps": None, "h0": None},
    {"steps": 4, "h0": 0.5},
    {"steps": 4, "reps": 0},
])
def test_experiment_spec_validation(kwargs):
    base = {"problem": "linear", "n": 4, "mode": "double", "sequence": "romberg", "L": 4}
    with pytest.raises(ValueError):
        ExperimentSpec(**base, **kwargs)


def test_experiment_spec_rejects_unknown_problem_and_mode():
    with pytest.raises(ValueError):
        ExperimentSpec("brusselator", 4, "double", "romberg", 4, steps=4)
    with pytest.raises(ValueError):
        ExperimentSpec("linear", 4, "quad", "romberg", 4, steps=4)


@pytest.mark.parametrize("name, count", [("table2", 25), ("table3", 25), ("table4", 7)])
def test_preset_sizes(name, count):
    assert len(preset_specs(name)) == count


def test_preset_overrides_and_contents():
    specs = preset_specs("table2", n=64, steps=[512, 2048])
    assert len(specs) == 10
    assert {s.n for s in specs} == {64}
    assert {s.steps for s in specs} == {512, 2048}
    table4 = preset_specs("table4")
    assert all(s.adaptive and s.h0 == 37 / 64 for s in table4)
    dd = [s for s in table4 if s.mode.value == "dd"]
    assert sorted(s.eps_r for s in dd) == [1e-18, 1e-16]
    assert PRESETS["table3"]["L"] == 6


def test_unknown_preset():
    with pytest.raises(ValueError):
        preset_specs("table9")


# ─────────────────────────────────────────────
# RUNNING
# ─────────────────────────────────────────────

def test_run_small_linear_row():
    row = run(small_linear())
    assert row.ok
    assert (row.problem, row.n, row.mode, row.sequence, row.L) == ("linear", 8, "double", "romberg", 4)
    assert row.steps_req == 4 and row.steps_taken == 4
    assert row.halvings == 0
    assert 0 <= row.max_rel_err < 1e-6
    assert row.elapsed_s > 0


def test_run_error_fields_are_idempotent():
    spec = small_linear("deft")
    assert run(spec, timed=False).max_rel_err == run(spec, timed=False).max_rel_err


def test_run_reports_breakdown_as_row(monkeypatch):
    monkeypatch.setattr(experiments, "integrate", failing_integrate)
    spec = ExperimentSpec("linear", 2, "double", "romberg", 2, h0=0.25, eps_a=1e-8, reps=1)
    row = run(spec)
    assert row.status == STATUS_BREAKDOWN
    assert not row.ok
    assert math.isnan(row.max_rel_err)
    assert row.steps_req == 0


def test_run_matrix_keeps_spec_order_with_workers():
    specs = [small_linear(mode) for mode in ("dd", "double", "deft")]
    rows = run_matrix(specs, n_jobs=2, timed=False)
    assert [r.mode for r in rows] == ["dd", "double", "deft"]
    assert all(r.ok for r in rows)


def test_run_matrix_empty_gives_header_only_csv():
    buf = io.StringIO()
    assert run_matrix([], out=buf) == []
    assert buf.getvalue().strip() == ",".join(RESULT_COLUMNS)


def test_run_matrix_single_spec(tmp_path):
    out = tmp_path / "one.csv"
    rows = run_matrix([small_linear()], out=out)
    assert len(rows) == 1
    assert len(pd.read_csv(out)) == 1


# ─────────────────────────────────────────────
# CSV
# ─────────────────────────────────────────────

def test_csv_round_trip_is_exact(tmp_path):
    rows = [
        ResultRow("linear", 2048, "deft", "romberg", 4, 512, 512, 0, 0.0, 0.0,
                  1.0 / 3.0, 0.1, "ok"),
        ResultRow("resonance", 2, "dd", "harmonic", 18, 0, 186, 7, 1e-18, 5e-324,
                  6.02e-05, 1.7976931348623157e308, "ok"),
        ResultRow("resonance", 2, "double", "romberg", 12, 0, 0, 0, 0.0, 0.0,
                  math.nan, math.nan, "breakdown"),
    ]
    path = tmp_path / "rows.csv"
    write_results(rows, path)
    back = read_results(path)
    assert len(back) == len(rows)
    assert all(rows_equal(a, b) for a, b in zip(rows, back))
    assert list(pd.read_csv(path).columns) == RESULT_COLUMNS


# ─────────────────────────────────────────────
# REPORTS
# ─────────────────────────────────────────────

def test_emit_propagation_single_entry():
    buf = io.StringIO()
    frame = emit_propagation("romberg", 1, out=buf)
    assert frame.shape == (1, 1)
    assert frame.iloc[0, 0] == 1.0
    assert "max |r_ij| = 1" in buf.getvalue()


def test_emit_propagation_romberg_below_two():
    frame = emit_propagation("romberg", 20, out=io.StringIO())
    assert frame.abs().max().max() < 2.0


def test_summarize_pivots_modes():
    rows = [
        ResultRow("linear", 8, mode, "romberg", 4, N, N, 0, 0.0, 0.0, err, t, "ok")
        for N in (4, 8)
        for mode, err, t in (("dd", 1e-20, 2.0), ("deft", 1e-19, 1.0))
    ]
    summary = summarize(rows)
    assert summary["max_rel_err"].shape == (2, 2)
    assert list(summary["dd_over_deft"]) == [2.0, 2.0]
    assert summarize([]) == {}


# ─────────────────────────────────────────────
# CLI
# ─────────────────────────────────────────────

def test_cli_run_writes_csv(tmp_path):
    out = tmp_path / "run.csv"
    code = bench.main(["run", "--n", "4", "--steps", "2", "--mode", "dmoller", "--reps", "1", "--out", str(out)])
    assert code == 0
    rows = read_results(out)
    assert len(rows) == 1 and rows[0].mode == "dmoller"


def test_cli_exit_code_on_breakdown(tmp_path, monkeypatch):
    monkeypatch.setattr(experiments, "integrate", failing_integrate)
    code = bench.main(["run", "--n", "2", "--stages", "2", "--adaptive", "--h0", "0.25",
                       "--eps-a", "1e-8", "--reps", "1", "--out", str(tmp_path / "x.csv")])
    assert code == bench.EXIT_ROW_FAILED


def test_cli_propagation(capsys):
    assert bench.main(["propagation", "--sequence", "harmonic", "--stages", "3"]) == 0
    assert "max |r_ij|" in capsys.readouterr().out


# ─────────────────────────────────────────────
# H0 OUTPUT
# ─────────────────────────────────────────────

def test_describe_h0():
    assert describe_h0(preset_specs("table4")) == "H0 = 37/64 (0.578125)"
    assert describe_h0([small_linear()]) is None
    assert describe_h0([ExperimentSpec("resonance", 2, "dd", "romberg", 4, h0=0.1)]) == "H0 = 0.1"


def test_cli_prints_h0_for_adaptive_runs(tmp_path, monkeypatch, capsys):
    monkeypatch.setattr(experiments, "integrate", failing_integrate)
    bench.main(["run", "--problem", "resonance", "--stages", "2", "--adaptive", "--h0", "0.25",
                "--reps", "1", "--out", str(tmp_path / "x.csv")])
    assert "H0 = 1/4 (0.25)" in capsys.readouterr().out


# ─────────────────────────────────────────────
# TABLE REPRODUCTION (slow)
# ─────────────────────────────────────────────

def within_order(value: float, target: float) -> bool:
    return target / 10 <= value <= target * 10


def tableau_factor(z, w):
    """T_LL for y' = y over one step with h*lambda = z, computed in mpmath."""
    rows = []
    for i, wi in enumerate(w):
        hz = z / wi
        prev, cur = mpmath.mpf(1), 1 + hz
        for _ in range(wi - 1):
            prev, cur = cur, prev + 2 * hz * cur
        row = [cur]
        for j in range(1, i + 1):
            c = 1 / (mpmath.mpf(wi) ** 2 / mpmath.mpf(w[i - j]) ** 2 - 1)
            row.append(row[j - 1] + c * (row[j - 1] - rows[-1][j - 1]))
        rows.append(row)
    return rows[-1][-1]


def exact_tableau_error(n: int, steps: int, kind: str, L: int) -> float:
    """Max relative error at t = 1/4 of the linear problem when every step takes T_LL exactly."""
    w = build_sequence(kind, L).w
    worst = mpmath.mpf(0)
    with mpmath.workdps(60):
        H = mpmath.mpf(1) / (4 * steps)
        for k in range(1, n + 1):
            exact = mpmath.exp(-mpmath.mpf(k) / 4)
            worst = max(worst, abs(tableau_factor(-k * H, w) ** steps - exact) / exact)
    return float(worst)


def linear_row(mode: str, kind: str, L: int, steps: int) -> ResultRow:
    row = run(ExperimentSpec("linear", 2048, mode, kind, L, steps=steps, reps=1), timed=False)
    assert row.ok
    return row


@pytest.mark.slow
@pytest.mark.parametrize("steps, expected", [(512, 5.0092e-04), (4096, 1.3240e-11)])
def test_table2_dd_and_deft_equal_exact_tableau(steps, expected):
    exact = exact_tableau_error(2048, steps, "romberg", 4)
    assert exact == pytest.approx(expected, rel=1e-4)
    dd = linear_row("dd", "romberg", 4, steps).max_rel_err
    assert dd == pytest.approx(exact, rel=1e-6)
    assert linear_row("deft", "romberg", 4, steps).max_rel_err == pytest.approx(dd, rel=1e-3)
    assert linear_row("deft2", "romberg", 4, steps).max_rel_err == pytest.approx(dd, rel=0.1)


@pytest.mark.slow
def test_table3_deft_beats_binary64_modes():
    err = {mode: linear_row(mode, "harmonic", 6, 2048).max_rel_err for mode in ("double", "dmoller", "deft")}
    assert err["deft"] * 100 <= min(err["double"], err["dmoller"])
    assert err["dmoller"] < err["double"]


@pytest.mark.slow
def test_deft_is_not_slower_than_dd():
    def seconds(mode):
        return median_time(ExperimentSpec("linear", 2048, mode, "romberg", 4, steps=64, reps=3))

    assert seconds("deft") <= 3 * seconds("dd")


@pytest.mark.slow
def test_table4_completes_without_breakdown():
    rows = run_matrix(preset_specs("table4", reps=1), timed=False)
    assert all(r.ok for r in rows)
    by_key = {(r.sequence, r.mode, r.eps_r): r for r in rows}
    assert math.isfinite(by_key[("harmonic", "dd", 1e-18)].max_rel_err)
    assert within_order(by_key[("romberg", "deft", 0.0)].max_rel_err, 3.7e-04)
    assert within_order(by_key[("romberg", "dmoller", 0.0)].max_rel_err, 5.2e-04)
    assert within_order(by_key[("harmonic", "deft", 0.0)].max_rel_err, 4.5e-04)
