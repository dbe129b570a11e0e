"""
Experiment runner for the accuracy / timing tables.

An ExperimentSpec names a problem, a solver mode and a step strategy; `run`
integrates it, measures the error at t_end against the analytic solution and
times it, and `run_matrix` does that for a list of specs and writes the CSV.
"""
import io
import logging
import math
import statistics
import sys
from dataclasses import asdict, dataclass, fields, replace
from fractions import Fraction
from pathlib import Path
from typing import Optional, Union

import pandas as pd
from joblib import Parallel, delayed

from src.extrapolation import (
    MethodMode,
    SequenceKind,
    SolverConfig,
    StepFailure,
    build_sequence,
    integrate,
    propagation_coefficients,
)
from src.problems import DEFAULT_ALPHA, IvpProblem, linear_problem, max_rel_error, resonance_problem

log = logging.getLogger(__name__)

# ─────────────────────────────────────────────
# CONSTANTS
# ─────────────────────────────────────────────
PROJECT_ROOT = Path(__file__).resolve().parent.parent
RESULTS_DIR = PROJECT_ROOT / "results"

DEFAULT_REPS = 3
FLOAT_FORMAT = "%.16e"        # 17 significant digits round-trips binary64
ALL_MODES = [m.value for m in MethodMode]
LINEAR_STEPS = [512, 1024, 2048, 4096, 8192]
RESONANCE_H0 = 37.0 / 64.0

STATUS_OK = "ok"
STATUS_BREAKDOWN = "breakdown"
STATUS_ERROR = "error"

PRESETS = {
    "table2": {
        "problem": "linear",
        "n": 2048,
        "sequence": "romberg",
        "L": 4,
        "steps": LINEAR_STEPS,
        "runs": [(mode, 0.0) for mode in ALL_MODES],
    },
    "table3": {
        "problem": "linear",
        "n": 2048,
        "sequence": "harmonic",
        "L": 6,
        "steps": LINEAR_STEPS,
        "runs": [(mode, 0.0) for mode in ALL_MODES],
    },
    "table4": {
        "problem": "resonance",
        "n": 2,
        "h0": RESONANCE_H0,
        "groups": [
            ("romberg", 12, [("dd", 1e-16), ("deft", 0.0), ("deft2", 0.0), ("double", 0.0), ("dmoller", 0.0)]),
            ("harmonic", 18, [("dd", 1e-18), ("deft", 0.0)]),
        ],
    },
}


# ─────────────────────────────────────────────
# TYPES
# ─────────────────────────────────────────────

@dataclass(frozen=True)
class ExperimentSpec:
    problem: str
    n: int
    mode: MethodMode
    sequence: SequenceKind
    L: int
    steps: Optional[int] = None
    h0: Optional[float] = None
    eps_r: float = 0.0
    eps_a: float = 0.0
    reps: int = DEFAULT_REPS
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        object.__setattr__(self, "mode", MethodMode(self.mode))
        object.__setattr__(self, "sequence", SequenceKind(self.sequence))
        if self.problem not in PROBLEMS:
            raise ValueError(f"unknown problem {self.problem!r}; choose from {sorted(PROBLEMS)}")
        if (self.steps is None) == (self.h0 is None):
            raise ValueError("set exactly one of steps (fixed) or h0 (adaptive)")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if self.problem == "resonance" and self.n != 2:
            raise ValueError("the resonance problem has dimension 2")

    @property
    def adaptive(self) -> bool:
        return self.h0 is not None

    def build_problem(self) -> IvpProblem:
        return PROBLEMS[self.problem](self)

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            sequence=build_sequence(self.sequence, self.L),
            mode=self.mode,
            eps_r=self.eps_r,
            eps_a=self.eps_a,
            adaptive=self.adaptive,
            h0=self.h0,
            steps=self.steps,
        )

    def label(self) -> str:
        steps = f"H0={self.h0:g}" if self.adaptive else f"N={self.steps}"
        return f"{self.problem}(n={self.n}) {self.mode.value} {self.sequence.value} L={self.L} {steps}"


PROBLEMS = {
    "linear": lambda spec: linear_problem(spec.n),
    "resonance": lambda spec: resonance_problem(spec.alpha),
}


@dataclass(frozen=True)
class ResultRow:
    problem: str
    n: int
    mode: str
    sequence: str
    L: int
    steps_req: int
    steps_taken: int
    halvings: int
    eps_r: float
    eps_a: float
    max_rel_err: float
    elapsed_s: float
    status: str

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK


RESULT_COLUMNS = [f.name for f in fields(ResultRow)]
_INT_COLUMNS = {"n", "L", "steps_req", "steps_taken", "halvings"}
_STR_COLUMNS = {"problem", "mode", "sequence", "status"}


# ─────────────────────────────────────────────
# RUNNING
# ─────────────────────────────────────────────

def _row(spec: ExperimentSpec, **measured) -> ResultRow:
    return ResultRow(
        problem=spec.problem,
        n=spec.n,
        mode=spec.mode.value,
        sequence=spec.sequence.value,
        L=spec.L,
        steps_req=0 if spec.adaptive else spec.steps,
        eps_r=spec.eps_r,
        eps_a=spec.eps_a,
        **measured,
    )


def median_time(spec: ExperimentSpec, warmup: bool = True) -> float:
    """Median wall-clock time over spec.reps integrations, after an optional warm-up run."""
    problem, config = spec.build_problem(), spec.solver_config()
    if warmup:
        integrate(problem, config)
    return statistics.median(integrate(problem, config)[1].elapsed_s for _ in range(spec.reps))


def run(spec: ExperimentSpec, timed: bool = True) -> ResultRow:
    """
    Integrate one spec and measure its max relative error at t_end.

    With timed=True the accuracy run doubles as warm-up and elapsed_s is the
    median of spec.reps further runs; otherwise it is the single run's time.
    Breakdowns and other failures come back as rows, never as exceptions.
    """
    log.info("Running %s ...", spec.label())
    try:
        problem, config = spec.build_problem(), spec.solver_config()
        y, stats = integrate(problem, config)
        err = max_rel_error(y, problem.reference())
        elapsed = median_time(spec, warmup=False) if timed else stats.elapsed_s
    except StepFailure as exc:
        log.warning("Breakdown in %s: %s", spec.label(), exc)
        return _row(spec, steps_taken=0, halvings=0, max_rel_err=math.nan,
                    elapsed_s=math.nan, status=STATUS_BREAKDOWN)
    except Exception as exc:
        log.warning("Run %s failed: %s: %s", spec.label(), type(exc).__name__, exc)
        return _row(spec, steps_taken=0, halvings=0, max_rel_err=math.nan,
                    elapsed_s=math.nan, status=STATUS_ERROR)

    if stats.unconverged:
        log.info("  %d of %d steps took stage L without converging", stats.unconverged, stats.steps)
    log.info("  err=%.3e  time=%.4fs  steps=%d  halvings=%d  stages=%s%s",
             err, elapsed, stats.steps, stats.halvings, dict(sorted(stats.stage_hist.items())),
             f"  H0={spec.h0:g}" if spec.adaptive else "")
    return _row(spec, steps_taken=stats.steps, halvings=stats.halvings,
                max_rel_err=err, elapsed_s=elapsed, status=STATUS_OK)


def run_matrix(specs: list[ExperimentSpec], n_jobs: int = 1, out=None,
               timed: bool = True) -> list[ResultRow]:
    """
    Run every spec and return the rows in spec order. Accuracy runs may use a
    joblib worker pool; timing runs are always sequential.
    """
    specs = list(specs)
    if n_jobs == 1:
        rows = [run(spec, timed=timed) for spec in specs]
    else:
        rows = Parallel(n_jobs=n_jobs)(delayed(run)(spec, timed=False) for spec in specs)
        if timed:
            rows = [replace(row, elapsed_s=median_time(spec)) if row.ok else row
                    for spec, row in zip(specs, rows)]
    if out is not None:
        write_results(rows, out)
    return rows


# ─────────────────────────────────────────────
# CSV I/O
# ─────────────────────────────────────────────

def results_frame(rows: list[ResultRow]) -> pd.DataFrame:
    return pd.DataFrame([asdict(r) for r in rows], columns=RESULT_COLUMNS)


def write_results(rows: list[ResultRow], out: Union[str, Path, io.TextIOBase]) -> None:
    if isinstance(out, (str, Path)):
        Path(out).parent.mkdir(parents=True, exist_ok=True)
    results_frame(rows).to_csv(out, index=False, float_format=FLOAT_FORMAT, na_rep="nan")
    if isinstance(out, (str, Path)):
        log.info("Wrote %d rows to %s", len(rows), out)


def read_results(path) -> list[ResultRow]:
    df = pd.read_csv(path, float_precision="round_trip", keep_default_na=False, na_values=["nan"])
    rows = []
    for record in df.to_dict(orient="records"):
        rows.append(ResultRow(**{
            k: int(v) if k in _INT_COLUMNS else str(v) if k in _STR_COLUMNS else float(v)
            for k, v in record.items()
        }))
    return rows


# ─────────────────────────────────────────────
# PRESETS & REPORTS
# ─────────────────────────────────────────────

def preset_specs(name: str, n: Optional[int] = None, steps: Optional[list[int]] = None,
                 reps: int = DEFAULT_REPS) -> list[ExperimentSpec]:
    """Expand a PRESETS entry; n / steps override the linear-problem matrix."""
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    cfg = PRESETS[name]
    if cfg["problem"] == "resonance":
        return [
            ExperimentSpec("resonance", 2, mode, kind, L, h0=cfg["h0"], eps_r=eps_r, reps=reps)
            for kind, L, runs in cfg["groups"]
            for mode, eps_r in runs
        ]
    return [
        ExperimentSpec(cfg["problem"], n or cfg["n"], mode, cfg["sequence"], cfg["L"],
                       steps=N, eps_r=eps_r, reps=reps)
        for N in (steps or cfg["steps"])
        for mode, eps_r in cfg["runs"]
    ]


def propagation_frame(kind, L: int) -> pd.DataFrame:
    table = propagation_coefficients(build_sequence(kind, L))
    idx = range(1, L + 1)
    return pd.DataFrame(table.r, index=pd.Index(idx, name="i"), columns=pd.Index(idx, name="j"))


def emit_propagation(kind, L: int, out=None) -> pd.DataFrame:
    """Print the r_ij triangle and max |r_ij|; returns the triangle."""
    out = out or sys.stdout
    frame = propagation_frame(kind, L)
    peak = float(frame.abs().max().max())
    print(f"Propagation coefficients r_ij ({SequenceKind(kind).value}, L={L})", file=out)
    print(frame.to_string(na_rep="", float_format=lambda x: f"{x:.4g}"), file=out)
    print(f"max |r_ij| = {peak:.6g}", file=out)
    return frame


def summarize(rows: list[ResultRow]) -> dict:
    """
    Pivot rows into per-table layouts (index = problem/sequence/L/steps,
    columns = mode) for error, time and step counts, plus the DD / DEFT
    time ratio where both modes ran.
    """
    df = results_frame(rows)
    if df.empty:
        return {}
    index = ["problem", "sequence", "L", "steps_req"]
    summary = {
        value: df.pivot_table(index=index, columns="mode", values=value, aggfunc="first")
        for value in ("max_rel_err", "elapsed_s", "steps_taken", "halvings")
    }
    times = summary["elapsed_s"]
    if {"dd", "deft"} <= set(times.columns):
        summary["dd_over_deft"] = (times["dd"] / times["deft"]).rename("dd/deft")
    return summary


def describe_h0(specs: list[ExperimentSpec]) -> Optional[str]:
    """One line naming the initial step(s) of the adaptive specs, e.g. 'H0 = 37/64 (0.578125)'."""
    values = sorted({s.h0 for s in specs if s.adaptive})
    if not values:
        return None
    parts = []
    for h0 in values:
        exact = Fraction(h0)
        parts.append(f"{exact} ({h0:g})" if exact.denominator <= 2 ** 20 else f"{h0:g}")
    return "H0 = " + ", ".join(parts)
