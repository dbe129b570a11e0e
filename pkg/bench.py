"""
Benchmark CLI for the compensated extrapolation solvers.

Usage:
    python bench.py run --problem linear --n 2048 --mode deft --steps 512
    python bench.py run --problem resonance --mode dd --stages 12 --adaptive --eps-r 1e-16
    python bench.py table2 --n 256 --steps 512 2048 --out results/table2.csv
    python bench.py table4 --jobs 4
    python bench.py propagation --sequence harmonic --stages 20
"""
import argparse
import logging
import sys

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s  %(levelname)-8s  %(message)s",
    handlers=[
        logging.StreamHandler(sys.stdout),
    ],
)
log = logging.getLogger("bench")

EXIT_ROW_FAILED = 2


def _common(parser):
    parser.add_argument("--reps", type=int, default=3,
                        help="Timed repetitions per row (median reported, after one warm-up run)")
    parser.add_argument("--jobs", type=int, default=1,
                        help="Worker processes for the accuracy runs")
    parser.add_argument("--out", default=None,
                        help="CSV output file (default: print CSV to stdout)")
    parser.add_argument("--verbose", action="store_true",
                        help="Log every step decision")


def build_parser() -> argparse.ArgumentParser:
    from src.experiments import ALL_MODES

    parser = argparse.ArgumentParser(description="Compensated extrapolation ODE benchmarks")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run a single experiment")
    _common(run)
    run.add_argument("--problem", choices=["linear", "resonance"], default="linear")
    run.add_argument("--n", type=int, default=2048, help="Dimension of the linear problem")
    run.add_argument("--mode", choices=ALL_MODES, default="deft")
    run.add_argument("--sequence", choices=["romberg", "harmonic"], default="romberg")
    run.add_argument("--stages", type=int, default=4, help="Maximum number of stages L")
    run.add_argument("--steps", type=int, default=None, help="Fixed step count N")
    run.add_argument("--adaptive", action="store_true", help="Halve failed steps instead of fixed N")
    run.add_argument("--h0", type=float, default=None, help="Initial/base step for --adaptive")
    run.add_argument("--eps-r", type=float, default=0.0)
    run.add_argument("--eps-a", type=float, default=0.0)
    run.add_argument("--seed", type=int, default=None,
                     help="Accepted for harness compatibility; the solver is deterministic")

    for name, text in (("table2", "Linear ODE, Romberg L=4"),
                       ("table3", "Linear ODE, harmonic L=6"),
                       ("table4", "Resonance problem, adaptive")):
        preset = sub.add_parser(name, help=text)
        _common(preset)
        if name != "table4":
            preset.add_argument("--n", type=int, default=None, help="Override the dimension (2048)")
            preset.add_argument("--steps", type=int, nargs="+", default=None,
                                help="Override the step counts")

    prop = sub.add_parser("propagation", help="Round-off propagation coefficients r_ij")
    prop.add_argument("--sequence", choices=["romberg", "harmonic"], default="romberg")
    prop.add_argument("--stages", type=int, default=20)
    prop.add_argument("--verbose", action="store_true")
    return parser


def _single_spec(args):
    from src.experiments import RESONANCE_H0, ExperimentSpec

    n = 2 if args.problem == "resonance" else args.n
    if args.adaptive:
        h0 = args.h0 if args.h0 is not None else RESONANCE_H0
        return ExperimentSpec(args.problem, n, args.mode, args.sequence, args.stages,
                              h0=h0, eps_r=args.eps_r, eps_a=args.eps_a, reps=args.reps)
    steps = args.steps if args.steps is not None else 512
    return ExperimentSpec(args.problem, n, args.mode, args.sequence, args.stages,
                          steps=steps, eps_r=args.eps_r, eps_a=args.eps_a, reps=args.reps)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)

    from src.eft import verify_float_environment
    from src.experiments import (
        describe_h0,
        emit_propagation,
        preset_specs,
        run_matrix,
        summarize,
        write_results,
    )

    verify_float_environment()

    if args.command == "propagation":
        emit_propagation(args.sequence, args.stages)
        return 0

    try:
        if args.command == "run":
            specs = [_single_spec(args)]
        elif args.command == "table4":
            specs = preset_specs("table4", reps=args.reps)
        else:
            specs = preset_specs(args.command, n=args.n, steps=args.steps, reps=args.reps)
    except ValueError as exc:
        log.error("Invalid experiment: %s", exc)
        return EXIT_ROW_FAILED

    log.info("=== %s: %d experiment(s) ===", args.command, len(specs))
    rows = run_matrix(specs, n_jobs=args.jobs, out=args.out)
    if args.out is None:
        write_results(rows, sys.stdout)

    h0_line = describe_h0(specs)
    if h0_line:
        print(f"\n{h0_line}")
    summary = summarize(rows)
    for key in ("max_rel_err", "elapsed_s", "steps_taken"):
        if key in summary and len(specs) > 1:
            print(f"\n{key}\n{summary[key].to_string()}")
    if "dd_over_deft" in summary:
        print(f"\nDD / DEFT time ratio\n{summary['dd_over_deft'].to_string()}")

    failed = [r for r in rows if not r.ok]
    if failed:
        log.warning("%d of %d row(s) failed.", len(failed), len(rows))
        return EXIT_ROW_FAILED
    log.info("=== %s complete ===", args.command)
    return 0


if __name__ == "__main__":
    sys.exit(main())
