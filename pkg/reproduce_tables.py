"""
Reproduce every table in one go: propagation coefficients, the two linear-ODE
tables and the resonance table. One CSV per table under results/.

Usage:
    python reproduce_tables.py                       # full matrices (slow)
    python reproduce_tables.py --n 256 --steps 512 2048 4096
    python reproduce_tables.py --skip table4 --jobs 4
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
log = logging.getLogger("reproduce")

TABLES = ["table2", "table3", "table4"]


def main():
    parser = argparse.ArgumentParser(description="Reproduce the accuracy / timing tables")
    parser.add_argument("--skip", nargs="+", default=[], choices=TABLES + ["propagation"],
                        help="Tables to leave out")
    parser.add_argument("--n", type=int, default=None,
                        help="Dimension of the linear problem (default 2048)")
    parser.add_argument("--steps", type=int, nargs="+", default=None,
                        help="Step counts of the linear tables")
    parser.add_argument("--reps", type=int, default=3)
    parser.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args()

    from src.eft import verify_float_environment
    from src.experiments import (
        RESULTS_DIR,
        describe_h0,
        emit_propagation,
        preset_specs,
        run_matrix,
        summarize,
    )

    verify_float_environment()
    RESULTS_DIR.mkdir(parents=True, exist_ok=True)
    failures = 0

    # ── Propagation coefficients ──
    if "propagation" not in args.skip:
        log.info("=== Propagation coefficients (L=20) ===")
        for kind in ("romberg", "harmonic"):
            frame = emit_propagation(kind, 20)
            frame.to_csv(RESULTS_DIR / f"propagation_{kind}.csv", float_format="%.16e")

    # ── Accuracy / timing tables ──
    for table in TABLES:
        if table in args.skip:
            log.info("=== %s skipped ===", table)
            continue
        log.info("=== %s ===", table)
        if table == "table4":
            specs = preset_specs(table, reps=args.reps)
        else:
            specs = preset_specs(table, n=args.n, steps=args.steps, reps=args.reps)
        rows = run_matrix(specs, n_jobs=args.jobs, out=RESULTS_DIR / f"{table}.csv")
        failures += sum(not r.ok for r in rows)
        summary = summarize(rows)
        if summary:
            print(f"\n{table}: max relative error\n{summary['max_rel_err'].to_string()}")
            print(f"\n{table}: elapsed seconds\n{summary['elapsed_s'].to_string()}\n")
            if "dd_over_deft" in summary:
                print(f"{table}: DD / DEFT time ratio\n{summary['dd_over_deft'].to_string()}\n")
        h0_line = describe_h0(specs)
        if h0_line:
            print(f"{table}: {h0_line}\n")

    if failures:
        log.warning("%d row(s) failed; see the status column.", failures)
        sys.exit(2)
    log.info("=== All tables written to %s ===", RESULTS_DIR)


if __name__ == "__main__":
    main()
