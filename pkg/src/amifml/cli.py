"""Command-line entry point: ``amifml generate|run|compare``.

Exit codes: 0 success, 2 invalid configuration, 3 data error, 4 numerical
failure (non-finite loss).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from .data import DataError
from .experiment import (
    ConfigError,
    compare_reports,
    generate_dataset,
    load_config,
    run_experiment,
    write_report,
)
from .federation import NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("amifml")


def _cmd_generate(args) -> int:
    cfg = load_config(args.config)
    out = args.out or cfg.output_dir
    if not out:
        raise ConfigError("no output directory: pass --out or set output_dir")
    manifest = generate_dataset(cfg, out)
    n = sum(len(c["meter_ids"]) for c in manifest["clusters"])
    log.info("wrote %d meters x %d days to %s", n, manifest["days"], out)
    return EXIT_OK


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    out = args.out or cfg.output_dir
    if not out:
        raise ConfigError("no output directory: pass --out or set output_dir")
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    t0 = time.perf_counter()
    report, logs = run_experiment(cfg, threads=args.threads)
    wall = time.perf_counter() - t0
    rp, lp = write_report(report, logs, out)
    # kept out of report.json so reports stay byte-reproducible
    (Path(out) / "timing.json").write_text(json.dumps({"wall_time_s": wall, "threads": args.threads}) + "\n")
    overall = report["metrics"]["overall"]
    log.info("%s: NRMSE %.4f  MAE %.4f  (%.1fs) -> %s", report["scenario"], overall["nrmse"], overall["mae"],
             wall, rp)
    return EXIT_OK


def _cmd_compare(args) -> int:
    _, csv_text, table = compare_reports(args.reports)
    if args.out:
        try:
            Path(args.out).write_text(csv_text, encoding="utf-8")
        except OSError as exc:
            raise DataError(f"cannot write {args.out}: {exc}") from exc
    sys.stdout.write(table)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="amifml", description="Federated LSTM load-forecasting simulator")
    parser.add_argument("--verbose", "-v", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic cohort in the ingestion CSV schema")
    g.add_argument("--config", required=True)
    g.add_argument("--out", help="output directory (overrides output_dir)")
    g.set_defaults(func=_cmd_generate)

    r = sub.add_parser("run", help="train, evaluate and write report.json + rounds.csv")
    r.add_argument("--config", required=True)
    r.add_argument("--out", help="output directory (overrides output_dir)")
    r.add_argument("--threads", type=int, default=1, help="clients trained in parallel per round")
    r.set_defaults(func=_cmd_run)

    c = sub.add_parser("compare", help="tabulate several reports against the first")
    c.add_argument("reports", nargs="+")
    c.add_argument("--out", help="also write the table as CSV here")
    c.set_defaults(func=_cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
