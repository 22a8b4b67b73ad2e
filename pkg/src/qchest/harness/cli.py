"""Command-line entry point: ``estimate {sweep,trial,selftest}``."""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys

from .config import ExperimentConfig, format_bits, load_config, parse_bits
from .experiment import cell_label, run_sweep, run_trial, write_trace


def parse_cell(text: str):
    """``"snr=0,b=2,n=160"`` -> ``(0.0, 2, 160)``."""
    parts = {}
    for item in text.split(","):
        key, sep, value = item.partition("=")
        if not sep:
            raise argparse.ArgumentTypeError(f"malformed cell entry {item!r}")
        parts[key.strip().lower()] = value.strip()
    try:
        return float(parts["snr"]), parse_bits(parts["b"]), int(parts["n"])
    except (KeyError, ValueError) as exc:
        raise argparse.ArgumentTypeError(f"cell must look like snr=0,b=2,n=160 ({exc})")


def _cmd_sweep(args) -> int:
    config = load_config(args.config)
    out = args.out or config.output.dir
    _, summary = run_sweep(config, out, trace_cell=args.trace_cell, threads=args.threads)
    for s in summary:
        print(f"{s['cell']:<24} mean_nmse={s['mean_nmse']:.4g} se={s['se']:.2g} trials={s['trials']}")
    return 0


def _cmd_trial(args) -> int:
    config = load_config(args.config) if args.config else ExperimentConfig()
    snr = config.train.snr_db[0] if args.snr is None else args.snr
    bits = config.quantizer.bits[0] if args.bits is None else parse_bits(args.bits)
    n = config.train.n_train[0] if args.n is None else args.n
    row, trace = run_trial(config, snr, bits, n, args.seed, return_trace=True)
    if args.trace:
        write_trace(trace, args.trace)
    record = {"cell": cell_label(snr, bits, n), "seed": row.seed, "nmse": row.nmse,
              "iterations": row.iterations, "halt_reason": row.halt_reason,
              "support_size": trace.records[trace.selected].support_size if trace.records else 0,
              "bits": format_bits(bits), "wall_ms": round(row.wall_ms, 3)}
    print(json.dumps(record))
    return 0 if math.isfinite(row.nmse) else 1


def _cmd_selftest(args) -> int:
    from .selftest import run_selftest
    return 0 if run_selftest(seed=args.seed) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="estimate",
        description="Sparse channel estimation from low-resolution quantized measurements.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="run a Monte-Carlo sweep and write CSV results")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (default: output.dir from the config)")
    p.add_argument("--trace-cell", type=parse_cell, metavar="snr=S,b=B,n=N",
                   help="write the per-iteration trace of this cell's first trial")
    p.add_argument("--threads", type=int, default=1, help="worker processes")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("trial", help="run one trial and print its result as JSON")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--snr", type=float, help="SNR in dB (default: first configured)")
    p.add_argument("--bits", help="ADC bits or 'inf' (default: first configured)")
    p.add_argument("--n", type=int, help="training length (default: first configured)")
    p.add_argument("--trace", help="write the iteration trace to this CSV file")
    p.set_defaults(func=_cmd_trial)

    p = sub.add_parser("selftest", help="run the built-in oracle checks")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_selftest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"estimate: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
