"""Adapter executable for the built-in models.

    python -m aerobench.adapters idw --pool pool.apf predict --input s.apf --output p.apf
    python -m aerobench.adapters sleep --delay-ms 50 serve
"""

from __future__ import annotations

import argparse
import sys

from ..dataset_registry import read_stats_cache
from ..fields import FieldPrediction
from ..model_adapter import load_apf, prediction_to_apf, save_apf, serve_loop
from . import BUILTINS, make_predictor


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="python -m aerobench.adapters", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("model", choices=BUILTINS)
    ap.add_argument("--pool", help="APF file with training points and truth (idw)")
    ap.add_argument("--k", type=int, default=8, help="neighbours (idw)")
    ap.add_argument("--power", type=float, default=2.0, help="distance exponent (idw)")
    ap.add_argument("--stats", help="pressure statistics cache; with --normalized the output is normalised")
    ap.add_argument("--normalized", action="store_true")
    ap.add_argument("--value", type=float, default=0.0, help="output value (constant)")
    ap.add_argument("--delay-ms", type=float, default=50.0, help="per-call delay (sleep)")
    ap.add_argument("--slow-first", type=int, default=0, help="number of slow initial calls (sleep)")
    ap.add_argument("--slow-factor", type=float, default=10.0, help="slow-down of the initial calls (sleep)")
    ap.add_argument("--fail-on", action="append", default=[], metavar="DESIGN_ID",
                    help="exit nonzero for this design (repeatable)")
    ap.add_argument("--report-memory", type=int, default=0, metavar="BYTES",
                    help="peak memory to report in serve mode (0 lets the harness poll RSS)")
    sub = ap.add_subparsers(dest="mode", required=True)
    pr = sub.add_parser("predict")
    pr.add_argument("--input", required=True)
    pr.add_argument("--output", required=True)
    sub.add_parser("serve")
    return ap


def _params(args) -> dict:
    params = {"fail_on": args.fail_on}
    if args.model == "idw":
        params.update(pool=args.pool, k=args.k, power=args.power, normalized=args.normalized)
    elif args.model == "constant":
        params["value"] = args.value
    elif args.model == "sleep":
        params.update(delay_ms=args.delay_ms, slow_first=args.slow_first, slow_factor=args.slow_factor)
    return params


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    stats = read_stats_cache(args.stats) if args.stats else None
    predictor = make_predictor(args.model, _params(args), stats=stats)

    def handle(in_path, out_path):
        record = load_apf(in_path)
        values, space = predictor(record)
        pred = FieldPrediction(record.design_id, values, space, record.sample_seed, args.model)
        save_apf(prediction_to_apf(pred), out_path)
        return args.report_memory

    if args.mode == "serve":
        serve_loop(handle)
        return 0
    try:
        handle(args.input, args.output)
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
