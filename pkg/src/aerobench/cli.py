"""``aerobench`` command line.

Exit codes: 0 success, 2 configuration error, 3 some adapter calls failed,
4 input/output failure.  ``AEROBENCH_SEED`` overrides the config seed and
the override is recorded in run_meta.json.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .config import load_config
from .errors import (
    AeroBenchError,
    ConfigError,
    EmptyCategory,
    EmptyTrainSplit,
    MeshFormatError,
    OverlappingSplits,
    UnknownDesignId,
)
from .pipeline import EXIT_CONFIG, EXIT_IO, EXIT_OK, cmd_crosscat, cmd_evaluate, cmd_ingest, cmd_profile, cmd_stats
from .synth_baseline import SyntheticSpec, generate

log = logging.getLogger("aerobench")

# data problems that stem from what the config asks for
_CONFIG_ERRORS = (ConfigError, EmptyCategory, EmptyTrainSplit, OverlappingSplits, UnknownDesignId)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="aerobench", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def with_config(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", required=True, help="run configuration (.json, .yaml or .yml)")
        p.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                       help="worker pool size (default: logical cores); results do not depend on it")
        return p

    with_config("ingest", "parse all manifest meshes, write the ABM1 cache and vertex-count statistics")
    with_config("stats", "compute pressure statistics from the training split only")
    with_config("evaluate", "sample, predict, score, bootstrap, check drag and write the run tree")
    p = with_config("profile", "measure latency, throughput and peak memory of one model at batch size 1")
    p.add_argument("--model", required=True, help="model name from the config")
    with_config("crosscat", "train-on-some, test-on-other archetype matrix")

    p = sub.add_parser("synth", help="generate a synthetic fixture dataset",
                       description="Generate synthetic car-like meshes with analytic pressure fields.")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--designs", help="designs per category (default F=40,E=30,N=30)")
    p.add_argument("--vertices", type=int, nargs=2, metavar=("MIN", "MAX"), help="vertex budget per design")
    p.add_argument("--noise", type=float, help="noise standard deviation (m²/s²)")
    p.add_argument("--format", choices=("abm", "vtk"), default="abm")
    p.add_argument("--spec", help="JSON file with SyntheticSpec fields (flags override it)")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)

    sub.add_parser("version", help="print the harness version")
    return ap


def _synth(args) -> int:
    doc = json.loads(Path(args.spec).read_text(encoding="utf-8")) if args.spec else {}
    if args.designs:
        try:
            doc["designs"] = {c.strip().upper(): int(n) for c, n in (p.split("=") for p in args.designs.split(","))}
        except ValueError:
            raise ConfigError(f"cannot parse --designs {args.designs!r}") from None
    if args.vertices:
        doc["vertex_range"] = args.vertices
    if args.noise is not None:
        doc["noise_sigma"] = args.noise
    try:
        spec = SyntheticSpec.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    ds = generate(spec, args.seed, args.out, args.format, args.workers)
    template = {
        "manifest": "manifest.json",
        "split": {"path": "split", "name": "synthetic-official"},
        "sample_n": min(1000, ds.min_vertices),
        "master_seed": args.seed,
        "models": [{"name": "idw", "builtin": "idw", "params": {"k": 8, "power": 2.0}}],
        "crosscat": {"rows": [{"train": ["F"], "test": ["E", "N"]}]},
    }
    (ds.root / "config.json").write_text(json.dumps(template, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {len(ds.params)} designs to {ds.root}")
    return EXIT_OK


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "version":
        print(__version__)
        return EXIT_OK
    try:
        if args.command == "synth":
            return _synth(args)
        cfg, override = load_config(args.config)
        workers = max(1, args.workers)
        if args.command == "profile":
            outcome = cmd_profile(cfg, args.model, workers, override)
        else:
            fn = {"ingest": cmd_ingest, "stats": cmd_stats, "evaluate": cmd_evaluate, "crosscat": cmd_crosscat}
            outcome = fn[args.command](cfg, workers, override)
    except _CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, MeshFormatError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except AeroBenchError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_IO
    for model, failed in sorted(outcome.failures.items()):
        for design_id, message in sorted(failed.items()) if isinstance(failed, dict) else []:
            print(f"failed: {model} {design_id}: {message}", file=sys.stderr)
    if outcome.run_dir is not None:
        print(outcome.run_dir)
    return outcome.exit_code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
