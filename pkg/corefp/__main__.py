"""
COREFP CLI entry point

Subcommands:
  corefp train-zoo       split the data and train the model zoo
  corefp fingerprint     generate core points for the victim and query every suspect
  corefp identify        verdict for one suspect file against a fingerprint file
  corefp evaluate        full experiment: zoo, fingerprint, calibration, verdicts, report
  corefp insight-curves  score/radius and score-gap CSVs from a finished run

Exit codes: 0 success, 1 stage failure, 2 usage, 3 missing file, 4 schema mismatch.
"""

import argparse
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from .corefp_core import (CoreFPError, SchemaError, StageError, configure_logging, default_out_dir,
                          print_audit_summary)
from .corefp_harness import (ExperimentEngine, identify_files, resolve_thresholds, stage_fingerprint,
                             stage_insight_curves, stage_train_zoo)
from .corefp_identify import Method
from .corefp_zoo import ModelKind

EXIT_OK = 0
EXIT_STAGE = 1
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_SCHEMA = 4


def _count(text: str):
    kind, _, n = text.partition("=")
    try:
        return ModelKind(kind.upper()).value, int(n)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected KIND=N with KIND in {[k.value for k in ModelKind]}, got '{text}'")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config, or 'demo' (default: built-in defaults)")
    common.add_argument("--seed", type=int, help="Root seed for every stage")
    common.add_argument("--method", choices=[m.value for m in Method], help="Identification method")
    common.add_argument("--top-k", type=int, dest="top_k", help="Keep the k core points with largest radius")
    common.add_argument("--out", help=f"Output directory (default: $COREFP_OUT_DIR or {default_out_dir()})")
    common.add_argument("--threads", type=int, help="Worker threads for zoo members and core points")
    common.add_argument("--count", type=_count, action="append", default=[], metavar="KIND=N",
                        help="Override the number of zoo members of one kind")
    common.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")

    parser = argparse.ArgumentParser(prog="corefp", description="COREFP: core-point fingerprints for piracy model identification")
    sub = parser.add_subparsers(dest="command")
    sub.add_parser("train-zoo", parents=[common], help="Split data and train the model zoo")
    sub.add_parser("fingerprint", parents=[common], help="Fingerprint the victim and query all suspects")
    evaluate = sub.add_parser("evaluate", parents=[common], help="Run the full experiment")
    evaluate.add_argument("--dry-run", action="store_true", help="Validate the config and print its hash")
    sub.add_parser("insight-curves", parents=[common], help="Write curves/*.csv for a finished run")
    identify = sub.add_parser("identify", parents=[common], help="Verdict for one suspect file")
    identify.add_argument("--fingerprint", required=True, help="Fingerprint file written by a run")
    identify.add_argument("--suspect", required=True, help="Suspect network file or transcript file")
    identify.add_argument("--thresholds", help="thresholds.json (default: <out>/thresholds.json)")
    identify.add_argument("--d1", type=float, help="L1 threshold")
    identify.add_argument("--d2", type=float, help="Cosine threshold")
    identify.add_argument("--cluster-model", dest="cluster_model",
                          help="cluster_model.json for --method cluster (default: <out>/cluster_model.json)")
    return parser


def _overrides(args: argparse.Namespace, engine: ExperimentEngine) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    if args.seed is not None:
        overrides['seed'] = args.seed
    if args.method:
        overrides['identify'] = {'methods': [args.method]}
    if args.top_k is not None:
        overrides['top_k'] = args.top_k
    if args.threads is not None:
        overrides['threads'] = args.threads
    if args.out:
        overrides['out_dir'] = args.out
    if args.count:
        overrides['zoo'] = {'counts': {**engine.config['zoo']['counts'], **dict(args.count)}}
    return overrides


def _exit_code(error: Exception) -> int:
    cause = error.cause if isinstance(error, StageError) else error
    if isinstance(cause, FileNotFoundError):
        return EXIT_MISSING
    if isinstance(cause, SchemaError):
        return EXIT_SCHEMA
    return EXIT_STAGE


def _identify(args: argparse.Namespace, out_dir: str) -> int:
    method = Method(args.method or "cos")
    if method is Method.CLUSTER:
        cluster_path = args.cluster_model or str(Path(out_dir) / "cluster_model.json")
        if args.cluster_model is None and not Path(cluster_path).exists():
            print("Error: pass --cluster-model, or run evaluate with the cluster method first", file=sys.stderr)
            return EXIT_USAGE
        verdict = identify_files(args.fingerprint, args.suspect, method, cluster_model=cluster_path)
        print(verdict.line())
        return EXIT_OK
    thresholds_path = args.thresholds
    if thresholds_path is None and (args.d1 is None or args.d2 is None):
        fallback = Path(out_dir) / "thresholds.json"
        if not fallback.exists():
            print("Error: pass --thresholds, or both --d1 and --d2", file=sys.stderr)
            return EXIT_USAGE
        thresholds_path = str(fallback)
    thresholds = resolve_thresholds(thresholds_path, args.d1, args.d2)
    verdict = identify_files(args.fingerprint, args.suspect, method, thresholds)
    print(verdict.line())
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """Main CLI entry point"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK

    if not args.command:
        parser.print_help(sys.stderr)
        return EXIT_USAGE

    configure_logging(args.verbose)
    try:
        engine = ExperimentEngine(args.config)
        overrides = _overrides(args, engine)
        engine = ExperimentEngine(args.config, overrides)

        errors = engine.validate()
        if errors:
            print("Config validation errors:", file=sys.stderr)
            for error in errors:
                print(f"  - {error}", file=sys.stderr)
            return EXIT_SCHEMA
        cfg = engine.build()

        if args.command == "identify":
            return _identify(args, cfg.out_dir)

        if args.command == "evaluate":
            if args.dry_run:
                print("Config valid")
                print(f"Config Hash: {engine.config_hash}")
                return EXIT_OK
            result = engine.run()
            for method, rates in result['report']['rates'].items():
                print(f"{method}: MIR={rates['mir']:.3f} FIR={rates['fir']:.3f}")
            print(f"Report: {Path(result['out_dir']) / 'report.txt'}")
            print_audit_summary(result['_audit'], "COREFP-EVALUATE")
        elif args.command == "train-zoo":
            summary = stage_train_zoo(cfg)
            print(f"Zoo of {summary['models']} models written to {Path(cfg.out_dir) / 'zoo'}")
        elif args.command == "fingerprint":
            summary = stage_fingerprint(cfg)
            print(f"Fingerprint written to {Path(cfg.out_dir) / 'fingerprint' / 'fingerprint.json'}")
        elif args.command == "insight-curves":
            summary = stage_insight_curves(cfg)
            for path in summary['artifacts']:
                print(f"Wrote {Path(cfg.out_dir) / path}")
        return EXIT_OK

    except (StageError, CoreFPError, ValueError, KeyError, OSError, RuntimeError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return _exit_code(e)


def cli():
    sys.exit(main())


if __name__ == "__main__":
    cli()
