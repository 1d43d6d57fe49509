"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from . import pipeline as pl
from .classification import ThresholdSpec, TreeParams
from .clustering import ClusterParams, parse_k_range
from .errors import ConfigError, InvariantError, SeasonLoadError
from .ingestion import LoadFormatConfig, SocioFormatConfig, load_json
from .preprocessing import OutlierRule
from .synthetic import CohortSpec, generate, income_shift_spec, write_cohort

log = logging.getLogger("seasonload")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse would exit 2, which we reserve for data errors
        raise UsageError(message)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="RunConfig JSON; flags override its values")
    p.add_argument("--out", help="artifact directory (overrides output_dir)")


def _add_ingest(p: argparse.ArgumentParser) -> None:
    p.add_argument("--load", help="hourly load CSV")
    p.add_argument("--load-format", help="LoadFormatConfig JSON file")


def _add_socio(p: argparse.ArgumentParser) -> None:
    p.add_argument("--socio", help="household metadata CSV")
    p.add_argument("--socio-format", help="SocioFormatConfig JSON file")


def _add_preprocess(p: argparse.ArgumentParser) -> None:
    p.add_argument("--cap-multiplier", type=float, help="outlier cap as a multiple of the median positive load")


def _add_cluster(p: argparse.ArgumentParser) -> None:
    p.add_argument("--metric", choices=["euclidean", "manhattan"])
    p.add_argument("--seed", type=int)
    p.add_argument("--k-range", help='stage-2 candidates, e.g. "2..10" or "2,4,6"')
    p.add_argument("--max-iter", type=int)
    p.add_argument("--n-init", type=int, help="K-Medoids restarts per fit")


def _add_entropy(p: argparse.ArgumentParser) -> None:
    p.add_argument("--smoothing", type=float)
    p.add_argument("--min-days", type=int)


def _add_classify(p: argparse.ArgumentParser, seed: bool = True) -> None:
    p.add_argument("--threshold-mode", choices=["quantile", "reference_distribution", "absolute"])
    p.add_argument("--threshold-param", type=float)
    p.add_argument("--threshold-scope", choices=["pooled", "per_change"])
    p.add_argument("--max-splits", type=int)
    p.add_argument("--min-leaf", type=int)
    p.add_argument("--folds", type=int)
    if seed:
        p.add_argument("--cv-seed", "--seed", dest="cv_seed", type=int)
    else:
        p.add_argument("--cv-seed", type=int)


def _add_report(p: argparse.ArgumentParser) -> None:
    p.add_argument("--consumers", help="comma-separated consumers for the cluster timeline")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="seasonload", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="parse load (and optionally socio) CSVs into the canonical format")
    _add_common(p), _add_ingest(p), _add_socio(p)
    p = sub.add_parser("preprocess", help="complete days, drop outliers, normalize")
    _add_common(p), _add_preprocess(p)
    p = sub.add_parser("cluster", help="two-stage K-Medoids and day assignment")
    _add_common(p), _add_cluster(p)
    p = sub.add_parser("entropy", help="seasonal distributions and relative entropy")
    _add_common(p), _add_entropy(p)
    p = sub.add_parser("classify", help="variation labels, decision trees, importance")
    _add_common(p), _add_classify(p), _add_socio(p)
    p = sub.add_parser("report", help="plot data and run summary")
    _add_common(p), _add_report(p)
    p = sub.add_parser("run", help="full pipeline")
    _add_common(p), _add_ingest(p), _add_socio(p), _add_preprocess(p), _add_cluster(p)
    _add_entropy(p), _add_classify(p, seed=False), _add_report(p)
    p = sub.add_parser("synth", help="generate a synthetic cohort with ground truth")
    p.add_argument("--spec", help="CohortSpec JSON file")
    p.add_argument("--preset", choices=["default", "income"], default="default")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    return parser


def _config(args: argparse.Namespace) -> pl.RunConfig:
    cfg = pl.RunConfig.from_file(args.config) if args.config else pl.RunConfig()
    get = lambda name: getattr(args, name, None)  # noqa: E731
    cwd = Path.cwd()

    def rel(path: str) -> str:
        return str((cwd / path).resolve().relative_to(cfg.base_dir.resolve())) if _under(cwd / path, cfg.base_dir) \
            else str((cwd / path).resolve())

    if get("out"):
        cfg.output_dir = rel(args.out)
    if get("load"):
        cfg.load_csv = rel(args.load)
    if get("load_format"):
        cfg.load_format = LoadFormatConfig.from_dict(load_json(args.load_format))
    if get("socio"):
        cfg.socio_csv = rel(args.socio)
    if get("socio_format"):
        cfg.socio_format = SocioFormatConfig.from_dict(load_json(args.socio_format))
    if get("cap_multiplier") is not None:
        cfg.outlier = OutlierRule.from_dict({"cap_multiplier": args.cap_multiplier,
                                             "drop_negative": cfg.outlier.drop_negative})
    c = cfg.clustering.to_dict()
    for key in ("metric", "seed", "max_iter", "n_init"):
        if get(key) is not None:
            c[key] = get(key)
    if get("k_range"):
        c["k_range"] = list(parse_k_range(args.k_range))
    cfg.clustering = ClusterParams.from_dict(c)
    if get("smoothing") is not None:
        cfg.smoothing = args.smoothing
    if get("min_days") is not None:
        cfg.min_days = args.min_days
    t = cfg.threshold.to_dict()
    if get("threshold_mode"):
        t["mode"] = args.threshold_mode
        if get("threshold_param") is None:
            t["parameter"] = {"quantile": 2 / 3, "reference_distribution": 0.25, "absolute": 0.0}[args.threshold_mode]
    if get("threshold_param") is not None:
        t["parameter"] = args.threshold_param
    if get("threshold_scope"):
        t["scope"] = args.threshold_scope
    cfg.threshold = ThresholdSpec.from_dict(t)
    tr = cfg.tree.to_dict()
    for key, name in (("max_splits", "max_splits"), ("min_leaf", "min_leaf"), ("folds", "folds"), ("seed", "cv_seed")):
        if get(name) is not None:
            tr[key] = get(name)
    cfg.tree = TreeParams.from_dict(tr)
    if get("consumers"):
        cfg.figure_consumers = [c.strip() for c in args.consumers.split(",") if c.strip()]
    cfg.check()
    return cfg


def _under(path: Path, base: Path) -> bool:
    try:
        path.resolve().relative_to(base.resolve())
        return True
    except ValueError:
        return False


def _synth(args: argparse.Namespace) -> dict[str, Any]:
    if args.spec:
        payload = load_json(args.spec)
        if args.seed is not None:
            payload["seed"] = args.seed
        spec = CohortSpec.from_dict(payload)
    elif args.preset == "income":
        spec = income_shift_spec(seed=args.seed or 0)
    else:
        spec = CohortSpec(seed=args.seed or 0)
    paths = write_cohort(generate(spec), args.out)
    return {k: str(v) for k, v in paths.items()}


def dispatch(args: argparse.Namespace) -> Any:
    if args.command == "synth":
        return _synth(args)
    cfg = _config(args)
    cfg.out.mkdir(parents=True, exist_ok=True)
    if args.command == "run":
        return pl.run_pipeline(cfg)
    stage = {
        "ingest": lambda: pl.stage_ingest(cfg, with_socio=True),
        "preprocess": lambda: pl.stage_preprocess(cfg),
        "cluster": lambda: pl.stage_cluster(cfg),
        "entropy": lambda: pl.stage_entropy(cfg),
        "classify": lambda: pl.stage_classify(cfg),
        "report": lambda: pl.stage_report(cfg),
    }[args.command]
    try:
        stage()
    except SeasonLoadError as exc:
        raise pl.StageError(args.command, exc) from exc
    return {"stage": args.command, "output_dir": str(cfg.out)}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"seasonload: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = dispatch(args)
    except UsageError as exc:
        print(f"seasonload: error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"seasonload: config error: {exc}", file=sys.stderr)
        return 1
    except SeasonLoadError as exc:
        print(f"seasonload: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (AssertionError, InvariantError) as exc:
        print(f"seasonload: internal invariant violated: {exc}", file=sys.stderr)
        return 3
    if isinstance(result, dict) and args.command in ("run", "synth"):
        summary = result if args.command == "synth" else {
            k: result[k] for k in ("chosen_K", "re_median_by_change", "top_importance_by_change")}
        print(json.dumps(summary, indent=1))
    return 0


if __name__ == "__main__":
    sys.exit(main())
