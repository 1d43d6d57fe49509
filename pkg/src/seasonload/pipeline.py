"""Stage runners, run configuration and plot-data emission.

Each stage reads its inputs from the previous stage's artifacts (or from memory
when chained by :func:`run_pipeline`) and persists its own outputs into one
flat output directory, so a full run and a stage-by-stage run are byte-identical.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import classification as cls_
from . import clustering as clu
from . import seasonal as sea
from .errors import ConfigError, DataError, SeasonLoadError
from .ingestion import (Dataset, LoadFormatConfig, SeasonConfig, SocioFormatConfig, SocioProfile,
                        load_json, parse_load_csv, parse_socio_csv, read_dataset, read_socio, write_socio, write_dataset)
from .preprocessing import DAYS_FILE, REPORT_FILE, DayBatch, OutlierRule, preprocess, read_days, write_days

log = logging.getLogger(__name__)

STAGES = ("ingest", "preprocess", "cluster", "entropy", "classify", "report")


class StageError(SeasonLoadError):
    def __init__(self, stage: str, cause: SeasonLoadError):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = cause.exit_code


@dataclass
class RunConfig:
    load_csv: str | None = None
    socio_csv: str | None = None
    output_dir: str = "out"
    load_format: LoadFormatConfig | None = None
    socio_format: SocioFormatConfig | None = None
    seasons: SeasonConfig = field(default_factory=SeasonConfig)
    outlier: OutlierRule = field(default_factory=OutlierRule)
    clustering: clu.ClusterParams = field(default_factory=clu.ClusterParams)
    smoothing: float = sea.DEFAULT_SMOOTHING
    min_days: int = sea.DEFAULT_MIN_DAYS
    threshold: cls_.ThresholdSpec = field(default_factory=cls_.ThresholdSpec)
    tree: cls_.TreeParams = field(default_factory=cls_.TreeParams)
    figure_consumers: list[str] | None = None
    base_dir: Path = field(default_factory=Path.cwd, repr=False)

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        return cls.from_dict(load_json(path), base_dir=path.parent)

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any], base_dir: Path | None = None) -> "RunConfig":
        base_dir = base_dir or Path.cwd()
        known = {"load_csv", "socio_csv", "output_dir", "load_format", "socio_format", "seasons", "outlier",
                 "clustering", "smoothing", "min_days", "threshold", "tree", "figure_consumers"}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown run config key(s): {sorted(unknown)}")

        def sub(key: str) -> Any:
            raw = payload.get(key)
            if isinstance(raw, str):  # path to a JSON file
                return load_json(base_dir / raw)
            return raw

        lf, sf = sub("load_format"), sub("socio_format")
        cfg = cls(
            load_csv=payload.get("load_csv"),
            socio_csv=payload.get("socio_csv"),
            output_dir=payload.get("output_dir", "out"),
            load_format=LoadFormatConfig.from_dict(lf) if lf else None,
            socio_format=SocioFormatConfig.from_dict(sf) if sf else None,
            seasons=SeasonConfig.from_dict(sub("seasons")),
            outlier=OutlierRule.from_dict(payload.get("outlier")),
            clustering=clu.ClusterParams.from_dict(payload.get("clustering")),
            smoothing=float(payload.get("smoothing", sea.DEFAULT_SMOOTHING)),
            min_days=int(payload.get("min_days", sea.DEFAULT_MIN_DAYS)),
            threshold=cls_.ThresholdSpec.from_dict(payload.get("threshold")),
            tree=cls_.TreeParams.from_dict(payload.get("tree")),
            figure_consumers=payload.get("figure_consumers"),
            base_dir=base_dir,
        )
        cfg.check()
        return cfg

    def check(self) -> None:
        if self.smoothing < 0:
            raise ConfigError("smoothing must be >= 0")
        if self.min_days < 1:
            raise ConfigError("min_days must be >= 1")

    def resolve(self, raw: str | None) -> Path | None:
        return None if raw is None else self.base_dir / raw

    @property
    def out(self) -> Path:
        return self.base_dir / self.output_dir

    def to_dict(self) -> dict[str, Any]:
        """Inputs and parameters only; the output location is deliberately left out so that
        identical runs into different directories produce identical artifacts."""
        return {
            "load_csv": self.load_csv,
            "socio_csv": self.socio_csv,
            "load_format": self.load_format.to_dict() if self.load_format else None,
            "socio_format": self.socio_format.to_dict() if self.socio_format else None,
            "seasons": self.seasons.to_dict(),
            "outlier": {"cap_multiplier": self.outlier.cap_multiplier, "drop_negative": self.outlier.drop_negative},
            "clustering": self.clustering.to_dict(),
            "smoothing": self.smoothing,
            "min_days": self.min_days,
            "threshold": self.threshold.to_dict(),
            "tree": self.tree.to_dict(),
            "figure_consumers": self.figure_consumers,
        }


def _write_json(path: Path, payload: Any) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=1, allow_nan=False)
        fh.write("\n")


def _read_json(path: Path) -> Any:
    if not path.exists():
        raise DataError(f"missing artifact {path.name} in {path.parent}")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# -- stages ---------------------------------------------------------------

def stage_ingest(cfg: RunConfig, with_socio: bool = False) -> Dataset:
    load = cfg.resolve(cfg.load_csv)
    if load is None or cfg.load_format is None:
        raise ConfigError("ingest needs load_csv and load_format")
    if not load.exists():
        raise DataError(f"load file not found: {load}")
    ds = parse_load_csv(load, cfg.load_format)
    report: dict[str, Any] = {"load": ds.report.to_dict(), "n_readings": len(ds),
                              "n_consumers": len(ds.consumers),
                              "span": [str(d) for d in ds.span] if ds.span else None}
    if with_socio and cfg.socio_csv:
        profiles, srep = load_socio(cfg)
        ds.socio = {p.consumer: p for p in profiles}
        report["socio"] = srep
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_dataset(ds, cfg.out)
    _write_json(cfg.out / "ingest_report.json", report)
    return ds


def load_socio(cfg: RunConfig) -> tuple[list[SocioProfile], dict[str, Any]]:
    path = cfg.resolve(cfg.socio_csv)
    if path is None or cfg.socio_format is None:
        raise ConfigError("socioeconomic data needs socio_csv and socio_format")
    if not path.exists():
        raise DataError(f"socio file not found: {path}")
    profiles, report = parse_socio_csv(path, cfg.socio_format)
    return profiles, report.to_dict()


def stage_preprocess(cfg: RunConfig, dataset: Dataset | None = None) -> DayBatch:
    if dataset is None:
        dataset = read_dataset(cfg.out)
    days, report = preprocess(dataset, cfg.outlier)
    write_days(days, cfg.out / DAYS_FILE)
    _write_json(cfg.out / REPORT_FILE, {**report.to_dict(), "outlier_rule": {
        "cap_multiplier": cfg.outlier.cap_multiplier, "drop_negative": cfg.outlier.drop_negative}})
    return days


def stage_cluster(cfg: RunConfig, days: DayBatch | None = None) -> tuple[DayBatch, clu.ClusterModel]:
    if days is None:
        days = read_days(cfg.out / DAYS_FILE)
    stage1, model = clu.run_two_stage(days, cfg.clustering)
    clu.write_cluster_outputs(cfg.out, days, stage1, model)
    return days, model


def read_assignments(out: Path) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    model = _read_json(out / clu.MODEL_FILE)
    path = out / clu.ASSIGNMENTS_FILE
    if not path.exists():
        raise DataError(f"missing artifact {path.name} in {out}")
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    return (np.array([r["consumer"] for r in rows], dtype=object),
            np.array([r["date"] for r in rows], dtype="datetime64[D]"),
            np.array([int(r["cluster"]) for r in rows], dtype=np.int64),
            int(model["K"]))


def stage_entropy(cfg: RunConfig, days: DayBatch | None = None,
                  model: clu.ClusterModel | None = None) -> sea.EntropyTable:
    if days is None or model is None:
        consumers, dates, clusters, K = read_assignments(cfg.out)
    else:
        consumers, dates, clusters, K = days.consumer, days.date, model.day_assignment, model.K
    table = sea.entropy_table(consumers, dates, clusters, K, cfg.seasons, cfg.smoothing, cfg.min_days)
    sea.write_entropy_outputs(cfg.out, table, cfg.smoothing, cfg.min_days)
    return table


def _socio_for_classify(cfg: RunConfig) -> tuple[dict[str, SocioProfile], list[str]]:
    if cfg.socio_csv is not None:
        profiles, report = load_socio(cfg)
        _write_json(cfg.out / "socio_report.json", report)
        socio = {p.consumer: p for p in profiles}
        write_socio(socio, cfg.out)  # later staged runs can classify without the CSV
        return socio, list(cfg.socio_format.age_band_cols)
    socio = read_socio(cfg.out)
    if socio:
        return socio, list(socio[min(socio)].residents_by_age)
    raise DataError("no socioeconomic data: set socio_csv/socio_format or ingest with --socio")


def stage_classify(cfg: RunConfig, records: Sequence[sea.EntropyRecord] | None = None,
                   K: int | None = None) -> dict[sea.SeasonChange, cls_.ClassifierResult]:
    socio, bands = _socio_for_classify(cfg)
    if records is None:
        records = sea.read_entropy_csv(cfg.out / sea.ENTROPY_FILE)
    if K is None:
        K = int(_read_json(cfg.out / clu.MODEL_FILE)["K"])
    results = cls_.classify(records, socio, bands, K, cfg.threshold, cfg.tree)
    cls_.write_classify_outputs(cfg.out, results, cfg.threshold, cfg.tree)
    if all(r.error for r in results.values()):
        raise DataError("every classifier failed: " + "; ".join(r.error for r in results.values()))
    return results


FIG_TIMELINE = "fig_cluster_timeline.csv"
FIG_BOXPLOT = "fig_re_boxplot.json"
FIG_IMPORTANCE = "fig_importance.csv"
RUN_REPORT = "run_report.json"


def emit_figures(out: str | Path, consumers: Sequence[str] | None = None) -> dict[str, Path]:
    """Plot data for the cluster timeline, RE box plot and importance bars."""
    out = Path(out)
    c_arr, d_arr, k_arr, _ = read_assignments(out)
    wanted = None if consumers is None else set(consumers)
    if wanted is not None:
        missing = wanted - set(c_arr.tolist())
        if missing:
            raise DataError(f"consumer(s) with no retained days: {sorted(missing)}")
    with open(out / FIG_TIMELINE, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["consumer", "date", "cluster"])
        for c, d, k in zip(c_arr.tolist(), d_arr.astype(str).tolist(), k_arr.tolist()):
            if wanted is None or c in wanted:
                w.writerow([c, d, k])
    box = _read_json(out / sea.BOXPLOT_FILE)
    _write_json(out / FIG_BOXPLOT, box["boxplot"])
    imp_path = out / cls_.IMPORTANCE_FILE
    if not imp_path.exists():
        raise DataError(f"missing artifact {imp_path.name} in {out}")
    with open(imp_path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    with open(out / FIG_IMPORTANCE, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["change", "feature", "importance"])
        for r in rows:
            w.writerow([r["change"], r["feature"], r["importance"]])
    return {"timeline": out / FIG_TIMELINE, "boxplot": out / FIG_BOXPLOT, "importance": out / FIG_IMPORTANCE}


def stage_report(cfg: RunConfig) -> dict[str, Any]:
    figs = emit_figures(cfg.out, cfg.figure_consumers)
    model = _read_json(cfg.out / clu.MODEL_FILE)
    box = _read_json(cfg.out / sea.BOXPLOT_FILE)["boxplot"]
    cv = _read_json(cfg.out / cls_.CV_FILE)
    with open(cfg.out / cls_.IMPORTANCE_FILE, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    top3: dict[str, list[dict[str, Any]]] = {}
    for change in sea.SEASON_CHANGES:
        mine = [(float(r["importance"]), i, r["feature"]) for i, r in enumerate(rows) if r["change"] == change.name]
        mine.sort(key=lambda t: (-t[0], t[1]))
        top3[change.name] = [{"feature": f, "importance": v} for v, _, f in mine[:3]]
    report = {
        "config": cfg.to_dict(),
        "chosen_K": model["K"],
        "silhouette_by_k": model["silhouette_by_k"],
        "re_median_by_change": {k: v["median"] for k, v in box.items()},
        "top_importance_by_change": top3,
        "cv_accuracy_by_change": {k: v.get("mean_accuracy") for k, v in cv["changes"].items()},
        "artifacts": sorted(p.name for p in cfg.out.iterdir() if p.is_file() and p.name != RUN_REPORT),
        "figures": {k: p.name for k, p in figs.items()},
    }
    _write_json(cfg.out / RUN_REPORT, report)
    return report


def _staged(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except SeasonLoadError as exc:
        raise StageError(name, exc) from exc


def run_pipeline(cfg: RunConfig) -> dict[str, Any]:
    """ingest -> preprocess -> cluster -> entropy -> classify -> report, persisting every stage.
    A fatal error aborts with the stage name; earlier artifacts stay on disk."""
    cfg.out.mkdir(parents=True, exist_ok=True)
    ds = _staged("ingest", stage_ingest, cfg)
    days = _staged("preprocess", stage_preprocess, cfg, ds)
    days, model = _staged("cluster", stage_cluster, cfg, days)
    table = _staged("entropy", stage_entropy, cfg, days, model)
    _staged("classify", stage_classify, cfg, table.records, model.K)
    return _staged("report", stage_report, cfg)
