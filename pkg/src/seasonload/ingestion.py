"""Parsing of hourly load and household metadata files into the in-memory data model."""

from __future__ import annotations

import datetime as dt
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Mapping

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

SEASON_NAMES = {1: "spring", 2: "summer", 3: "fall", 4: "winter"}

# meteorological seasons
DEFAULT_SEASON_MONTHS = {
    1: 4, 2: 4, 3: 1, 4: 1, 5: 1, 6: 2,
    7: 2, 8: 2, 9: 3, 10: 3, 11: 3, 12: 4,
}

MAX_SKIP_FRACTION = 0.5


@dataclass(frozen=True)
class SeasonConfig:
    """Month -> season (1=spring, 2=summer, 3=fall, 4=winter)."""

    months: Mapping[int, int] = field(default_factory=lambda: dict(DEFAULT_SEASON_MONTHS))

    def __post_init__(self) -> None:
        months = {int(m): int(s) for m, s in dict(self.months).items()}
        if sorted(months) != list(range(1, 13)):
            raise ConfigError("season config must map every month 1..12")
        if not set(months.values()) <= {1, 2, 3, 4}:
            raise ConfigError("season ids must be in 1..4")
        object.__setattr__(self, "months", months)

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any] | None) -> "SeasonConfig":
        if not payload:
            return cls()
        months = payload.get("months", payload)
        return cls({int(k): int(v) for k, v in months.items()})

    def to_dict(self) -> dict[str, Any]:
        return {"months": {str(m): s for m, s in sorted(self.months.items())}}

    def lookup(self) -> np.ndarray:
        """Array indexed by month number (index 0 unused)."""
        table = np.zeros(13, dtype=np.int8)
        for m, s in self.months.items():
            table[m] = s
        return table


def season_of(date: dt.date, seasons: SeasonConfig | None = None) -> int:
    seasons = seasons or SeasonConfig()
    return seasons.months[date.month]


def seasons_of(dates: np.ndarray, seasons: SeasonConfig | None = None) -> np.ndarray:
    """Vectorized season_of over a datetime64[D] array."""
    seasons = seasons or SeasonConfig()
    months = dates.astype("datetime64[M]").astype(np.int64) % 12 + 1
    return seasons.lookup()[months]


@dataclass(frozen=True)
class LoadFormatConfig:
    consumer_col: str
    timestamp_col: str
    kwh_col: str
    timestamp_format: str = "%Y-%m-%d %H:%M:%S"

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "LoadFormatConfig":
        try:
            return cls(**{k: str(v) for k, v in payload.items()})
        except TypeError as exc:
            raise ConfigError(f"bad load format config: {exc}") from exc

    def to_dict(self) -> dict[str, str]:
        return {
            "consumer_col": self.consumer_col,
            "timestamp_col": self.timestamp_col,
            "kwh_col": self.kwh_col,
            "timestamp_format": self.timestamp_format,
        }


@dataclass(frozen=True)
class SocioFormatConfig:
    """Column binding for the household metadata file.

    ``age_band_cols`` maps a band label to its source column. The ``*_order``
    fields encode bracket strings as ordinals: a list gives each entry its
    position, a dict gives explicit codes, ``None`` means the column already
    holds integers.
    """

    consumer_col: str
    age_band_cols: Mapping[str, str]
    income_col: str
    education_col: str
    income_order: Mapping[str, int] | None = None
    education_order: Mapping[str, int] | None = None

    @staticmethod
    def _order(raw: Any) -> dict[str, int] | None:
        if raw is None:
            return None
        if isinstance(raw, Mapping):
            return {str(k): int(v) for k, v in raw.items()}
        return {str(v): i for i, v in enumerate(raw)}

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "SocioFormatConfig":
        try:
            bands = payload["age_band_cols"]
            if not isinstance(bands, Mapping):
                bands = {str(c): str(c) for c in bands}
            return cls(
                consumer_col=str(payload["consumer_col"]),
                age_band_cols={str(k): str(v) for k, v in bands.items()},
                income_col=str(payload["income_col"]),
                education_col=str(payload["education_col"]),
                income_order=cls._order(payload.get("income_order")),
                education_order=cls._order(payload.get("education_order")),
            )
        except KeyError as exc:
            raise ConfigError(f"socio format config missing key {exc}") from exc

    def to_dict(self) -> dict[str, Any]:
        return {
            "consumer_col": self.consumer_col,
            "age_band_cols": dict(self.age_band_cols),
            "income_col": self.income_col,
            "education_col": self.education_col,
            "income_order": None if self.income_order is None else dict(self.income_order),
            "education_order": None if self.education_order is None else dict(self.education_order),
        }

    @property
    def feature_names(self) -> list[str]:
        return [*self.age_band_cols, "income_level", "education_level"]


@dataclass(frozen=True)
class HourlyReading:
    consumer: str
    date: dt.date
    hour: int
    load_kwh: float


@dataclass(frozen=True)
class SocioProfile:
    consumer: str
    residents_by_age: Mapping[str, int]
    income_level: int
    education_level: int

    def features(self, bands: list[str]) -> list[float]:
        return [*(float(self.residents_by_age[b]) for b in bands),
                float(self.income_level), float(self.education_level)]

    def to_dict(self) -> dict[str, Any]:
        return {
            "consumer": self.consumer,
            "residents_by_age": dict(self.residents_by_age),
            "income_level": self.income_level,
            "education_level": self.education_level,
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "SocioProfile":
        return cls(
            consumer=str(payload["consumer"]),
            residents_by_age={str(k): int(v) for k, v in payload["residents_by_age"].items()},
            income_level=int(payload["income_level"]),
            education_level=int(payload["education_level"]),
        )


@dataclass
class ParseReport:
    rows_total: int = 0
    rows_skipped: int = 0
    duplicates: int = 0
    errors: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "rows_total": self.rows_total,
            "rows_skipped": self.rows_skipped,
            "duplicates": self.duplicates,
            "errors": list(self.errors),
        }


@dataclass(eq=False)
class Dataset:
    """Readings held column-wise, sorted by (consumer, date, hour)."""

    consumer: np.ndarray
    date: np.ndarray
    hour: np.ndarray
    load_kwh: np.ndarray
    socio: dict[str, SocioProfile] = field(default_factory=dict)
    report: ParseReport = field(default_factory=ParseReport)

    def __len__(self) -> int:
        return len(self.load_kwh)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            np.array_equal(self.consumer, other.consumer)
            and np.array_equal(self.date, other.date)
            and np.array_equal(self.hour, other.hour)
            and np.array_equal(self.load_kwh.view(np.int64), other.load_kwh.view(np.int64))
            and self.socio == other.socio
        )

    @property
    def span(self) -> tuple[dt.date, dt.date] | None:
        if len(self) == 0:
            return None
        return (self.date.min().item(), self.date.max().item())

    @property
    def consumers(self) -> list[str]:
        return list(dict.fromkeys(self.consumer.tolist()))

    @property
    def readings(self) -> Iterator[HourlyReading]:
        for c, d, h, v in zip(self.consumer, self.date, self.hour, self.load_kwh):
            yield HourlyReading(str(c), d.item(), int(h), float(v))

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, **kwargs: Any) -> "Dataset":
        frame = frame.sort_values(["consumer", "date", "hour"], kind="stable")
        return cls(
            consumer=frame["consumer"].to_numpy(dtype=object),
            date=frame["date"].to_numpy(dtype="datetime64[D]"),
            hour=frame["hour"].to_numpy(dtype=np.int64),
            load_kwh=frame["load_kwh"].to_numpy(dtype=np.float64),
            **kwargs,
        )

    def scaled(self, consumer: str, factor: float) -> "Dataset":
        """Copy with one consumer's loads multiplied by ``factor``."""
        load = self.load_kwh.copy()
        load[self.consumer == consumer] *= factor
        return Dataset(self.consumer, self.date, self.hour, load, dict(self.socio), self.report)


def _parse_floats(text: np.ndarray) -> np.ndarray:
    """Correctly rounded decimal parsing (pandas' fast parser can be one ulp off); bad cells become NaN."""
    try:
        return text.astype(np.float64)
    except ValueError:
        pass
    out = np.empty(len(text))
    for i, cell in enumerate(text):
        try:
            out[i] = float(cell)
        except ValueError:
            out[i] = np.nan
    return out


def _read_csv(path: str | Path) -> pd.DataFrame:
    try:
        return pd.read_csv(path, dtype=str, keep_default_na=False)
    except (OSError, pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except pd.errors.EmptyDataError as exc:
        raise DataError(f"{path} is empty") from exc


def parse_load_csv(path: str | Path, fmt: LoadFormatConfig) -> Dataset:
    raw = _read_csv(path)
    missing = [c for c in (fmt.consumer_col, fmt.timestamp_col, fmt.kwh_col) if c not in raw.columns]
    if missing:
        raise DataError(f"{path}: missing configured column(s) {missing}")
    report = ParseReport(rows_total=len(raw))
    if len(raw) == 0:
        raise DataError(f"{path}: no data rows")

    consumer = raw[fmt.consumer_col].str.strip()
    ts = pd.to_datetime(raw[fmt.timestamp_col].str.strip(), format=fmt.timestamp_format, errors="coerce")
    kwh = pd.Series(_parse_floats(raw[fmt.kwh_col].str.strip().to_numpy(dtype=str)), index=raw.index)
    off_hour = (ts.dt.minute != 0) | (ts.dt.second != 0)
    good = (consumer != "") & ts.notna() & ~off_hour & np.isfinite(kwh)
    report.rows_skipped = int((~good).sum())
    if report.rows_skipped:
        report.errors.append(f"{report.rows_skipped} malformed row(s) skipped")
    if report.rows_skipped > MAX_SKIP_FRACTION * report.rows_total:
        raise DataError(
            f"{path}: {report.rows_skipped}/{report.rows_total} rows unparseable; check the load format config"
        )

    frame = pd.DataFrame({
        "consumer": consumer[good].to_numpy(dtype=object),
        "date": ts[good].dt.normalize().to_numpy(),
        "hour": ts[good].dt.hour.to_numpy(dtype=np.int64),
        "load_kwh": kwh[good].to_numpy(dtype=np.float64),
    })
    before = len(frame)
    frame = frame.drop_duplicates(subset=["consumer", "date", "hour"], keep="last")
    report.duplicates = before - len(frame)
    if report.duplicates:
        report.errors.append(f"{report.duplicates} duplicate (consumer, date, hour) row(s); kept last")
        log.warning("%s: %d duplicate readings, kept last occurrence", path, report.duplicates)
    return Dataset.from_frame(frame, report=report)


def _encode(value: str, order: Mapping[str, int] | None) -> int:
    if order is None:
        code = int(float(value)) if value.strip() else None
        if code is None or code != float(value):
            raise ValueError(value)
    else:
        if value not in order:
            raise KeyError(value)
        code = order[value]
    if code < 0:
        raise ValueError(value)
    return code


def parse_socio_csv(path: str | Path, fmt: SocioFormatConfig) -> tuple[list[SocioProfile], ParseReport]:
    """Returns the profiles plus a report whose ``errors`` lists skipped rows."""
    raw = _read_csv(path)
    mandatory = [fmt.consumer_col, *fmt.age_band_cols.values(), fmt.income_col, fmt.education_col]
    missing = [c for c in mandatory if c not in raw.columns]
    if missing:
        raise DataError(f"{path}: missing mandatory column(s) {missing}")
    ids = raw[fmt.consumer_col].str.strip()
    dup = ids[ids.duplicated()]
    if len(dup):
        raise DataError(f"{path}: duplicate consumer id(s) {sorted(set(dup))[:5]}")

    report = ParseReport(rows_total=len(raw))
    profiles = []
    for i, row in enumerate(raw.to_dict("records")):
        cid = row[fmt.consumer_col].strip()
        try:
            if not cid:
                raise ValueError("empty consumer id")
            ages = {band: _encode(row[col], None) for band, col in fmt.age_band_cols.items()}
            income = _encode(row[fmt.income_col].strip(), fmt.income_order)
            edu = _encode(row[fmt.education_col].strip(), fmt.education_order)
        except (KeyError, ValueError) as exc:
            report.rows_skipped += 1
            report.errors.append(f"row {i + 2} ({cid or '?'}): unmapped or invalid value {exc}")
            continue
        profiles.append(SocioProfile(cid, ages, income, edu))
    return profiles, report


# canonical on-disk form: one JSON-lines file per entity type

READINGS_FILE = "readings.jsonl"
SOCIO_FILE = "socio.jsonl"


def _dump(obj: Any) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def write_dataset(dataset: Dataset, directory: str | Path) -> None:
    """Readings are grouped one consumer-day per line to keep the file tractable."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    n = len(dataset)
    with open(directory / READINGS_FILE, "w", encoding="utf-8", newline="\n") as fh:
        if n:
            key_change = np.ones(n, dtype=bool)
            key_change[1:] = (dataset.consumer[1:] != dataset.consumer[:-1]) | (
                dataset.date[1:] != dataset.date[:-1])
            starts = np.flatnonzero(key_change).tolist() + [n]
            hours = dataset.hour.tolist()
            loads = dataset.load_kwh.tolist()
            for a, b in zip(starts[:-1], starts[1:]):
                fh.write(_dump({
                    "consumer": dataset.consumer[a],
                    "date": str(dataset.date[a]),
                    "hours": hours[a:b],
                    "kwh": loads[a:b],
                }) + "\n")
    write_socio(dataset.socio, directory)


def write_socio(socio: Mapping[str, SocioProfile], directory: str | Path) -> None:
    with open(Path(directory) / SOCIO_FILE, "w", encoding="utf-8", newline="\n") as fh:
        for cid in sorted(socio):
            fh.write(_dump(socio[cid].to_dict()) + "\n")


def read_dataset(directory: str | Path) -> Dataset:
    directory = Path(directory)
    path = directory / READINGS_FILE
    if not path.exists():
        raise DataError(f"missing canonical dataset file {path}")
    consumers, dates, hours, loads = [], [], [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            k = len(rec["hours"])
            consumers.extend([rec["consumer"]] * k)
            dates.extend([rec["date"]] * k)
            hours.extend(rec["hours"])
            loads.extend(rec["kwh"])
    socio = read_socio(directory)
    return Dataset(
        consumer=np.array(consumers, dtype=object),
        date=np.array(dates, dtype="datetime64[D]"),
        hour=np.array(hours, dtype=np.int64),
        load_kwh=np.array(loads, dtype=np.float64),
        socio=socio,
    )


def read_socio(directory: str | Path) -> dict[str, SocioProfile]:
    path = Path(directory) / SOCIO_FILE
    socio = {}
    if path.exists():
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                p = SocioProfile.from_dict(json.loads(line))
                socio[p.consumer] = p
    return socio


def load_json(path: str | Path) -> Any:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
