"""Synthetic cohorts with planted load shapes and socioeconomic seasonal shifts.

Every day of every consumer is drawn from a known prototype, so clustering,
relative-entropy and importance results can be checked against ground truth.
Loads are emitted on an exact 1/1024 kWh grid (prototypes on a 1/128 grid,
magnitudes in steps of 1/8 kWh) so that scaling a consumer by an integer is
exact in floating point.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import ConfigError
from .ingestion import SeasonConfig, seasons_of
from .seasonal import SEASON_CHANGES, relative_entropy

PROTOTYPE_GRID = 128
KWH_GRID = 1024
MAGNITUDE_STEPS = (4, 24)  # magnitude = m / 8 kWh, m in [4, 24]

AGE_BANDS = ("under_5", "age_5_17", "age_18_64", "over_65")
AGE_BAND_WEIGHTS = {
    "under_5": (0.6, 0.3, 0.1),
    "age_5_17": (0.45, 0.25, 0.2, 0.1),
    "age_18_64": (0.05, 0.3, 0.45, 0.15, 0.05),
    "over_65": (0.65, 0.25, 0.1),
}
INCOME_BRACKETS = (
    "Less than $25,000", "$25,000 - $34,999", "$35,000 - $49,999", "$50,000 - $74,999",
    "$75,000 - $99,999", "$100,000 - $149,999", "$150,000 - $199,999", "$200,000 or more",
)
EDUCATION_LEVELS = (
    "Less than high school", "High school graduate", "Some college", "Bachelor's degree",
    "Graduate degree",
)
LOAD_FORMAT = {"consumer_col": "dataid", "timestamp_col": "local_hour", "kwh_col": "use",
               "timestamp_format": "%Y-%m-%d %H:%M:%S"}


def default_prototypes(n: int, width: float = 1.5, base: float = 0.1, offset: float = 1.0) -> list[list[float]]:
    """``n`` single-peak day shapes with peaks evenly spread over the day."""
    hours = np.arange(24)
    out = []
    for i in range(n):
        peak = (offset + 24.0 * i / n) % 24
        gap = np.minimum(np.abs(hours - peak), 24 - np.abs(hours - peak))
        shape = base + (1 - base) * np.exp(-gap ** 2 / (2 * width ** 2))
        out.append((np.round(shape * PROTOTYPE_GRID) / PROTOTYPE_GRID).tolist())
    return out


@dataclass
class ShiftRule:
    """Move ``shifts[season]`` of a consumer's mass onto one prototype in that season.

    The target is the consumer's primary prototype plus ``to_offset`` (mod the
    prototype count). ``attribute=None`` applies to everyone; otherwise the rule
    fires when the socio attribute is >= ``min_value``.
    """

    shifts: dict[int, float]
    to_offset: int = 2
    attribute: str | None = None
    min_value: float = 0.0

    def applies(self, socio: Mapping[str, int]) -> bool:
        return self.attribute is None or socio[self.attribute] >= self.min_value


@dataclass
class CohortSpec:
    n_consumers: int = 200
    years: int = 3
    start_year: int = 2015
    n_prototypes: int = 6
    prototypes: list[list[float]] | None = None
    archetypes: list[list[float]] | None = None  # base mixture over prototypes, one per archetype
    socio_rules: list[ShiftRule] = field(default_factory=list)
    noise_sigma: float = 0.03
    seed: int = 0

    def __post_init__(self) -> None:
        self.socio_rules = [r if isinstance(r, ShiftRule) else ShiftRule(**r) for r in self.socio_rules]
        for r in self.socio_rules:
            r.shifts = {int(k): float(v) for k, v in r.shifts.items()}
        if self.prototypes is None:
            self.prototypes = default_prototypes(self.n_prototypes)
        self.prototypes = (np.round(np.asarray(self.prototypes, dtype=np.float64) * PROTOTYPE_GRID)
                           / PROTOTYPE_GRID).tolist()
        self.n_prototypes = len(self.prototypes)
        if self.archetypes is None:
            self.archetypes = default_archetypes(self.n_prototypes)
        self.validate()

    def validate(self) -> None:
        P = np.asarray(self.prototypes)
        if P.ndim != 2 or P.shape[1] != 24 or len(P) == 0:
            raise ConfigError("prototypes must be a non-empty list of 24-vectors")
        if (P < 0).any():
            raise ConfigError("prototypes must be non-negative")
        if self.n_consumers < 1 or self.years < 1:
            raise ConfigError("need at least one consumer and one year")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        min_sep = 4 * self.noise_sigma * math.sqrt(24)
        for i in range(len(P)):
            for j in range(i + 1, len(P)):
                d = float(np.linalg.norm(P[i] - P[j]))
                if d < min_sep:
                    raise ConfigError(f"prototypes {i} and {j} are {d:.3f} apart; need >= {min_sep:.3f} "
                                      f"for noise_sigma={self.noise_sigma}")
        for a in self.archetypes:
            if len(a) != len(P) or min(a) < 0 or abs(sum(a) - 1) > 1e-9:
                raise ConfigError("each archetype must be a probability vector over the prototypes")
        for r in self.socio_rules:
            if not set(r.shifts) <= {1, 2, 3, 4} or not all(0 <= v <= 1 for v in r.shifts.values()):
                raise ConfigError("shift rules need seasons in 1..4 and fractions in [0, 1]")
            if r.attribute is not None and r.attribute not in (*AGE_BANDS, "income_level", "education_level"):
                raise ConfigError(f"unknown socio attribute {r.attribute!r}")

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "CohortSpec":
        try:
            return cls(**payload)
        except TypeError as exc:
            raise ConfigError(f"bad cohort spec: {exc}") from exc

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["socio_rules"] = [{**asdict(r), "shifts": {str(k): v for k, v in r.shifts.items()}}
                              for r in self.socio_rules]
        return out


def default_archetypes(n_prototypes: int, main: float = 0.75) -> list[list[float]]:
    if n_prototypes == 1:
        return [[1.0]]
    out = []
    for a in range(n_prototypes):
        m = [0.0] * n_prototypes
        m[a] += main
        m[(a + 1) % n_prototypes] += 1 - main
        out.append(m)
    return out


def income_shift_spec(seed: int = 0, n_consumers: int = 200, years: int = 3, income_min: int = 5,
                    **kwargs: Any) -> CohortSpec:
    """Six shapes; a mild summer cooling shift for everyone, and for high-income households
    extra shifts that make every season change differ."""
    rules = [
        ShiftRule({2: 0.1}, to_offset=2),
        ShiftRule({1: 0.4}, to_offset=1, attribute="income_level", min_value=income_min),
        ShiftRule({2: 0.6}, to_offset=2, attribute="income_level", min_value=income_min),
        ShiftRule({3: 0.05, 4: 0.45}, to_offset=3, attribute="income_level", min_value=income_min),
    ]
    return CohortSpec(n_consumers=n_consumers, years=years, n_prototypes=6, socio_rules=rules,
                      seed=seed, **kwargs)


def seasonal_mixtures(base: np.ndarray, primary: int, socio: Mapping[str, int],
                      rules: Sequence[ShiftRule]) -> dict[int, np.ndarray]:
    P = len(base)
    out = {}
    for s in (1, 2, 3, 4):
        m = base.copy()
        for r in rules:
            frac = r.shifts.get(s, 0.0)
            if frac and r.applies(socio):
                target = np.zeros(P)
                target[(primary + r.to_offset) % P] = 1.0
                m = (1 - frac) * m + frac * target
        out[s] = m
    return out


def planted_variation(socio: Mapping[str, int], rules: Sequence[ShiftRule]) -> dict[str, bool]:
    """A change is planted as variation when an attribute-conditioned rule that fires for this
    consumer shifts the two seasons by different amounts."""
    out = {}
    for c in SEASON_CHANGES:
        out[c.name] = any(
            r.attribute is not None and r.applies(socio)
            and r.shifts.get(c.source, 0.0) != r.shifts.get(c.target, 0.0)
            for r in rules
        )
    return out


def _draw_socio(rng: np.random.Generator) -> dict[str, int]:
    socio = {b: int(rng.choice(len(w), p=w)) for b, w in AGE_BAND_WEIGHTS.items()}
    socio["income_level"] = int(rng.integers(len(INCOME_BRACKETS)))
    socio["education_level"] = int(rng.integers(len(EDUCATION_LEVELS)))
    return socio


@dataclass
class Cohort:
    spec: CohortSpec
    consumers: list[str]
    dates: np.ndarray
    loads: np.ndarray  # (n_consumers, n_days, 24) kWh
    socio: list[dict[str, int]]
    truth: dict[str, Any]


def generate(spec: CohortSpec) -> Cohort:
    rng = np.random.default_rng(spec.seed)
    protos = np.asarray(spec.prototypes, dtype=np.float64)
    P = len(protos)
    start = np.datetime64(f"{spec.start_year}-01-01")
    end = np.datetime64(f"{spec.start_year + spec.years}-01-01")
    dates = np.arange(start, end, dtype="datetime64[D]")
    season = seasons_of(dates, SeasonConfig())
    consumers = [str(1000 + i) for i in range(spec.n_consumers)]
    loads = np.empty((spec.n_consumers, len(dates), 24))
    socios, truth_rows = [], {}
    arche_w = np.full(len(spec.archetypes), 1.0 / len(spec.archetypes))
    for i, cid in enumerate(consumers):
        socio = _draw_socio(rng)
        arche = int(rng.choice(len(spec.archetypes), p=arche_w))
        base = np.asarray(spec.archetypes[arche], dtype=np.float64)
        primary = int(np.argmax(base))
        mixtures = seasonal_mixtures(base, primary, socio, spec.socio_rules)
        magnitude = int(rng.integers(MAGNITUDE_STEPS[0], MAGNITUDE_STEPS[1] + 1)) / 8

        day_proto = np.empty(len(dates), dtype=np.int64)
        for s in (1, 2, 3, 4):
            sel = np.flatnonzero(season == s)
            day_proto[sel] = rng.choice(P, size=len(sel), p=mixtures[s] / mixtures[s].sum())
        shape = protos[day_proto] + rng.normal(0.0, spec.noise_sigma, size=(len(dates), 24))
        kwh = np.round(np.maximum(shape, 0.0) * magnitude * KWH_GRID) / KWH_GRID
        loads[i] = kwh

        true_re = {}
        for c in SEASON_CHANGES:
            true_re[c.name] = relative_entropy(mixtures[c.source], mixtures[c.target], P) if P > 1 else 0.0
        socios.append(socio)
        truth_rows[cid] = {
            "archetype": arche,
            "magnitude_kwh": magnitude,
            "socio": socio,
            "mixtures": {str(s): m.tolist() for s, m in mixtures.items()},
            "true_re": true_re,
            "planted_variation": planted_variation(socio, spec.socio_rules),
            "day_prototypes": day_proto.tolist(),
        }
    truth = {
        "spec": spec.to_dict(),
        "start_date": str(dates[0]),
        "n_days": len(dates),
        "consumers": truth_rows,
    }
    return Cohort(spec, consumers, dates, loads, socios, truth)


def socio_format() -> dict[str, Any]:
    return {
        "consumer_col": "dataid",
        "age_band_cols": {b: b for b in AGE_BANDS},
        "income_col": "income",
        "education_col": "education",
        "income_order": list(INCOME_BRACKETS),
        "education_order": list(EDUCATION_LEVELS),
    }


def write_cohort(cohort: Cohort, directory: str | Path) -> dict[str, Path]:
    """Writes the load CSV, socio CSV, ground truth and the matching format configs."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "load": directory / "synthetic_load.csv",
        "socio": directory / "synthetic_socio.csv",
        "truth": directory / "ground_truth.json",
        "load_format": directory / "load_format.json",
        "socio_format": directory / "socio_format.json",
    }
    stamps = [f"{d} {h:02d}:00:00" for d in cohort.dates.astype(str) for h in range(24)]
    with open(paths["load"], "w", encoding="utf-8", newline="") as fh:
        fh.write("dataid,local_hour,use\r\n")
        for cid, block in zip(cohort.consumers, cohort.loads):
            fh.write("".join(f"{cid},{t},{v!r}\r\n" for t, v in zip(stamps, block.ravel().tolist())))
    with open(paths["socio"], "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(["dataid", *AGE_BANDS, "income", "education"]) + "\r\n")
        for cid, s in zip(cohort.consumers, cohort.socio):
            row = [cid, *(str(s[b]) for b in AGE_BANDS), f'"{INCOME_BRACKETS[s["income_level"]]}"',
                   f'"{EDUCATION_LEVELS[s["education_level"]]}"']
            fh.write(",".join(row) + "\r\n")
    _write_json(paths["truth"], cohort.truth)
    _write_json(paths["load_format"], LOAD_FORMAT)
    _write_json(paths["socio_format"], socio_format())
    return paths


def _write_json(path: Path, payload: Any) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def cohort_dataset(cohort: Cohort):
    """In-memory Dataset equivalent to parsing the written CSVs (skips the text round trip)."""
    from .ingestion import Dataset, SocioProfile

    n_c, n_d = len(cohort.consumers), len(cohort.dates)
    consumer = np.repeat(np.array(cohort.consumers, dtype=object), n_d * 24)
    date = np.tile(np.repeat(cohort.dates, 24), n_c)
    hour = np.tile(np.arange(24), n_c * n_d)
    socio = {
        cid: SocioProfile(cid, {b: s[b] for b in AGE_BANDS}, s["income_level"], s["education_level"])
        for cid, s in zip(cohort.consumers, cohort.socio)
    }
    return Dataset(consumer, date, hour, cohort.loads.reshape(-1).copy(), socio)
