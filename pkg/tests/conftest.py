from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from seasonload.ingestion import LoadFormatConfig, SocioFormatConfig

LOAD_FMT = LoadFormatConfig("id", "ts", "kwh", "%Y-%m-%dT%H")
SOCIO_FMT = SocioFormatConfig(
    consumer_col="id",
    age_band_cols={"under5": "under5", "over65": "over65"},
    income_col="income",
    education_col="edu",
)


def dir_diffs(a: Path, b: Path, ignore: frozenset[str] = frozenset()) -> list[str]:
    """Names of files that are missing on one side or differ byte for byte."""
    names_a = {p.name for p in Path(a).iterdir() if p.is_file()}
    names_b = {p.name for p in Path(b).iterdir() if p.is_file()}
    out = names_a ^ names_b
    out |= {n for n in names_a & names_b if (Path(a) / n).read_bytes() != (Path(b) / n).read_bytes()}
    return sorted(out - set(ignore))


def write_text(path: Path, text: str) -> Path:
    path.write_text(text, encoding="utf-8")
    return path


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
