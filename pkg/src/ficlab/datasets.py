"""CSV ingestion and the bundled example datasets."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import ConfigError
from .glmfit import FocusSpec, GlmDataset
from .limitcore import requires

DATA_DIR = Path(str(resources.files("ficlab") / "data"))


@dataclass(frozen=True, eq=False)
class Table:
    """Numeric columns read from a headed CSV file."""

    columns: dict[str, np.ndarray]
    path: str = ""

    @property
    def names(self) -> list[str]:
        return list(self.columns)

    @property
    def n(self) -> int:
        return next(iter(self.columns.values())).size if self.columns else 0

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            raise ConfigError(f"column {name!r} not in {self.path or 'table'}; have {self.names}") from None

    def with_interaction(self, a: str, b: str, name: str | None = None) -> "Table":
        cols = dict(self.columns)
        cols[name or f"{a}_x_{b}"] = self[a] * self[b]
        return Table(cols, self.path)

    def design(self, response: str, protected: Sequence[str], open_: Sequence[str], family: str,
               intercept: bool = True, gamma0=None) -> GlmDataset:
        X = [np.ones(self.n)] if intercept else []
        X += [self[c] for c in protected]
        if not X:
            raise ConfigError("no protected columns and no intercept")
        Z = np.column_stack([self[c] for c in open_]) if open_ else np.empty((self.n, 0))
        x_names = (("intercept",) if intercept else ()) + tuple(protected)
        return GlmDataset(family, self[response], np.column_stack(X), Z, gamma0, x_names, tuple(open_))


def read_csv(path) -> Table:
    """Read a CSV with a header row; every column except ones named ``island``/``name``/``id`` must be numeric."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ConfigError(f"{path} is empty") from None
        rows = [r for r in reader if r and any(c.strip() for c in r)]
    if len(set(header)) != len(header):
        raise ConfigError(f"{path} has duplicate column names")
    cols: dict[str, np.ndarray] = {}
    for j, name in enumerate(header):
        raw = [r[j].strip() if j < len(r) else "" for r in rows]
        try:
            cols[name] = np.array([float(v) for v in raw])
        except ValueError:
            if name.lower() in ("island", "name", "id", "label"):
                continue
            raise ConfigError(f"{path}: column {name!r} is not numeric") from None
    return Table(cols, str(path))


# -- birth weight -----------------------------------------------------------

BIRTHWT_PROTECTED = ("age", "lwt_kg")
BIRTHWT_OPEN = ("smoke", "race2", "race3")


def load_birthwt() -> Table:
    return read_csv(DATA_DIR / "birthwt.csv")


def birthwt_dataset() -> GlmDataset:
    """Logistic model for ``low`` with intercept, age and weight protected; smoking and race dummies open."""
    return load_birthwt().design("low", BIRTHWT_PROTECTED, BIRTHWT_OPEN, "logistic")


def mrs_jones_focus() -> FocusSpec:
    """P(low birth weight) for a white 25-year-old smoker weighing 60 kg."""
    return FocusSpec("mean_response", (1.0, 25.0, 60.0), (1.0, 0.0, 0.0), description="Mrs. Jones")


# -- bird islands -----------------------------------------------------------

BIRD_PROTECTED = ("distance", "log_area")
BIRD_OPEN = ("habitats", "irish", "latitude", "longitude", "log_area_x_habitats", "distance_x_log_area")


def load_bird_islands(path=None) -> Table:
    path = Path(path) if path is not None else DATA_DIR / "bird_islands.csv"
    if not path.exists():
        raise FileNotFoundError(f"bird-island data not found at {path}; see {DATA_DIR / 'README.md'}")
    t = read_csv(path)
    t = t.with_interaction("log_area", "habitats")
    return t.with_interaction("distance", "log_area")


def bird_dataset(path=None) -> GlmDataset:
    return load_bird_islands(path).design("species", BIRD_PROTECTED, BIRD_OPEN, "poisson")


def bird_admissible():
    """The log-area by habitats interaction only enters together with habitats."""
    return requires(4, 0)


def cape_clear_focus(habitats: float = 15.0) -> FocusSpec:
    """Expected species count on Cape Clear with the habitat count changed."""
    distance, log_area = 6.44, float(np.log(639.11))
    x0 = (1.0, distance, log_area)
    z0 = (habitats, 1.0, 51.26, -9.37, log_area * habitats, distance * log_area)
    return FocusSpec("mean_response", x0, z0, description="Cape Clear")
