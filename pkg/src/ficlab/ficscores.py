"""FIC scores, bias ratios and ranked FIC tables."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import ndtri

from .cdfic import RmseCD
from .glmfit import SubmodelFit, WideBackground
from .limitcore import LimitExperiment, SubmodelMask, geometry

RANK_CHOICES = ("u", "t", "q")


def fic_scores(exp: LimitExperiment, S: SubmodelMask, D=None) -> tuple[float, float]:
    """Unbiased and truncated FIC in the limit experiment.

    ``FIC^u = tau_S^2 + {omega'(I - G_S) D}^2 - sigma_S^2``; ``FIC^t`` truncates
    the squared-bias estimate at zero.
    """
    D = exp.D if D is None else np.asarray(D, dtype=float)
    if D is None:
        raise ValueError("the experiment carries no observed D")
    geo = geometry(exp, S)
    if S.is_wide:
        return geo.tau2, geo.tau2
    bsq = float(geo.bias_direction @ D) ** 2 - geo.sigma2
    return geo.tau2 + bsq, geo.tau2 + max(bsq, 0.0)


def bias_ratio(exp: LimitExperiment, S: SubmodelMask, D=None) -> float:
    """``r_S = |omega'(I - G_S) D| / sigma_S``; 0 for the wide model."""
    D = exp.D if D is None else np.asarray(D, dtype=float)
    geo = geometry(exp, S)
    if S.is_wide or geo.sigma2 == 0.0:
        return 0.0
    return abs(float(geo.bias_direction @ D)) / geo.sigma


@dataclass
class FicRecord:
    """One row of a FIC table. Scores ``fic_*`` are on the limit scale, ``root_fic_*`` on the data scale."""

    S: SubmodelMask
    mu_hat: float
    stdev: float
    bias: float
    bias_signed: float
    fic_u: float
    fic_t: float
    fic_q: float
    root_fic_u: float
    root_fic_t: float
    root_fic_q: float
    r: float
    pointmass: float
    ci_lo: float
    ci_hi: float
    mu_lo: float
    mu_hi: float
    rank: int = 0
    weight: float | None = None


@dataclass
class FicTable:
    records: list[FicRecord]
    n: int
    q: int
    rank_by: str = "t"
    quantile: float = 0.5
    ci_level: float = 0.8
    open_names: tuple[str, ...] = ()
    focus: str = ""
    mu_wide: float = float("nan")
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def by_code(self, code: str) -> FicRecord:
        code = code.replace(" ", "")
        for r in self.records:
            if r.S.code == code:
                return r
        raise KeyError(code)

    @property
    def winner(self) -> FicRecord:
        return min(self.records, key=lambda r: r.rank)

    def ranking_score(self, rec: FicRecord) -> float:
        return {"u": rec.fic_u, "t": rec.fic_t, "q": rec.fic_q}[self.rank_by]

    # -- serialisation ------------------------------------------------------

    COLUMNS = ("model", "in_out", "estimate", "stdev", "bias", "root_fic", "rank",
               "bias_signed", "fic_u", "fic_t", "fic_q", "root_fic_u", "root_fic_t", "root_fic_q",
               "r", "pointmass", "ci_lo", "ci_hi", "mu_lo", "mu_hi")

    def rows(self) -> list[dict]:
        out = []
        for i, r in enumerate(self.records, start=1):
            out.append({
                "model": i, "in_out": r.S.label, "estimate": r.mu_hat, "stdev": r.stdev,
                "bias": r.bias, "root_fic": _root_by(r, self.rank_by), "rank": r.rank,
                "bias_signed": r.bias_signed, "fic_u": r.fic_u, "fic_t": r.fic_t, "fic_q": r.fic_q,
                "root_fic_u": r.root_fic_u, "root_fic_t": r.root_fic_t, "root_fic_q": r.root_fic_q,
                "r": r.r, "pointmass": r.pointmass, "ci_lo": r.ci_lo, "ci_hi": r.ci_hi,
                "mu_lo": r.mu_lo, "mu_hi": r.mu_hi,
            })
            if r.weight is not None:
                out[-1]["weight"] = r.weight
        return out

    def to_csv(self, path) -> None:
        rows = self.rows()
        cols = list(self.COLUMNS) + (["weight"] if rows and "weight" in rows[0] else [])
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
            w.writeheader()
            for row in rows:
                w.writerow({k: _fmt(v) for k, v in row.items()})

    def to_json(self, path) -> None:
        doc = {
            "n": self.n, "q": self.q, "rank_by": self.rank_by, "quantile": self.quantile,
            "ci_level": self.ci_level, "open_names": list(self.open_names), "focus": self.focus,
            "mu_wide": self.mu_wide, "meta": self.meta, "rows": self.rows(),
        }
        Path(path).write_text(json.dumps(doc, indent=2) + "\n")

    @classmethod
    def from_json(cls, path) -> "FicTable":
        doc = json.loads(Path(path).read_text())
        recs = [_record_from_row(row) for row in doc["rows"]]
        return cls(recs, doc["n"], doc["q"], doc["rank_by"], doc["quantile"], doc["ci_level"],
                   tuple(doc["open_names"]), doc["focus"], doc["mu_wide"], doc.get("meta", {}))

    @classmethod
    def from_csv(cls, path, n: int, rank_by: str = "t", quantile: float = 0.5, ci_level: float = 0.8) -> "FicTable":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        recs = [_record_from_row(row) for row in rows]
        q = recs[0].S.q if recs else 0
        return cls(recs, n, q, rank_by, quantile, ci_level)

    def format(self) -> str:
        """Plain-text table with 6 significant digits."""
        head = f"{'model':>5}  {'in_out':<{max(6, 2 * self.q)}}  {'estimate':>10}  {'stdev':>10}  {'bias':>10}  {'root_fic':>10}  {'rank':>4}"
        lines = [head]
        for row in self.rows():
            lines.append(
                f"{row['model']:>5}  {row['in_out']:<{max(6, 2 * self.q)}}  {row['estimate']:>10.6g}  "
                f"{row['stdev']:>10.6g}  {row['bias']:>10.6g}  {row['root_fic']:>10.6g}  {row['rank']:>4}")
        return "\n".join(lines)


def _root_by(rec: FicRecord, rank_by: str) -> float:
    return {"u": rec.root_fic_u, "t": rec.root_fic_t, "q": rec.root_fic_q}[rank_by]


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _record_from_row(row: dict) -> FicRecord:
    f = lambda k: float(row[k])  # noqa: E731
    weight = row.get("weight")
    return FicRecord(
        S=SubmodelMask.from_label(str(row["in_out"])), mu_hat=f("estimate"), stdev=f("stdev"), bias=f("bias"),
        bias_signed=f("bias_signed"), fic_u=f("fic_u"), fic_t=f("fic_t"), fic_q=f("fic_q"),
        root_fic_u=f("root_fic_u"), root_fic_t=f("root_fic_t"), root_fic_q=f("root_fic_q"), r=f("r"),
        pointmass=f("pointmass"), ci_lo=f("ci_lo"), ci_hi=f("ci_hi"), mu_lo=f("mu_lo"), mu_hi=f("mu_hi"),
        rank=int(row["rank"]), weight=None if weight in (None, "") else float(weight),
    )


def assign_ranks(records: Sequence[FicRecord], rank_by: str = "t") -> None:
    """Rank by ascending score, ties broken by fewer parameters then bitmask."""
    if rank_by not in RANK_CHOICES:
        raise ValueError(f"rank_by must be one of {RANK_CHOICES}")
    key = {"u": lambda r: r.fic_u, "t": lambda r: r.fic_t, "q": lambda r: r.fic_q}[rank_by]
    order = sorted(records, key=lambda r: (key(r), r.S.size, r.S.bits))
    for i, r in enumerate(order, start=1):
        r.rank = i


def make_record(exp: LimitExperiment, S: SubmodelMask, mu_hat: float, n: float = 1.0,
                quantile: float = 0.5, ci_level: float = 0.8) -> FicRecord:
    """Scores, CD summaries and focus interval for one submodel."""
    geo = geometry(exp, S)
    D = exp.D
    cd = RmseCD.from_geometry(geo, D, n)
    if S.is_wide:
        bsq = 0.0
        signed = 0.0
    else:
        signed = float(geo.bias_direction @ D)
        bsq = signed**2 - geo.sigma2
    fic_u = geo.tau2 + bsq
    fic_t = geo.tau2 + max(bsq, 0.0)
    fic_q = cd.quantile(quantile)
    root = lambda v: float(np.sqrt(max(v, 0.0) / n))  # noqa: E731
    lo, hi = cd.interval(ci_level)
    stdev = root(geo.tau2)
    z = float(ndtri(0.5 + 0.5 * ci_level))
    return FicRecord(
        S=S, mu_hat=float(mu_hat), stdev=stdev, bias=root(max(bsq, 0.0)), bias_signed=float(signed / np.sqrt(n)),
        fic_u=fic_u, fic_t=fic_t, fic_q=fic_q, root_fic_u=root(fic_u), root_fic_t=root(fic_t),
        root_fic_q=root(fic_q), r=cd.r, pointmass=cd.pointmass, ci_lo=lo, ci_hi=hi,
        mu_lo=float(mu_hat) - z * stdev, mu_hi=float(mu_hat) + z * stdev,
    )


def fic_table(background: WideBackground, fits: Sequence[SubmodelFit], masks: Sequence[SubmodelMask] | None = None,
              *, rank_by: str = "t", quantile: float = 0.5, ci_level: float = 0.8,
              open_names: Sequence[str] = (), focus: str = "") -> FicTable:
    """Data-scale FIC table: one record per mask, in the order given."""
    exp = background.limit_experiment()
    by_bits = {f.S.bits: f for f in fits}
    if masks is None:
        masks = [f.S for f in fits]
    records = []
    for m in masks:
        if m.bits not in by_bits:
            continue
        records.append(make_record(exp, m, by_bits[m.bits].mu_hat, background.n, quantile, ci_level))
    assign_ranks(records, rank_by)
    return FicTable(records, background.n, exp.q, rank_by, quantile, ci_level, tuple(open_names), focus,
                    background.mu_hat)


def limit_fic_table(exp: LimitExperiment, masks: Sequence[SubmodelMask], *, rank_by: str = "t",
                    quantile: float = 0.5, ci_level: float = 0.8) -> FicTable:
    """FIC table inside the limit experiment (``n = 1``, no focus estimates)."""
    records = [make_record(exp, m, float("nan"), 1.0, quantile, ci_level) for m in masks]
    assign_ranks(records, rank_by)
    return FicTable(records, 1, exp.q, rank_by, quantile, ci_level)
