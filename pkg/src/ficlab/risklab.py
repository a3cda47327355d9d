"""Risk studies: squared-bias estimators, narrow-vs-wide cut-offs, q=2 maps, finite-sample harness."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .averaging import _Panel
from .cdfic import narrow_wide_cutoff, quantile_mse
from .exceptions import ConfigError, FitError, NumericalFailure
from .ficscores import fic_table
from .glmfit import FocusSpec, GlmDataset, fit_all, fit_wide
from .limitcore import LimitExperiment, SubmodelMask, all_masks, size_order
from .rng import pmap, spawn

DEFAULT_PHI_GRID = np.linspace(0.0, 16.0, 33)
DEFAULT_ETA_GRID = np.linspace(-5.0, 5.0, 101)
DEFAULT_DELTA_AXIS = np.linspace(-6.0, 6.0, 61)


@dataclass
class RiskCurve:
    """Risk (not root-risk) per grid point and scheme, with Monte Carlo standard errors."""

    grid: np.ndarray
    values: dict[str, np.ndarray]
    se: dict[str, np.ndarray]
    xname: str = "x"
    meta: dict = field(default_factory=dict)

    @property
    def schemes(self) -> list[str]:
        return list(self.values)

    def root(self, scheme: str) -> np.ndarray:
        return np.sqrt(self.values[scheme])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([self.xname, "scheme", "risk", "se", "root_risk"])
            for s in self.schemes:
                for x, v, e in zip(self.grid, self.values[s], self.se[s]):
                    w.writerow([repr(float(x)), s, repr(float(v)), repr(float(e)), repr(float(np.sqrt(v)))])

    @classmethod
    def from_csv(cls, path, xname: str | None = None) -> "RiskCurve":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        head, body = rows[0], rows[1:]
        xs: list[float] = []
        values: dict[str, list[float]] = {}
        se: dict[str, list[float]] = {}
        for x, s, v, e, _ in body:
            if s not in values:
                values[s], se[s] = [], []
            values[s].append(float(v))
            se[s].append(float(e))
            if len(values) == 1:
                xs.append(float(x))
        return cls(np.array(xs), {k: np.array(v) for k, v in values.items()},
                   {k: np.array(v) for k, v in se.items()}, xname or head[0])


def _mc(values: np.ndarray) -> tuple[float, float]:
    return float(np.mean(values)), float(np.std(values, ddof=1) / np.sqrt(values.size))


# -- squared-bias estimation ----------------------------------------------

def _parse_scheme(s: str) -> tuple[str, float]:
    """``u``, ``t``, ``median``/``m`` or ``quantile:<q>`` / ``q<q>``."""
    s = s.strip().lower()
    if s in ("u", "t"):
        return s, 0.0
    if s in ("m", "median"):
        return "q", 0.5
    for prefix in ("quantile:", "quantile", "q"):
        if s.startswith(prefix):
            try:
                lvl = float(s[len(prefix):])
            except ValueError:
                break
            if not 0 < lvl < 1:
                raise ConfigError(f"quantile level must be in (0, 1): {s}")
            return "q", lvl
    raise ConfigError(f"unknown scheme {s!r}")


def phi_estimate(scheme: str, x) -> np.ndarray:
    """Estimate ``phi = eta^2`` from ``X ~ N(eta, 1)`` with the given FIC-type rule."""
    kind, lvl = _parse_scheme(scheme)
    x2 = np.asarray(x, dtype=float) ** 2
    if kind == "u":
        return x2 - 1.0
    if kind == "t":
        return np.maximum(x2 - 1.0, 0.0)
    return quantile_mse(0.0, 1.0, x2, lvl)


def phi_risk(schemes, phi_grid=DEFAULT_PHI_GRID, n_draws: int = 100_000, seed=0, workers: int = 1) -> RiskCurve:
    """Monte Carlo risk ``E(phi_hat - phi)^2`` with common draws across schemes at each grid point."""
    schemes = [schemes] if isinstance(schemes, str) else list(schemes)
    grid = np.asarray(phi_grid, dtype=float)
    if np.any(grid < 0):
        raise ConfigError("phi must be nonnegative")
    rngs = spawn(seed, grid.size)

    def cell(phi, rng):
        x = np.sqrt(phi) + rng.standard_normal(n_draws)
        return [_mc((phi_estimate(s, x) - phi) ** 2) for s in schemes]

    res = pmap(cell, list(zip(grid, rngs)), workers)
    values = {s: np.array([r[i][0] for r in res]) for i, s in enumerate(schemes)}
    se = {s: np.array([r[i][1] for r in res]) for i, s in enumerate(schemes)}
    meta = {"n_draws": n_draws, "analytic_u": (2 + 4 * grid).tolist()}
    return RiskCurve(grid, values, se, "phi", meta)


# -- narrow vs wide -------------------------------------------------------

def cutoff_for(scheme: str) -> float:
    """Cut-off ``t0`` on ``|t(D)|`` for choosing the wide model."""
    s = scheme.strip().lower()
    if s in ("u", "t", "fic", "aic"):
        return float(np.sqrt(2.0))
    if s in ("wide", "always-wide", "always_wide"):
        return 0.0
    if s in ("narrow", "always-narrow"):
        return float("inf")
    kind, lvl = _parse_scheme(s)
    return narrow_wide_cutoff(lvl)


def narrow_wide_risk(schemes, eta_grid=DEFAULT_ETA_GRID, n_draws: int = 100_000, seed=0, workers: int = 1) -> RiskCurve:
    """Normalised risk ``R(eta) = E[1{|t| > t0} t - eta]^2`` with ``t ~ N(eta, 1)``."""
    schemes = [schemes] if isinstance(schemes, str) else list(schemes)
    cut = {s: cutoff_for(s) for s in schemes}
    grid = np.asarray(eta_grid, dtype=float)
    rngs = spawn(seed, grid.size)

    def cell(eta, rng):
        t = eta + rng.standard_normal(n_draws)
        return [_mc((np.where(np.abs(t) > cut[s], t, 0.0) - eta) ** 2) for s in schemes]

    res = pmap(cell, list(zip(grid, rngs)), workers)
    values = {s: np.array([r[i][0] for r in res]) for i, s in enumerate(schemes)}
    se = {s: np.array([r[i][1] for r in res]) for i, s in enumerate(schemes)}
    return RiskCurve(grid, values, se, "eta", {"n_draws": n_draws, "cutoffs": cut})


# -- q = 2 risk maps --------------------------------------------------------

@dataclass
class RiskMap:
    d1: np.ndarray
    d2: np.ndarray
    schemes: list[str]
    risk: np.ndarray  # (len(d1), len(d2), n_schemes)
    se: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def winner(self) -> np.ndarray:
        """Index into ``schemes`` of the smallest risk per cell (ties to the earlier scheme)."""
        return np.argmin(self.risk, axis=2)

    def ratio(self, focal: str = "m") -> np.ndarray:
        """Risk of ``focal`` over the best competing scheme."""
        k = self.schemes.index(focal)
        others = np.delete(self.risk, k, axis=2)
        return self.risk[:, :, k] / np.min(others, axis=2)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["delta1", "delta2", "scheme", "risk", "se", "winner"])
            win = self.winner
            for i, a in enumerate(self.d1):
                for j, b in enumerate(self.d2):
                    for k, s in enumerate(self.schemes):
                        w.writerow([repr(float(a)), repr(float(b)), s, repr(float(self.risk[i, j, k])),
                                    repr(float(self.se[i, j, k])), self.schemes[win[i, j]]])


def q2_riskmap(omega=(1.0, 1.0), kappa=(1.0, 1.0), d1=DEFAULT_DELTA_AXIS, d2=None,
               schemes: Sequence[str] = ("u", "t", "m"), n_draws: int = 2000, seed=0,
               workers: int = 1, tau0: float = 0.0) -> RiskMap:
    """Post-selection risk ``tau0^2 + E{omega'delta_hat(D) - omega'delta}^2`` over submodels 0, 1, 2, 12."""
    omega = np.asarray(omega, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    if omega.shape != (2,) or kappa.shape != (2,) or np.any(kappa <= 0):
        raise ConfigError("omega and kappa must be 2-vectors, kappa positive")
    d1 = np.asarray(d1, dtype=float)
    d2 = d1 if d2 is None else np.asarray(d2, dtype=float)
    exp = LimitExperiment(tau0, omega, np.diag(kappa**2))
    panel = _Panel(exp, all_masks(2))
    parsed = [_parse_scheme(s) for s in schemes]
    cells = [(a, b) for a in d1 for b in d2]
    rngs = spawn(seed, len(cells))

    def cell(ab, rng):
        delta = np.array(ab)
        D = delta + rng.standard_normal((n_draws, 2)) * kappa
        out = []
        for kind, lvl in parsed:
            sc = panel.scores(D, kind, lvl)
            w = panel.argmin_weights(sc)
            dhat = np.einsum("ns,sij,nj->ni", w, panel.G, D)
            loss = tau0**2 + (dhat @ omega - omega @ delta) ** 2
            out.append(_mc(loss))
        return out

    res = pmap(cell, list(zip(cells, rngs)), workers)
    arr = np.array(res)  # (cells, schemes, 2)
    shape = (d1.size, d2.size, len(schemes))
    return RiskMap(d1, d2, list(schemes), arr[:, :, 0].reshape(shape), arr[:, :, 1].reshape(shape),
                   {"omega": omega.tolist(), "kappa": kappa.tolist(), "n_draws": n_draws, "tau0": tau0})


# -- finite-sample linear-model harness -------------------------------------

@dataclass(frozen=True)
class HarnessConfig:
    """Linear model ``y = X beta + Z gamma + eps`` with an intercept among the protected columns.

    ``beta`` covers the intercept and any further protected covariates;
    ``corr`` is the correlation matrix of all non-intercept covariates
    (protected first, then open), drawn with zero means and unit variances.
    """

    n: int = 100
    beta: tuple[float, ...] = (0.0,)
    gamma: tuple[float, ...] = (2.0, -1.0, 0.5)
    sigma: float = 2.0
    corr: tuple[tuple[float, ...], ...] = ((1.0, -0.7, -0.7), (-0.7, 1.0, 0.9), (-0.7, 0.9, 1.0))
    x0: tuple[float, ...] = (0.0,)
    z0: tuple[float, ...] = (-0.1, 1.0, -0.5)
    ci_level: float = 0.8
    variant: str = "m"
    quantile: float = 0.5

    def __post_init__(self):
        k = len(self.beta) - 1 + len(self.gamma)
        C = np.asarray(self.corr, dtype=float)
        if C.shape != (k, k):
            raise ConfigError(f"corr must be {k}x{k}")
        if np.any(np.linalg.eigvalsh(C) <= 0):
            raise ConfigError("corr must be positive definite")
        if len(self.x0) != len(self.beta) or len(self.z0) != len(self.gamma):
            raise ConfigError("focus point dimensions do not match coefficients")
        if self.variant not in ("u", "t", "m", "q"):
            raise ConfigError("variant must be one of u, t, m, q")
        if not 0 < self.ci_level < 1:
            raise ConfigError("ci_level must be in (0, 1)")

    @property
    def q(self) -> int:
        return len(self.gamma)

    @property
    def mu_true(self) -> float:
        return float(np.dot(self.x0, self.beta) + np.dot(self.z0, self.gamma))

    @classmethod
    def from_mapping(cls, cfg: Mapping[str, str]) -> "HarnessConfig":
        def vec(v):
            return tuple(float(x) for x in str(v).replace(",", " ").split())

        kw: dict = {}
        for key, val in cfg.items():
            if key == "n":
                kw["n"] = int(val)
            elif key in ("beta", "gamma", "x0", "z0"):
                kw[key] = vec(val)
            elif key in ("sigma", "ci_level", "quantile"):
                kw[key] = float(val)
            elif key == "variant":
                kw["variant"] = str(val)
            elif key == "corr":
                flat = vec(val)
                k = int(round(np.sqrt(len(flat))))
                if k * k != len(flat):
                    raise ConfigError("corr must list k*k entries row by row")
                kw["corr"] = tuple(tuple(flat[i * k:(i + 1) * k]) for i in range(k))
        return cls(**kw)


def true_rmse_linear(X, Z, beta, gamma, sigma, x0, z0, S: SubmodelMask) -> float:
    """Exact finite-sample root-mse of the submodel least-squares focus estimator."""
    idx = list(S.indices)
    W = np.hstack([X, Z[:, idx]])
    c = np.concatenate([np.asarray(x0, float), np.asarray(z0, float)[idx]])
    a = W @ np.linalg.solve(W.T @ W, c)
    mean = X @ np.asarray(beta, float) + Z @ np.asarray(gamma, float)
    mu0 = float(np.dot(x0, beta) + np.dot(z0, gamma))
    bias = float(a @ mean) - mu0
    return float(np.sqrt(sigma**2 * (a @ a) + bias**2))


@dataclass
class HarnessResult:
    masks: list[SubmodelMask]
    true_rmse: np.ndarray  # (rounds, models)
    root_fic: np.ndarray
    covered: np.ndarray  # bool, (rounds, models); wide model never counted
    winners: np.ndarray  # index into masks per round
    n_discarded: int
    config: HarnessConfig

    @property
    def n_rounds(self) -> int:
        return self.winners.size

    @property
    def coverage(self) -> np.ndarray:
        """Percent coverage per model; NaN for degenerate (wide) intervals."""
        cov = 100.0 * self.covered.mean(axis=0)
        cov[[m.is_wide for m in self.masks]] = np.nan
        return cov

    @property
    def win_percent(self) -> np.ndarray:
        return 100.0 * np.bincount(self.winners, minlength=len(self.masks)) / self.n_rounds

    def summary_rows(self) -> list[dict]:
        rows = []
        for k, m in enumerate(self.masks):
            rows.append({
                "model": f"M{k + 1}", "in_out": m.label, "true_rmse": float(self.true_rmse[:, k].mean()),
                "avg_root_fic": float(self.root_fic[:, k].mean()), "coverage": float(self.coverage[k]),
                "winning": float(self.win_percent[k]),
            })
        return rows

    def to_csv(self, path) -> None:
        rows = self.summary_rows()
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})

    def to_json(self, path) -> None:
        doc = {"n_rounds": self.n_rounds, "n_discarded": self.n_discarded, "models": self.summary_rows()}
        Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def _harness_round(cfg: HarnessConfig, masks, rng) -> tuple | None:
    n, q = cfg.n, cfg.q
    k = len(cfg.beta) - 1
    L = np.linalg.cholesky(np.asarray(cfg.corr, dtype=float))
    cov = rng.standard_normal((n, k + q)) @ L.T
    X = np.hstack([np.ones((n, 1)), cov[:, :k]])
    Z = cov[:, k:]
    y = X @ np.asarray(cfg.beta) + Z @ np.asarray(cfg.gamma) + cfg.sigma * rng.standard_normal(n)
    data = GlmDataset("linear", y, X, Z)
    focus = FocusSpec("linear_predictor", cfg.x0, cfg.z0)
    try:
        bg = fit_wide(data, focus)
        fits, errors = fit_all(data, masks, focus)
        if errors:
            return None
        rank_by = "q" if cfg.variant in ("m", "q") else cfg.variant
        lvl = 0.5 if cfg.variant == "m" else cfg.quantile
        table = fic_table(bg, fits, masks, rank_by=rank_by, quantile=lvl, ci_level=cfg.ci_level)
        truth = np.array([true_rmse_linear(X, Z, cfg.beta, cfg.gamma, cfg.sigma, cfg.x0, cfg.z0, m) for m in masks])
    except (FitError, NumericalFailure, np.linalg.LinAlgError):
        return None
    recs = table.records
    root = np.array([{"u": r.root_fic_u, "t": r.root_fic_t, "q": r.root_fic_q}[rank_by] for r in recs])
    covered = np.array([r.ci_lo <= t <= r.ci_hi for r, t in zip(recs, truth)])
    winner = int(np.argmin([r.rank for r in recs]))
    return truth, root, covered, winner


def finite_sample_harness(config: HarnessConfig = HarnessConfig(), n_rounds: int = 1000, seed=0,
                          workers: int = 1) -> HarnessResult:
    """Simulate, fit and score ``n_rounds`` datasets; models ordered M1 (narrow) .. M_{2^q} (wide)."""
    masks = size_order(all_masks(config.q))
    rngs = spawn(seed, n_rounds)
    res = pmap(lambda rng: _harness_round(config, masks, rng), [(r,) for r in rngs], workers)
    kept = [r for r in res if r is not None]
    if not kept:
        raise FitError("every harness round failed")
    return HarnessResult(
        masks, np.array([r[0] for r in kept]), np.array([r[1] for r in kept]), np.array([r[2] for r in kept]),
        np.array([r[3] for r in kept], dtype=int), len(res) - len(kept), config)


def read_config(path) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, val = line.split("=", 1)
        out[key.strip().replace("-", "_")] = val.strip()
    return out
