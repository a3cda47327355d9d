"""FIC-weighted model averaging and its exact limit distribution.

A model-average estimator ``sum_S v(S | D) mu_hat_S`` has limit
``Lambda_0 + omega'{delta - delta_hat(D)}`` with
``delta_hat(D) = sum_S v(S | D) G_S D``. Everything here is vectorised over
draws of ``D`` so the limit law can be simulated directly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .cdfic import nc_chi2_1_sf, quantile_mse
from .glmfit import SubmodelFit
from .limitcore import LimitExperiment, SubmodelMask, geometry
from .rng import chunked_draws

KINDS = ("exp_fixed_lambda", "exp_cd_lambda", "post_selection", "aic_limit", "always_wide", "custom")
SCORES = ("u", "t", "m", "q")
LAMBDA_CONF_FLOOR = 1e-6


@dataclass(frozen=True)
class WeightScheme:
    """How candidate models are weighted.

    ``score`` picks the FIC variant fed to exp and post-selection schemes
    (``m`` median, ``q`` quantile at ``level``). ``screen`` is an optional
    ``(threshold_mse, cutoff)`` pair: models whose CD at the threshold falls
    below ``cutoff`` get weight zero before the exp weights are formed.
    """

    kind: str
    lam: float = 1.0
    score: str = "m"
    level: float = 0.5
    table: Mapping[str, float] | None = None
    screen: tuple[float, float] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scheme {self.kind!r}; choose from {KINDS}")
        if self.score not in SCORES:
            raise ValueError(f"unknown score {self.score!r}")
        if self.kind == "custom" and not self.table:
            raise ValueError("custom scheme needs a weight table")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")

    @property
    def label(self) -> str:
        if self.kind == "exp_fixed_lambda":
            return f"exp_fixed_lambda({self.lam:g},{self.score})"
        if self.kind == "post_selection":
            return f"post_selection({self.score})"
        return self.kind


class _Panel:
    """Per-mask constants for vectorised score evaluation."""

    def __init__(self, exp: LimitExperiment, masks: Sequence[SubmodelMask]):
        if not masks:
            raise ValueError("no candidate models")
        self.exp = exp
        self.masks = list(masks)
        geos = [geometry(exp, m) for m in self.masks]
        self.tau2 = np.array([g.tau2 for g in geos])
        self.sigma2 = np.array([g.sigma2 for g in geos])
        self.B = np.array([g.bias_direction for g in geos])
        self.G = np.array([g.G for g in geos])
        self.wide = np.array([m.is_wide or g.sigma2 == 0.0 for m, g in zip(self.masks, geos)])
        self.size = np.array([m.size for m in self.masks])
        # post-selection ties go to fewer parameters, then lower bitmask
        self.tie_order = np.array(sorted(range(len(self.masks)), key=lambda i: (self.masks[i].size, self.masks[i].bits)))
        Qinv = exp.Qinv
        self.A = np.array([Qinv @ g.G for g in geos])

    def b_obs(self, D):
        proj = D @ self.B.T
        safe = np.where(self.wide, 1.0, self.sigma2)
        return np.where(self.wide, 0.0, proj**2 / safe), proj

    def scores(self, D, which: str, level: float = 0.5):
        b, proj = self.b_obs(D)
        bsq = np.where(self.wide, 0.0, proj**2 - self.sigma2)
        if which == "u":
            return self.tau2 + bsq
        if which == "t":
            return self.tau2 + np.maximum(bsq, 0.0)
        lvl = 0.5 if which == "m" else level
        return quantile_mse(self.tau2, np.where(self.wide, 0.0, self.sigma2), b, lvl)

    def conf_at(self, D, mse: float):
        b, _ = self.b_obs(D)
        lam = np.maximum(mse - self.tau2, 0.0) / np.where(self.wide, 1.0, self.sigma2)
        c = nc_chi2_1_sf(b, lam)
        c = np.where(mse >= self.tau2, c, 0.0)
        return np.where(self.wide, 1.0, c)

    def aic(self, D):
        return np.einsum("ni,sij,nj->ns", D, self.A, D) - 2.0 * self.size

    def argmin_weights(self, s):
        pick = self.tie_order[np.argmin(s[:, self.tie_order], axis=1)]
        w = np.zeros_like(s, dtype=float)
        w[np.arange(s.shape[0]), pick] = 1.0
        return w


def _softmax(neg_logits):
    a = neg_logits - np.max(neg_logits, axis=1, keepdims=True)
    e = np.exp(a)
    return e / e.sum(axis=1, keepdims=True)


def _weights(panel: _Panel, scheme: WeightScheme, D: np.ndarray) -> np.ndarray:
    N, m = D.shape[0], len(panel.masks)
    if scheme.kind == "always_wide":
        if not panel.wide.any():
            raise ValueError("always_wide needs the wide model among the candidates")
        w = np.zeros((N, m))
        w[:, int(np.flatnonzero(panel.wide)[0])] = 1.0
        return w
    if scheme.kind == "custom":
        raw = np.array([float(scheme.table.get(mk.code, 0.0)) for mk in panel.masks])
        if raw.sum() <= 0 or np.any(raw < 0):
            raise ValueError("custom weights must be nonnegative with positive sum")
        return np.tile(raw / raw.sum(), (N, 1))
    if scheme.kind == "aic_limit":
        return panel.argmin_weights(-panel.aic(D))
    s = panel.scores(D, scheme.score, scheme.level)
    if scheme.kind == "post_selection":
        return panel.argmin_weights(s)
    if scheme.kind == "exp_fixed_lambda":
        lam = np.full((N, m), scheme.lam)
    else:
        conf = panel.conf_at(D, panel.exp.wide_mse)
        lam = 1.0 / np.maximum(conf, LAMBDA_CONF_FLOOR)
        lam[:, panel.wide] = 1.0
    logits = -lam * s
    if scheme.screen is not None:
        thr, cutoff = scheme.screen
        keep = panel.conf_at(D, thr) >= cutoff
        keep[~keep.any(axis=1)] = True
        logits = np.where(keep, logits, -np.inf)
    return _softmax(logits)


def weights(scheme: WeightScheme, exp: LimitExperiment, masks: Sequence[SubmodelMask], D=None) -> np.ndarray:
    """Model weights ``v(S | D)`` for one ``D`` (shape ``(m,)``) or many (shape ``(N, m)``).

    Exp schemes use the log-sum-exp form, so shifting all scores by a
    constant leaves the weights unchanged and nothing underflows.
    """
    D = exp.D if D is None else D
    if D is None:
        raise ValueError("D is required")
    D = np.asarray(D, dtype=float)
    single = D.ndim == 1
    w = _weights(_Panel(exp, masks), scheme, np.atleast_2d(D))
    return w[0] if single else w


def averaged_estimate(w, fits: Sequence[SubmodelFit]) -> float:
    """Convex combination ``sum_S w_S mu_hat_S``."""
    w = np.asarray(w, dtype=float)
    if w.shape != (len(fits),):
        raise ValueError("weights and fits are not aligned")
    return float(w @ np.array([f.mu_hat for f in fits]))


def threshold_weights(exp: LimitExperiment, masks: Sequence[SubmodelMask], threshold_mse: float,
                      cutoff: float, lam: float = 1.0, score: str = "m") -> dict[str, float]:
    """Custom weight table keeping models with ``C_S(threshold) >= cutoff``, exp-weighted among them."""
    w = weights(WeightScheme("exp_fixed_lambda", lam=lam, score=score, screen=(threshold_mse, cutoff)), exp, masks)
    return {m.code: float(x) for m, x in zip(masks, w)}


@dataclass
class LimitDraws:
    scheme: str
    draws: np.ndarray
    lambda0: np.ndarray = field(repr=False)
    delta_hat: np.ndarray = field(repr=False)

    @property
    def n_draws(self) -> int:
        return self.draws.size

    @property
    def mean(self) -> float:
        return float(np.mean(self.draws))

    @property
    def rmse(self) -> float:
        return float(np.sqrt(np.mean(self.draws**2)))

    @property
    def rmse_se(self) -> float:
        """Delta-method Monte Carlo standard error of :attr:`rmse`."""
        sq = self.draws**2
        return float(np.std(sq, ddof=1) / np.sqrt(sq.size) / (2 * self.rmse))

    def summary(self, probs=(0.025, 0.1, 0.25, 0.5, 0.75, 0.9, 0.975)) -> dict:
        qs = np.quantile(self.draws, probs)
        return {
            "scheme": self.scheme, "n_draws": self.n_draws, "mean": self.mean, "rmse": self.rmse,
            "rmse_se": self.rmse_se, "quantiles": {f"{p:g}": float(v) for p, v in zip(probs, qs)},
        }

    def to_json(self, path, extra: dict | None = None) -> None:
        doc = self.summary()
        if extra:
            doc.update(extra)
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("draw\n")
            for v in self.draws:
                fh.write(repr(float(v)) + "\n")


def limit_distribution_sample(exp: LimitExperiment, delta, scheme: WeightScheme, n_draws: int, seed,
                              masks: Sequence[SubmodelMask] | None = None, workers: int = 1) -> LimitDraws:
    """Draw from ``Lambda_0 + omega'{delta - delta_hat(D)}`` for the given weighting scheme."""
    from .limitcore import all_masks

    delta = np.asarray(delta if delta is not None else exp.delta, dtype=float)
    masks = list(masks) if masks is not None else all_masks(exp.q)
    panel = _Panel(exp, masks)
    L = np.linalg.cholesky(exp.Q)
    target = float(exp.omega @ delta)

    def chunk(rng, size):
        D = delta + rng.standard_normal((size, exp.q)) @ L.T
        lam0 = exp.tau0 * rng.standard_normal(size)
        w = _weights(panel, scheme, D)
        dhat = np.einsum("ns,sij,nj->ni", w, panel.G, D)
        return lam0, dhat

    parts = chunked_draws(chunk, n_draws, seed, workers)
    lam0 = np.concatenate([p[0] for p in parts])
    dhat = np.concatenate([p[1] for p in parts])
    draws = lam0 + target - dhat @ exp.omega
    return LimitDraws(scheme.label, draws, lam0, dhat)
