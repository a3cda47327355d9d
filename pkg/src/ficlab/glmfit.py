"""Maximum-likelihood fitting of wide and submodels for linear, logistic and Poisson regression.

The protected design ``X`` (``p`` columns, intercept included when wanted)
is in every candidate model; the open design ``Z`` (``q`` columns) has its
coefficients either estimated or pinned at ``gamma0``. For the linear family
the error standard deviation is appended to the protected parameters, so
``theta = (beta, sigma)`` there and ``theta = beta`` otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit, gammaln, ndtr
from scipy.stats import norm, poisson

from .exceptions import ConfigError, ConvergenceError, RankDeficiencyError, SeparationError
from .limitcore import LimitExperiment, SubmodelMask, spd_inverse
from .rng import pmap

FAMILIES = ("linear", "logistic", "poisson")
FOCUS_KINDS = ("linear_predictor", "mean_response", "prob_below_threshold", "custom")

MAX_ITER = 100
GRAD_TOL = 1e-9
SEPARATION_NORM = 1e4
# a converged logistic fit with a fitted probability this close to 0 or 1 is treated as separated
SEPARATION_PROB = 1e-8


@dataclass(frozen=True, eq=False)
class GlmDataset:
    family: str
    y: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    gamma0: np.ndarray | None = None
    x_names: tuple[str, ...] = ()
    z_names: tuple[str, ...] = ()

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}; choose from {FAMILIES}")
        y = np.asarray(self.y, dtype=float).reshape(-1)
        X = np.asarray(self.X, dtype=float)
        Z = np.asarray(self.Z, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if Z.ndim == 1:
            Z = Z[:, None]
        n = y.size
        if X.shape[0] != n or Z.shape[0] != n:
            raise ConfigError("X, Z and y must have the same number of rows")
        p, q = X.shape[1], Z.shape[1]
        if q < 1:
            raise ConfigError("at least one open covariate is needed")
        if n <= p + q:
            raise ConfigError(f"need n > p + q, got n={n}, p={p}, q={q}")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X)) and np.all(np.isfinite(Z))):
            raise ConfigError("data contain non-finite values")
        if self.family == "logistic" and not np.all((y == 0) | (y == 1)):
            raise ConfigError("logistic response must be 0/1")
        if self.family == "poisson" and (np.any(y < 0) or np.any(y != np.round(y))):
            raise ConfigError("poisson response must be nonnegative integers")
        g0 = np.zeros(q) if self.gamma0 is None else np.asarray(self.gamma0, dtype=float).reshape(-1)
        if g0.size != q:
            raise ConfigError(f"gamma0 must have length {q}")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "gamma0", g0)
        object.__setattr__(self, "x_names", tuple(self.x_names) or tuple(f"x{j}" for j in range(p)))
        object.__setattr__(self, "z_names", tuple(self.z_names) or tuple(f"z{j + 1}" for j in range(q)))

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def q(self) -> int:
        return self.Z.shape[1]

    @property
    def n_theta(self) -> int:
        """Length of the protected parameter vector (``p + 1`` for the linear family)."""
        return self.p + (self.family == "linear")


@dataclass(frozen=True, eq=False)
class FocusSpec:
    """The focus parameter ``mu(theta, gamma)``.

    Built-in kinds evaluate at a covariate point ``(x0, z0)``:
    ``linear_predictor`` is ``x0'beta + z0'gamma``; ``mean_response`` applies
    the inverse link; ``prob_below_threshold`` is ``P(Y <= threshold)``.
    ``custom`` wraps a user function of ``(theta, gamma)``.
    """

    kind: str
    x0: np.ndarray | None = None
    z0: np.ndarray | None = None
    threshold: float | None = None
    func: Callable[[np.ndarray, np.ndarray], float] | None = None
    description: str = ""

    def __post_init__(self):
        if self.kind not in FOCUS_KINDS:
            raise ConfigError(f"unknown focus kind {self.kind!r}")
        if self.kind == "custom":
            if self.func is None:
                raise ConfigError("custom focus needs a function")
            return
        if self.x0 is None or self.z0 is None:
            raise ConfigError("focus needs a covariate point (x0, z0)")
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).reshape(-1))
        object.__setattr__(self, "z0", np.asarray(self.z0, dtype=float).reshape(-1))
        if self.kind == "prob_below_threshold" and self.threshold is None:
            raise ConfigError("prob_below_threshold needs a threshold")

    @classmethod
    def custom(cls, func, description: str = "custom") -> "FocusSpec":
        return cls("custom", func=func, description=description)

    def check(self, data: GlmDataset) -> None:
        if self.kind == "custom":
            return
        if self.x0.size != data.p or self.z0.size != data.q:
            raise ConfigError(
                f"focus point has dimensions ({self.x0.size}, {self.z0.size}); data need ({data.p}, {data.q})")

    def value(self, family: str, theta, gamma) -> float:
        theta = np.asarray(theta, dtype=float)
        gamma = np.asarray(gamma, dtype=float)
        if self.kind == "custom":
            return float(self.func(theta, gamma))
        beta = theta[: self.x0.size]
        eta = float(self.x0 @ beta + self.z0 @ gamma)
        if self.kind == "linear_predictor":
            return eta
        if self.kind == "mean_response":
            return {"linear": eta, "logistic": float(expit(eta)), "poisson": float(np.exp(eta))}[family]
        y0 = float(self.threshold)
        if family == "linear":
            return float(ndtr((y0 - eta) / theta[-1]))
        if family == "logistic":
            return 0.0 if y0 < 0 else (1.0 - float(expit(eta)) if y0 < 1 else 1.0)
        return float(poisson.cdf(np.floor(y0), np.exp(eta))) if y0 >= 0 else 0.0


def focus_derivatives(spec: FocusSpec, family: str, theta, gamma) -> tuple[np.ndarray, np.ndarray]:
    """Partial derivatives ``(d mu / d theta, d mu / d gamma)`` at ``(theta, gamma)``.

    Analytic for the built-in kinds; central differences with step
    ``1e-6 * (1 + |param|)`` for custom functions.
    """
    theta = np.asarray(theta, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if spec.kind == "custom":
        dth, dga = _central_diff(spec, family, theta, gamma)
    else:
        p = spec.x0.size
        beta = theta[:p]
        eta = float(spec.x0 @ beta + spec.z0 @ gamma)
        dsig = 0.0
        if spec.kind == "linear_predictor":
            scale = 1.0
        elif spec.kind == "mean_response":
            scale = {"linear": 1.0, "logistic": expit(eta) * (1 - expit(eta)), "poisson": np.exp(eta)}[family]
        else:
            y0 = float(spec.threshold)
            if family == "linear":
                s = theta[-1]
                u = (y0 - eta) / s
                scale = -norm.pdf(u) / s
                dsig = -norm.pdf(u) * u / s
            elif family == "logistic":
                pr = expit(eta)
                scale = -pr * (1 - pr) if 0 <= y0 < 1 else 0.0
            else:
                lam = np.exp(eta)
                scale = -lam * poisson.pmf(np.floor(y0), lam) if y0 >= 0 else 0.0
        dth = np.zeros(theta.size)
        dth[:p] = scale * spec.x0
        if family == "linear":
            dth[-1] = dsig
        dga = scale * spec.z0
    if not (np.all(np.isfinite(dth)) and np.all(np.isfinite(dga))):
        raise ValueError("focus gradient is not finite")
    return dth, dga


def _central_diff(spec, family, theta, gamma):
    x = np.concatenate([theta, gamma])
    grad = np.zeros_like(x)
    k = theta.size
    for j in range(x.size):
        h = 1e-6 * (1 + abs(x[j]))
        up, dn = x.copy(), x.copy()
        up[j] += h
        dn[j] -= h
        grad[j] = (spec.value(family, up[:k], up[k:]) - spec.value(family, dn[:k], dn[k:])) / (2 * h)
    return grad[:k], grad[k:]


# -- likelihood machinery --------------------------------------------------

def loglik(family: str, y, eta, sigma: float | None = None) -> float:
    if family == "logistic":
        return float(np.sum(y * eta - np.logaddexp(0.0, eta)))
    if family == "poisson":
        return float(np.sum(y * eta - np.exp(eta) - gammaln(y + 1)))
    rss = float(np.sum((y - eta) ** 2))
    n = y.size
    return -0.5 * n * np.log(2 * np.pi * sigma**2) - rss / (2 * sigma**2)


def _irls(W: np.ndarray, y: np.ndarray, offset: np.ndarray, family: str) -> tuple[np.ndarray, float]:
    """Newton-Raphson (= IRLS for canonical links) with step halving."""
    n, k = W.shape
    beta = np.zeros(k)
    if k == 0:
        return beta, loglik(family, y, offset)
    ll = loglik(family, y, offset)
    for _ in range(MAX_ITER):
        eta = offset + W @ beta
        if family == "logistic":
            mu = expit(eta)
            w = mu * (1 - mu)
        else:
            mu = np.exp(eta)
            w = mu
        score = W.T @ (y - mu)
        if np.max(np.abs(score)) / n < GRAD_TOL:
            _check_separation(family, mu)
            return beta, ll
        H = (W * w[:, None]).T @ W
        try:
            step = np.linalg.solve(H, score)
        except np.linalg.LinAlgError as exc:
            raise RankDeficiencyError("singular information during Newton iterations") from exc
        t = 1.0
        for _ in range(40):
            cand = beta + t * step
            ll_new = loglik(family, y, offset + W @ cand)
            if np.isfinite(ll_new) and ll_new >= ll - 1e-12 * abs(ll):
                break
            t *= 0.5
        else:
            raise ConvergenceError("step halving failed to increase the log-likelihood")
        beta, ll = cand, ll_new
        if family == "logistic" and np.linalg.norm(beta) > SEPARATION_NORM:
            raise SeparationError("logistic coefficients diverge; data appear separated")
        if abs(float(step @ score)) * t / n < 1e-24:
            _check_separation(family, expit(offset + W @ beta))
            return beta, ll
    raise ConvergenceError(f"no convergence after {MAX_ITER} iterations")


def _check_separation(family: str, mu: np.ndarray) -> None:
    if family == "logistic" and np.any(np.minimum(mu, 1 - mu) < SEPARATION_PROB):
        raise SeparationError("fitted probabilities numerically 0 or 1; data appear separated")


def _fit_design(data: GlmDataset, W: np.ndarray, offset: np.ndarray):
    """ML coefficients, sigma (linear only) and log-likelihood for design ``W``."""
    if np.linalg.matrix_rank(W) < W.shape[1]:
        raise RankDeficiencyError("design matrix is not of full column rank")
    if data.family == "linear":
        coef, *_ = np.linalg.lstsq(W, data.y - offset, rcond=None)
        resid = data.y - offset - W @ coef
        sigma = float(np.sqrt(np.sum(resid**2) / data.n))
        if sigma <= 0:
            raise RankDeficiencyError("perfect fit; error variance is zero")
        return coef, sigma, loglik("linear", data.y, offset + W @ coef, sigma)
    coef, ll = _irls(W, data.y, offset, data.family)
    return coef, None, ll


def expected_information(data: GlmDataset, theta, gamma) -> np.ndarray:
    """Normalised Fisher information ``J`` at ``(theta, gamma)``; order ``(theta, gamma)``."""
    p, q = data.p, data.q
    beta = theta[:p]
    eta = data.X @ beta + data.Z @ gamma
    W = np.hstack([data.X, data.Z])
    if data.family == "linear":
        s = theta[-1]
        Jb = W.T @ W / (data.n * s**2)
        J = np.zeros((p + q + 1, p + q + 1))
        reg = list(range(p)) + list(range(p + 1, p + 1 + q))
        J[np.ix_(reg, reg)] = Jb
        J[p, p] = 2.0 / s**2
        return J
    if data.family == "logistic":
        m = expit(eta)
        w = m * (1 - m)
    else:
        w = np.exp(eta)
    return (W * w[:, None]).T @ W / data.n


@dataclass(frozen=True, eq=False)
class WideBackground:
    """Wide-model fit and the estimated limit-experiment background."""

    theta_hat: np.ndarray
    gamma_hat: np.ndarray
    Jhat: np.ndarray
    Qhat: np.ndarray
    omega_hat: np.ndarray
    tau0_hat: float
    Dn: np.ndarray
    n: int
    loglik: float
    mu_hat: float
    family: str = ""

    def limit_experiment(self) -> LimitExperiment:
        return LimitExperiment(self.tau0_hat, self.omega_hat, self.Qhat, D=self.Dn)


@dataclass(frozen=True, eq=False)
class SubmodelFit:
    S: SubmodelMask
    theta: np.ndarray
    gamma: np.ndarray
    mu_hat: float
    loglik: float


def fit_wide(data: GlmDataset, focus: FocusSpec) -> WideBackground:
    """Fit the wide model and estimate ``J``, ``Q``, ``omega``, ``tau0`` and ``D_n``."""
    focus.check(data)
    W = np.hstack([data.X, data.Z])
    coef, sigma, ll = _fit_design(data, W, np.zeros(data.n))
    beta, gamma = coef[: data.p], coef[data.p:]
    theta = np.append(beta, sigma) if data.family == "linear" else beta
    J = expected_information(data, theta, gamma)
    k = theta.size
    Jinv = spd_inverse(J, "information matrix")
    Q = Jinv[k:, k:]
    Q = 0.5 * (Q + Q.T)
    J00, J10 = J[:k, :k], J[k:, :k]
    dth, dga = focus_derivatives(focus, data.family, theta, gamma)
    J00inv_dth = np.linalg.solve(J00, dth)
    omega = J10 @ J00inv_dth - dga
    tau0 = float(np.sqrt(max(dth @ J00inv_dth, 0.0)))
    Dn = np.sqrt(data.n) * (gamma - data.gamma0)
    mu = focus.value(data.family, theta, gamma)
    if not np.isfinite(mu):
        raise ValueError("focus is not finite at the wide ML estimate")
    return WideBackground(theta, gamma, J, Q, omega, tau0, Dn, data.n, ll, mu, data.family)


def fit_submodel(data: GlmDataset, S: SubmodelMask, focus: FocusSpec) -> SubmodelFit:
    """ML fit with ``gamma_j`` pinned at ``gamma0_j`` for ``j`` outside ``S``."""
    if S.q != data.q:
        raise ConfigError(f"mask has q={S.q}, data have q={data.q}")
    idx = list(S.indices)
    out = [j for j in range(data.q) if j not in idx]
    offset = data.Z[:, out] @ data.gamma0[out] if out else np.zeros(data.n)
    W = np.hstack([data.X, data.Z[:, idx]])
    coef, sigma, ll = _fit_design(data, W, offset)
    beta = coef[: data.p]
    gamma = data.gamma0.copy()
    gamma[idx] = coef[data.p:]
    theta = np.append(beta, sigma) if data.family == "linear" else beta
    return SubmodelFit(S, theta, gamma, focus.value(data.family, theta, gamma), ll)


def fit_all(data: GlmDataset, masks: Sequence[SubmodelMask], focus: FocusSpec, workers: int = 1):
    """Fit every mask; returns ``(fits, errors)`` where failures are collected, not raised."""

    def one(m):
        try:
            return fit_submodel(data, m, focus), None
        except Exception as exc:  # reported per model by callers
            return None, exc

    results = pmap(one, [(m,) for m in masks], workers)
    fits = [f for f, _ in results if f is not None]
    errors = {m: e for m, (_, e) in zip(masks, results) if e is not None}
    return fits, errors
