"""Confidence distributions for submodel mse / rmse and the quantile-FIC.

For submodel ``S`` write ``mse_S = tau_S^2 + sigma_S^2 * eta_S^2`` where
``eta_S`` is the standardised bias. The observed standardised squared bias
``b_obs = {omega'(I - G_S) D}^2 / sigma_S^2`` is a noncentral chi-squared with
one degree of freedom and noncentrality ``eta_S^2``, which gives the exact
confidence distribution

    C_S(mse) = 1 - Gamma_1(b_obs, (mse - tau_S^2) / sigma_S^2),   mse >= tau_S^2,

with a point mass ``1 - Gamma_1(b_obs)`` at ``tau_S^2``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import chdtri, ndtr, ndtri

from .limitcore import LimitExperiment, SubmodelGeometry, SubmodelMask, geometry
from .rng import make_rng

BISECT_RTOL = 1e-10
WIDE_RTOL = 1e-12


def nc_chi2_1_cdf(x, ncp):
    """CDF of the noncentral chi-squared with one degree of freedom.

    Uses ``Gamma_1(x, eta^2) = Phi(sqrt(x) - eta) - Phi(-sqrt(x) - eta)``,
    exact for one degree of freedom; ``ncp = 0`` gives the central law.
    """
    x = np.asarray(x, dtype=float)
    ncp = np.asarray(ncp, dtype=float)
    if np.any(x < 0) or np.any(ncp < 0):
        raise ValueError("x and ncp must be nonnegative")
    s = np.sqrt(x)
    e = np.sqrt(ncp)
    out = ndtr(s - e) - ndtr(-s - e)
    return out if out.ndim else float(out)


def nc_chi2_1_sf(x, ncp):
    """Upper tail ``1 - Gamma_1(x, ncp)``, computed without cancellation."""
    s = np.sqrt(np.asarray(x, dtype=float))
    e = np.sqrt(np.asarray(ncp, dtype=float))
    out = ndtr(e - s) + ndtr(-s - e)
    return out if out.ndim else float(out)


def bisect(f, lo, hi, target, increasing=True, rtol=BISECT_RTOL, atol=0.0, maxiter=300):
    """Vectorised bisection for the smallest ``x`` in ``[lo, hi]`` with ``f(x) >= target``.

    For decreasing ``f`` the roles flip: smallest ``x`` with ``f(x) <= target``.
    The returned upper end always satisfies the inequality, which is what
    quantile inversion needs. ``f`` must accept and return arrays.
    """
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    lo, hi, target = np.broadcast_arrays(lo, hi, np.asarray(target, dtype=float))
    lo, hi = lo.copy(), hi.copy()
    for _ in range(maxiter):
        width = hi - lo
        if np.all(width <= rtol * np.abs(hi) + atol):
            break
        mid = 0.5 * (lo + hi)
        v = f(mid)
        ok = v >= target if increasing else v <= target
        hi = np.where(ok, mid, hi)
        lo = np.where(ok, lo, mid)
    return hi if hi.ndim else float(hi)


def pointmass_threshold(q: float) -> float:
    """Largest bias ratio ``r`` whose CD point mass still reaches ``q``.

    The point mass ``1 - Gamma_1(r^2)`` is at least ``q`` iff
    ``r <= Gamma_1^{-1}(1 - q)^{1/2}``; 0.6745 for the median, 1.1503 for q=0.25.
    """
    _check_level(q)
    x = bisect(lambda x: nc_chi2_1_cdf(x, 0.0), 0.0, 100.0, 1.0 - q, rtol=1e-15, atol=1e-300)
    return float(np.sqrt(x))


def narrow_wide_cutoff(q: float) -> float:
    """Cut-off ``t0`` on ``|t(D)|`` below which the quantile-FIC keeps the narrow model.

    Solves ``Gamma_1(t0^2, 1) = 1 - q``; 1.0505 for the median.
    """
    _check_level(q)
    x = bisect(lambda x: nc_chi2_1_cdf(x, 1.0), 0.0, 200.0, 1.0 - q, rtol=1e-15, atol=1e-300)
    return float(np.sqrt(x))


def _check_level(q):
    if not 0.0 < q < 1.0:
        raise ValueError(f"level must lie strictly between 0 and 1, got {q}")


def quantile_mse(tau2, sigma2, b_obs, q):
    """Vectorised quantile-FIC ``min{mse : C(mse) >= q}`` on the limit (mse) scale.

    Entries with ``sigma2 == 0`` are wide-type models and return ``tau2``.
    """
    _check_level(q)
    tau2, sigma2, b_obs = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (tau2, sigma2, b_obs)))
    pm = nc_chi2_1_sf(b_obs, 0.0)
    need = (pm < q) & (sigma2 > 0)
    lam = np.zeros(tau2.shape)
    if np.any(need):
        lam[need] = _solve_ncp(b_obs[need], tau2[need], sigma2[need], q) ** 2
    out = tau2 + sigma2 * lam
    return out if out.ndim else float(out)


def _solve_ncp(b, tau2, sigma2, q, rtol=BISECT_RTOL):
    """Bisection in ``eta = sqrt(lambda)`` for ``1 - Gamma_1(b, eta^2) = q``.

    With ``s = sqrt(b)`` the confidence ``Phi(eta - s) + Phi(-eta - s)`` lies
    between ``Phi(eta - s)`` and ``Phi(eta - s) + Phi(-s)``, which brackets the
    root in ``[s + Phi^{-1}(q - Phi(-s)), s + Phi^{-1}(q)]``; that interval is
    inside ``[0, s + 10]``. Stops when the mse bracket is ``rtol``-relative.
    """
    s = np.sqrt(b)
    lo = np.maximum(s + ndtri(np.clip(q - ndtr(-s), 1e-300, 1.0)), 0.0)
    hi = np.minimum(s + ndtri(q) + 1e-9, s + 10.0)
    lo = np.minimum(lo, hi)
    active = np.ones(s.shape, dtype=bool)
    for _ in range(200):
        conv = sigma2 * (hi - lo) * (hi + lo) <= rtol * (tau2 + sigma2 * hi * hi)
        active &= ~conv
        if not active.any():
            break
        idx = np.flatnonzero(active)
        mid = 0.5 * (lo[idx] + hi[idx])
        ok = nc_chi2_1_sf(b[idx], mid * mid) >= q
        hi[idx] = np.where(ok, mid, hi[idx])
        lo[idx] = np.where(ok, lo[idx], mid)
    return hi


@dataclass(frozen=True)
class RmseCD:
    """Confidence distribution for ``mse_S`` (limit scale) or ``rmse_S / sqrt(n)``.

    ``n = 1`` is the pure limit experiment. On the data scale the argument
    ``rho`` relates to the limit scale through ``mse = n * rho^2``.
    """

    tau2: float
    sigma2: float
    b_obs: float
    n: float = 1.0
    is_wide: bool = False

    def __post_init__(self):
        if self.b_obs < 0 or self.tau2 < 0 or self.sigma2 < 0:
            raise ValueError("tau2, sigma2 and b_obs must be nonnegative")
        if self.sigma2 == 0 and not self.is_wide:
            object.__setattr__(self, "is_wide", True)

    @classmethod
    def from_geometry(cls, geo: SubmodelGeometry, D, n: float = 1.0) -> "RmseCD":
        D = np.asarray(D, dtype=float)
        if geo.mask.is_wide or geo.sigma2 == 0.0:
            return cls(geo.tau2, 0.0, 0.0, n, True)
        b = float(geo.bias_direction @ D) ** 2 / geo.sigma2
        return cls(geo.tau2, geo.sigma2, b, n, False)

    @property
    def r(self) -> float:
        """Bias ratio ``|omega'(I - G_S) D| / sigma_S`` (0 for the wide model)."""
        return float(np.sqrt(self.b_obs))

    @property
    def pointmass(self) -> float:
        return 1.0 if self.is_wide else nc_chi2_1_sf(self.b_obs, 0.0)

    @property
    def min_mse(self) -> float:
        return self.tau2

    @property
    def min_rmse(self) -> float:
        return float(np.sqrt(self.tau2 / self.n))

    def cdf(self, mse):
        """``C_S`` on the limit (mse) scale, vectorised."""
        mse = np.asarray(mse, dtype=float)
        if self.is_wide:
            out = np.where(mse >= self.tau2 * (1 - WIDE_RTOL), 1.0, 0.0)
        else:
            lam = np.maximum(mse - self.tau2, 0.0) / self.sigma2
            out = np.where(mse >= self.tau2, nc_chi2_1_sf(self.b_obs, lam), 0.0)
        return out if out.ndim else float(out)

    def cdf_rmse(self, rho):
        """``C*_S`` on the data root-mse scale."""
        rho = np.asarray(rho, dtype=float)
        return self.cdf(self.n * rho**2)

    def quantile(self, q: float) -> float:
        """Quantile-FIC on the mse scale."""
        if self.is_wide:
            _check_level(q)
            return self.tau2
        return quantile_mse(self.tau2, self.sigma2, self.b_obs, q)

    def quantile_rmse(self, q: float) -> float:
        return float(np.sqrt(self.quantile(q) / self.n))

    def interval(self, level: float = 0.8) -> tuple[float, float]:
        """Equal-tailed interval on the rmse scale; the lower end sits on the point mass when it covers the lower tail."""
        _check_level(level)
        tail = 0.5 * (1.0 - level)
        return self.quantile_rmse(tail), self.quantile_rmse(1.0 - tail)

    def curve(self, npts: int = 512, upper: float = 0.999) -> tuple[np.ndarray, np.ndarray]:
        """Grid ``(rho, C*(rho))`` from the minimum to the ``upper`` quantile."""
        lo = self.min_rmse
        hi = self.quantile_rmse(upper)
        rho = np.linspace(lo, hi, npts) if hi > lo else np.full(npts, lo)
        return rho, np.asarray(self.cdf_rmse(rho), dtype=float)


def rmse_cd(exp: LimitExperiment, S: SubmodelMask, n: float = 1.0, D=None) -> RmseCD:
    D = exp.D if D is None else D
    if D is None:
        raise ValueError("the experiment carries no observed D")
    return RmseCD.from_geometry(geometry(exp, S), D, n)


def cd_eval(cd: RmseCD, mse):
    return cd.cdf(mse)


def cd_quantile(cd: RmseCD, q: float) -> float:
    return cd.quantile(q)


def median_fic(cd: RmseCD) -> float:
    """Median-FIC on the rmse scale, ``sqrt(C^{-1}(1/2) / n)``."""
    return cd.quantile_rmse(0.5)


def cd_interval(cd: RmseCD, alpha: float = 0.8) -> tuple[float, float]:
    return cd.interval(alpha)


def mse_diff_interval(exp: LimitExperiment, S: SubmodelMask, T: SubmodelMask, alpha: float = 0.9,
                      m_samples: int = 10_000, seed=0) -> tuple[float, float]:
    """Conservative interval for ``d(delta) = mse_T - mse_S`` over a confidence ellipsoid.

    Samples ``delta`` uniformly in ``{(delta - D)' Q^{-1} (delta - D) <= chi2_q^{-1}(alpha)}``,
    adds ``D`` and the ``2q`` principal-axis extremes, and returns the range of
    ``d`` attained. Coverage is at least ``alpha``.
    """
    _check_level(alpha)
    if m_samples < 10_000:
        raise ValueError("m_samples must be at least 10^4")
    if exp.D is None:
        raise ValueError("the experiment carries no observed D")
    q = exp.q
    gS, gT = geometry(exp, S), geometry(exp, T)
    c = float(chdtri(q, 1.0 - alpha))
    rng = make_rng(seed)
    g = rng.standard_normal((m_samples, q))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    radius = rng.random(m_samples) ** (1.0 / q)
    L = np.linalg.cholesky(exp.Q)
    pts = exp.D + np.sqrt(c) * (g * radius[:, None]) @ L.T
    evals, evecs = np.linalg.eigh(exp.Q)
    axes = (np.sqrt(c * evals) * evecs).T
    pts = np.vstack([pts, exp.D, exp.D + axes, exp.D - axes])
    d = (gT.tau2 - gS.tau2) + (pts @ gT.bias_direction) ** 2 - (pts @ gS.bias_direction) ** 2
    if S.bits == T.bits:
        d = np.zeros_like(d)
    return float(d.min()), float(d.max())
