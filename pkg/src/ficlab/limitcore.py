"""Limit-experiment parameterisation and submodel linear algebra.

Inside the limit experiment the background quantities ``tau0``, ``omega`` and
``Q`` are known, and the local misspecification ``delta`` is seen only through
a single draw ``D ~ N_q(delta, Q)``. A candidate model is a subset ``S`` of the
``q`` open parameters; its estimator of the focus behaves in the limit like

    Lambda_S = Lambda_0 + omega' (delta - G_S D),   Lambda_0 ~ N(0, tau0^2),

where ``G_S`` is the projection-like matrix computed by :func:`geometry`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .exceptions import NumericalFailure
from .rng import make_rng

COND_LIMIT = 1e12
SYM_TOL = 1e-10


def spd_inverse(A: np.ndarray, what: str = "matrix") -> np.ndarray:
    """Invert a symmetric positive-definite matrix via Cholesky.

    Raises NumericalFailure when the condition number exceeds ``COND_LIMIT``
    or the Cholesky factorisation breaks down.
    """
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return np.zeros_like(A)
    ev = np.linalg.eigvalsh(0.5 * (A + A.T))
    if ev[0] <= 0 or ev[-1] / ev[0] > COND_LIMIT:
        raise NumericalFailure(f"{what} is singular or ill-conditioned (eigenvalues {ev[0]:.3g}..{ev[-1]:.3g})")
    try:
        c = cho_factor(A, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"Cholesky failed for {what}") from exc
    inv = cho_solve(c, np.eye(A.shape[0]))
    return 0.5 * (inv + inv.T)


@dataclass(frozen=True, order=True)
class SubmodelMask:
    """A subset of the open parameters, stored as a bitmask.

    Bit ``j`` (counting from 0) set means open parameter ``j + 1`` is
    estimated; otherwise it is pinned at its null value. ``bits == 0`` is the
    narrow model and ``bits == 2**q - 1`` the wide one.
    """

    bits: int
    q: int = field(compare=False)

    def __post_init__(self):
        if self.q < 1:
            raise ValueError("q must be at least 1")
        if self.bits < 0 or self.bits >= (1 << self.q):
            raise ValueError(f"mask {self.bits} outside subsets of {{1..{self.q}}}")

    @classmethod
    def from_indices(cls, indices: Iterable[int], q: int) -> "SubmodelMask":
        """Build from zero-based parameter indices."""
        bits = 0
        for j in indices:
            if not 0 <= j < q:
                raise ValueError(f"index {j} out of range for q={q}")
            bits |= 1 << j
        return cls(bits, q)

    @classmethod
    def from_label(cls, label: str) -> "SubmodelMask":
        """Parse an in/out label such as ``"1 0 1"`` or ``"101"``."""
        chars = [c for c in label if c in "01"]
        if not chars or len(chars) != len(label.replace(" ", "")):
            raise ValueError(f"bad in/out label {label!r}")
        return cls.from_indices([j for j, c in enumerate(chars) if c == "1"], len(chars))

    @classmethod
    def narrow(cls, q: int) -> "SubmodelMask":
        return cls(0, q)

    @classmethod
    def wide(cls, q: int) -> "SubmodelMask":
        return cls((1 << q) - 1, q)

    @property
    def indices(self) -> tuple[int, ...]:
        return tuple(j for j in range(self.q) if self.bits >> j & 1)

    @property
    def size(self) -> int:
        return bin(self.bits).count("1")

    @property
    def is_narrow(self) -> bool:
        return self.bits == 0

    @property
    def is_wide(self) -> bool:
        return self.bits == (1 << self.q) - 1

    def contains(self, j: int) -> bool:
        return bool(self.bits >> j & 1)

    @property
    def label(self) -> str:
        """In/out string, first character for the first open parameter."""
        return " ".join("1" if self.contains(j) else "0" for j in range(self.q))

    @property
    def code(self) -> str:
        return self.label.replace(" ", "")

    def __str__(self) -> str:
        return self.code


def all_masks(q: int, admissible: Callable[[SubmodelMask], bool] | None = None) -> list[SubmodelMask]:
    """All ``2**q`` submodels in increasing bitmask order, optionally filtered."""
    masks = [SubmodelMask(b, q) for b in range(1 << q)]
    if admissible is not None:
        masks = [m for m in masks if admissible(m)]
    return masks


def size_order(masks: Sequence[SubmodelMask]) -> list[SubmodelMask]:
    """Order by model size, then by label read left to right with 1 before 0.

    For q=3 this gives 000, 100, 010, 001, 110, 101, 011, 111, the customary
    layout of FIC tables (models M1..M8).
    """
    return sorted(masks, key=lambda m: (m.size, tuple(-int(m.contains(j)) for j in range(m.q))))


def requires(dependent: int, parent: int) -> Callable[[SubmodelMask], bool]:
    """Admissibility rule: open parameter ``dependent`` only if ``parent`` is in."""

    def rule(m: SubmodelMask) -> bool:
        return not m.contains(dependent) or m.contains(parent)

    return rule


@dataclass(frozen=True, eq=False)
class LimitExperiment:
    """Background of the limit experiment: ``tau0``, ``omega``, ``Q`` and optionally ``delta``/``D``."""

    tau0: float
    omega: np.ndarray
    Q: np.ndarray
    delta: np.ndarray | None = None
    D: np.ndarray | None = None

    def __post_init__(self):
        omega = np.array(self.omega, dtype=float).reshape(-1)
        Q = np.array(self.Q, dtype=float)
        q = omega.size
        if q < 1:
            raise ValueError("need at least one open parameter")
        if Q.shape != (q, q):
            raise ValueError(f"Q has shape {Q.shape}, expected {(q, q)}")
        if np.max(np.abs(Q - Q.T)) > SYM_TOL * max(1.0, np.max(np.abs(Q))):
            raise ValueError("Q must be symmetric")
        if np.linalg.eigvalsh(Q)[0] <= 0:
            raise ValueError("Q must be positive definite")
        if not self.tau0 >= 0:
            raise ValueError("tau0 must be nonnegative")
        object.__setattr__(self, "tau0", float(self.tau0))
        object.__setattr__(self, "omega", _frozen(omega))
        object.__setattr__(self, "Q", _frozen(0.5 * (Q + Q.T)))
        for name in ("delta", "D"):
            v = getattr(self, name)
            if v is not None:
                v = np.array(v, dtype=float).reshape(-1)
                if v.size != q:
                    raise ValueError(f"{name} must have length {q}")
                object.__setattr__(self, name, _frozen(v))

    @property
    def q(self) -> int:
        return self.omega.size

    @cached_property
    def Qinv(self) -> np.ndarray:
        return _frozen(spd_inverse(self.Q, "Q"))

    @property
    def wide_mse(self) -> float:
        return self.tau0**2 + float(self.omega @ self.Q @ self.omega)

    def with_D(self, D) -> "LimitExperiment":
        return LimitExperiment(self.tau0, self.omega, self.Q, self.delta, D)

    def with_delta(self, delta) -> "LimitExperiment":
        return LimitExperiment(self.tau0, self.omega, self.Q, delta, self.D)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SubmodelGeometry:
    """Per-submodel quantities; ``bias_direction`` is ``(I - G_S)' omega``."""

    mask: SubmodelMask
    G: np.ndarray
    Q_S: np.ndarray
    tau2: float
    sigma2: float
    bias_direction: np.ndarray

    @property
    def tau(self) -> float:
        return float(np.sqrt(self.tau2))

    @property
    def sigma(self) -> float:
        return float(np.sqrt(self.sigma2))


def geometry(exp: LimitExperiment, S: SubmodelMask) -> SubmodelGeometry:
    """Compute ``G_S``, ``Q_S``, ``tau_S^2`` and ``sigma_S^2`` for submodel ``S``.

    ``G_narrow = 0`` and ``G_wide = I`` are returned as exact constants.
    """
    q = exp.q
    if S.q != q:
        raise ValueError(f"mask is for q={S.q}, experiment has q={q}")
    idx = list(S.indices)
    if S.is_narrow:
        G = np.zeros((q, q))
        Q_S = np.zeros((0, 0))
    elif S.is_wide:
        G = np.eye(q)
        Q_S = exp.Q.copy()
    else:
        Qinv = exp.Qinv
        Q_S = spd_inverse(Qinv[np.ix_(idx, idx)], f"pi_S Q^-1 pi_S' for S={S}")
        G = np.zeros((q, q))
        G[idx, :] = Q_S @ Qinv[idx, :]
    om = exp.omega
    Gom = G.T @ om
    tau2 = exp.tau0**2 + float(Gom @ exp.Q @ Gom)
    if S.is_wide:
        sigma2 = 0.0
    else:
        b = om - Gom
        sigma2 = max(float(b @ exp.Q @ b), 0.0)
    return SubmodelGeometry(S, _frozen(G), _frozen(Q_S), tau2, sigma2, _frozen(om - Gom))


def true_mse(exp: LimitExperiment, S: SubmodelMask, delta=None) -> float:
    """Limiting mean squared error ``tau_S^2 + {omega'(I - G_S) delta}^2``."""
    if delta is None:
        delta = exp.delta
    if delta is None:
        raise ValueError("delta required")
    delta = np.asarray(delta, dtype=float).reshape(-1)
    if delta.size != exp.q:
        raise ValueError(f"delta must have length {exp.q}")
    geo = geometry(exp, S)
    if S.is_wide:
        return geo.tau2
    return geo.tau2 + float(geo.bias_direction @ delta) ** 2


def sample_limit(exp: LimitExperiment, delta=None, seed=None, size: int | None = None):
    """Draw ``(Lambda0, D)`` with ``Lambda0 ~ N(0, tau0^2)`` independent of ``D ~ N_q(delta, Q)``.

    With ``size=None`` a single joint draw is returned (scalar, length-q
    vector); otherwise arrays of shape ``(size,)`` and ``(size, q)``.
    """
    if delta is None:
        delta = exp.delta
    if delta is None:
        raise ValueError("delta required")
    delta = np.asarray(delta, dtype=float).reshape(-1)
    rng = make_rng(seed)
    n = 1 if size is None else int(size)
    L = np.linalg.cholesky(exp.Q)
    z = rng.standard_normal((n, exp.q))
    D = delta + z @ L.T
    lam0 = exp.tau0 * rng.standard_normal(n) if exp.tau0 > 0 else np.zeros(n)
    if size is None:
        return float(lam0[0]), D[0]
    return lam0, D


def limit_estimator(exp: LimitExperiment, S: SubmodelMask, delta, Lambda0, D) -> np.ndarray:
    """``Lambda_S = Lambda0 + omega'(delta - G_S D)`` for draws from :func:`sample_limit`."""
    geo = geometry(exp, S)
    D = np.atleast_2d(D)
    out = np.asarray(Lambda0) + float(exp.omega @ np.asarray(delta)) - D @ (geo.G.T @ exp.omega)
    return out if out.size > 1 else float(out[0])
