"""Prior propagation of the stacked horizon state and moment/information duality."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np

from . import numerics as nx
from .errors import CrossCovarianceError, InvalidInputError, LinearizationError

CrossMode = Literal["standard", "paper-literal"]
CROSS_MODES = ("standard", "paper-literal")

Vec = np.ndarray
Map = Callable[[Vec, Vec], Vec]


@dataclass(frozen=True)
class DynamicsSpec:
    """Closed-loop dynamics ``x_tau = g(x_{tau-1}, h(u_ref, mu)) + delta``.

    ``process_noise`` is a 3x3 matrix or a callable ``tau -> 3x3``.  When
    ``jacobian`` is None the state Jacobian of the composed map is computed by
    central differences.
    """

    g: Map
    h: Map
    process_noise: np.ndarray | Callable[[int], np.ndarray]
    jacobian: Callable[[Vec, Vec, Vec], np.ndarray] | None = None

    def noise(self, tau: int) -> np.ndarray:
        lam = self.process_noise(tau) if callable(self.process_noise) else self.process_noise
        lam = nx.sym(lam)
        if lam.shape != (3, 3) or not nx.psd_check(lam):
            raise InvalidInputError(f"process noise at step {tau} must be a 3x3 PSD matrix")
        return lam


def integrator_dynamics(process_noise) -> DynamicsSpec:
    """``g(x, u) = x + u`` driven by the tracking law ``h(u_ref, mu) = u_ref - mu``.

    ``u_ref`` is the reference *position* for the step, so the applied control
    is reference-minus-estimate.
    """
    return DynamicsSpec(
        g=lambda x, u: x + u,
        h=lambda u_ref, mu: u_ref - mu,
        process_noise=process_noise,
        jacobian=lambda x, mu, u_ref: np.eye(3),
    )


@dataclass(frozen=True)
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def block_mean(self, k: int) -> np.ndarray:
        return self.mean[3 * k:3 * k + 3]

    def block_cov(self, k: int) -> np.ndarray:
        return self.cov[3 * k:3 * k + 3, 3 * k:3 * k + 3]

    def marginal(self, k: int) -> "GaussianBelief":
        return GaussianBelief(self.block_mean(k).copy(), self.block_cov(k).copy())


@dataclass(frozen=True)
class InformationState:
    """Information vector ``b = mu^T Sigma^{-1}`` (stored 1-D) and matrix ``H``."""

    b: np.ndarray
    H: np.ndarray

    @property
    def dim(self) -> int:
        return self.b.shape[0]


@dataclass(frozen=True)
class HorizonPlan:
    t: int
    T: int
    u_ref: np.ndarray           # (T, 3), steps t+1 .. t+T
    deltas: np.ndarray          # (T, 3)
    A: np.ndarray               # (T, 3, 3)
    noise: np.ndarray           # (T, 3, 3)
    orientations: np.ndarray | None = field(default=None)  # (T+1, 3, 3)

    def __post_init__(self):
        if self.u_ref.shape != (self.T, 3):
            raise InvalidInputError(f"expected {self.T} reference controls, got {self.u_ref.shape}")
        if not np.all(np.isfinite(self.A)):
            raise InvalidInputError("non-finite linearization")


def _fd_jacobian(func, x: np.ndarray) -> np.ndarray:
    jac = np.empty((3, 3))
    for j in range(3):
        step = 1e-6 * (1.0 + abs(x[j]))
        xp = x.copy()
        xm = x.copy()
        xp[j] += step
        xm[j] -= step
        jac[:, j] = (np.asarray(func(xp)) - np.asarray(func(xm))) / (2.0 * step)
    return jac


def linearize(spec: DynamicsSpec, mean_prev, u_ref) -> tuple[np.ndarray, np.ndarray]:
    """Working point ``delta = g(mu, h(u_ref, mu))`` and ``A = df/dx`` with mu held fixed."""
    mu = np.asarray(mean_prev, dtype=float)
    u = np.asarray(u_ref, dtype=float)
    delta = np.asarray(spec.g(mu, spec.h(u, mu)), dtype=float)
    if spec.jacobian is not None:
        A = np.asarray(spec.jacobian(mu, mu, u), dtype=float)
    else:
        ctrl = spec.h(u, mu)
        A = _fd_jacobian(lambda x: spec.g(x, ctrl), mu)
    if delta.shape != (3,) or A.shape != (3, 3):
        raise LinearizationError(f"dynamics returned shapes {delta.shape}, {A.shape}")
    if not (np.all(np.isfinite(delta)) and np.all(np.isfinite(A))):
        raise LinearizationError("non-finite linearization at the working point")
    return delta, A


def _transition(As: np.ndarray, k1: int, k2: int) -> np.ndarray:
    """``A_{k2} ... A_{k1+1}`` using horizon-local indices (A_k drives step k)."""
    out = np.eye(3)
    for k in range(k1 + 1, k2 + 1):
        out = As[k - 1] @ out
    return out


def _literal_product(As: np.ndarray, k1: int, k2: int) -> np.ndarray:
    """Product ``prod_{i=1}^{k2-k1} A_{k2-i-1}``, left to right as written.

    Indices that fall outside the horizon's defined steps 1..T use the
    identity.
    """
    out = np.eye(3)
    for i in range(1, k2 - k1 + 1):
        k = k2 - i - 1
        out = out @ (As[k - 1] if 1 <= k <= len(As) else np.eye(3))
    return out


def assemble_covariance(diag_blocks: np.ndarray, As: np.ndarray, cross_mode: CrossMode) -> np.ndarray:
    T1 = diag_blocks.shape[0]
    cov = np.zeros((3 * T1, 3 * T1))
    for k1 in range(T1):
        cov[3 * k1:3 * k1 + 3, 3 * k1:3 * k1 + 3] = diag_blocks[k1]
        for k2 in range(k1 + 1, T1):
            if cross_mode == "standard":
                blk = diag_blocks[k1] @ _transition(As, k1, k2).T
            else:
                blk = (_literal_product(As, k1, k2) - np.eye(3)) @ diag_blocks[k1]
            cov[3 * k1:3 * k1 + 3, 3 * k2:3 * k2 + 3] = blk
            cov[3 * k2:3 * k2 + 3, 3 * k1:3 * k1 + 3] = blk.T
    return cov


def propagate_prior(
    spec: DynamicsSpec,
    init_mean,
    init_cov,
    u_ref,
    cross_mode: CrossMode = "standard",
    t: int = 0,
    orientations=None,
) -> tuple[GaussianBelief, HorizonPlan]:
    """Mean and covariance of the stacked state over ``[t, t+T]``."""
    if cross_mode not in CROSS_MODES:
        raise InvalidInputError(f"unknown cross_mode {cross_mode!r}")
    u_ref = np.atleast_2d(np.asarray(u_ref, dtype=float))
    T = u_ref.shape[0]
    if T < 1:
        raise InvalidInputError("horizon length must be >= 1")
    mu = np.asarray(init_mean, dtype=float).reshape(3)
    sig = nx.sym(init_cov)
    nx.cholesky(sig)

    means = [mu]
    blocks = [sig]
    deltas = np.empty((T, 3))
    As = np.empty((T, 3, 3))
    noises = np.empty((T, 3, 3))
    for k in range(1, T + 1):
        delta, A = linearize(spec, means[-1], u_ref[k - 1])
        lam = spec.noise(t + k)
        deltas[k - 1], As[k - 1], noises[k - 1] = delta, A, lam
        blocks.append(nx.sym(A @ blocks[-1] @ A.T + lam, check=False))
        means.append(delta)

    cov = assemble_covariance(np.array(blocks), As, cross_mode)
    # singular-but-PSD is accepted here (zero process noise); the information
    # form conversion is where strict definiteness is enforced
    lo = nx.min_eig(cov)
    if lo < -nx.default_tol(cov):
        raise CrossCovarianceError(cross_mode, lo)
    plan = HorizonPlan(
        t=t, T=T, u_ref=u_ref, deltas=deltas, A=As, noise=noises,
        orientations=None if orientations is None else np.asarray(orientations, dtype=float),
    )
    return GaussianBelief(np.concatenate(means), cov), plan


def to_information(belief: GaussianBelief) -> InformationState:
    H = nx.spd_inv(belief.cov)
    b = nx.spd_solve(belief.cov, belief.mean)
    return InformationState(b=b, H=H)


def from_information(state: InformationState) -> GaussianBelief:
    cov = nx.spd_inv(state.H)
    mean = nx.spd_solve(state.H, state.b)
    return GaussianBelief(mean=mean, cov=cov)
