"""Additive information fusion and the per-horizon closed loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.linalg as sla

from . import numerics as nx
from .errors import FeatselError, FusionShapeError, HorizonAbort, InvalidInputError
from .motion import (
    DynamicsSpec,
    GaussianBelief,
    HorizonPlan,
    InformationState,
    from_information,
    propagate_prior,
    to_information,
)
from .selection import CandidateSet, SelectionResult
from .vision import (
    CameraRig,
    Feature,
    FeatureContribution,
    bearing,
    build_contribution,
    contribution_from_bearings,
    observe,
    visibility_matrix,
)

# named substreams under the master seed
STREAM_INIT = 1
STREAM_TRUTH = 2
STREAM_MEAS = 3


@dataclass(frozen=True)
class FusedPosterior:
    info: InformationState
    belief: GaussianBelief
    used: tuple


def fuse(
    prior: InformationState,
    selected: Sequence[FeatureContribution],
    measurements: Mapping[int, np.ndarray] | Sequence[np.ndarray],
) -> FusedPosterior:
    """``H = H_prior + sum Hf`` and ``b = b_prior + sum (Bf z)^T``.

    ``measurements`` is keyed by feature id, or aligned with ``selected``.
    """
    if not isinstance(measurements, Mapping):
        if len(measurements) != len(selected):
            raise FusionShapeError("one measurement vector per selected feature required")
        measurements = {c.feature_id: z for c, z in zip(selected, measurements)}
    H_terms = []
    b_terms = []
    for c in selected:
        if not c.triangulable:
            raise InvalidInputError(f"feature {c.feature_id} is not triangulable")
        z = np.asarray(measurements[c.feature_id], dtype=float).reshape(-1)
        if z.shape[0] != c.Bf.shape[1] or c.Bf.shape[0] != prior.dim:
            raise FusionShapeError(
                f"feature {c.feature_id}: z has length {z.shape[0]}, Bf is {c.Bf.shape}"
            )
        H_terms.append(c.Hf)
        b_terms.append(c.Bf @ z)
    H = nx.pairwise_sum(H_terms, start=prior.H) if H_terms else prior.H.copy()
    b = nx.pairwise_sum(b_terms, start=prior.b) if b_terms else prior.b.copy()
    info = InformationState(b=b, H=0.5 * (H + H.T))
    if not selected:
        belief = from_information(info)
    else:
        belief = _square_root_posterior(prior, selected, measurements)
    return FusedPosterior(info=info, belief=belief, used=tuple(c.feature_id for c in selected))


def _square_root_posterior(prior: InformationState, selected, measurements) -> GaussianBelief:
    """Posterior of the same fused information, solved by QR on stacked factors.

    Equivalent to ``from_information(H, b)`` but never squares the condition
    number, and works on the deviation from the prior mean so that large
    absolute coordinates do not cancel.
    """
    mu0 = from_information(prior).mean
    L = nx.cholesky(prior.H)
    rows = [L.T]
    rhs = [np.zeros(prior.dim)]
    for c in selected:
        z = np.asarray(measurements[c.feature_id], dtype=float).reshape(-1)
        rows.append(c.G)
        rhs.append(c.W @ (z - c.F @ mu0))
    Q, R = np.linalg.qr(np.vstack(rows))
    delta = sla.solve_triangular(R, Q.T @ np.concatenate(rhs))
    Rinv = sla.solve_triangular(R, np.eye(prior.dim))
    cov = Rinv @ Rinv.T
    return GaussianBelief(mean=mu0 + delta, cov=0.5 * (cov + cov.T))


@dataclass(frozen=True)
class World:
    """Everything the closed loop needs to know about the environment.

    ``dynamics`` is the planner's model; ``truth_noise`` is the covariance the
    simulator actually injects.
    """

    dynamics: DynamicsSpec
    rig: CameraRig
    landmarks: Sequence[Feature]
    reference: Callable[[int], np.ndarray]
    orientation: Callable[[int], np.ndarray]
    truth_noise: np.ndarray
    cross_mode: str = "standard"

    @property
    def landmark_positions(self) -> np.ndarray:
        return np.array([f.y for f in self.landmarks]).reshape(-1, 3)


@dataclass
class HorizonSetup:
    t: int
    T: int
    prior_belief: GaussianBelief
    prior_info: InformationState
    plan: HorizonPlan
    orientations: np.ndarray
    candidates: CandidateSet
    features: dict = field(default_factory=dict)

    @property
    def means(self) -> np.ndarray:
        return self.prior_belief.mean.reshape(-1, 3)


def plan_horizon(world: World, start: GaussianBelief, t: int, T: int, min_frames: int = 2) -> HorizonSetup:
    """Propagate the prior and enumerate the triangulable candidates ``Theta_t``."""
    u_ref = np.array([world.reference(t + k) for k in range(1, T + 1)])
    orientations = np.array([world.orientation(t + k) for k in range(T + 1)])
    belief, plan = propagate_prior(
        world.dynamics, start.mean, start.cov, u_ref, cross_mode=world.cross_mode, t=t,
        orientations=orientations,
    )
    info = to_information(belief)
    means = belief.mean.reshape(-1, 3)
    vis = visibility_matrix(world.rig, means, orientations, world.landmark_positions)
    counts = vis.sum(axis=0)
    contribs = []
    features = {}
    for j in np.flatnonzero(counts >= min_frames):
        f = world.landmarks[j]
        c = build_contribution(world.rig, orientations, means, f, mask=vis[:, j])
        if c.triangulable:
            contribs.append(c)
            features[f.id] = f
    cand = CandidateSet.from_contributions(info, contribs)
    return HorizonSetup(t, T, belief, info, plan, orientations, cand, features)


def _sqrt_psd(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(nx.sym(m))
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def simulate_truth(world: World, setup: HorizonSetup, x_start, rng) -> np.ndarray:
    """Ground truth under the controls the robot computes from its prior means."""
    means = setup.means
    L = _sqrt_psd(world.truth_noise)
    xs = [np.asarray(x_start, dtype=float)]
    for k in range(1, setup.T + 1):
        u = world.dynamics.h(setup.plan.u_ref[k - 1], means[k - 1])
        xs.append(np.asarray(world.dynamics.g(xs[-1], u)) + L @ rng.standard_normal(3))
    return np.array(xs)


def measure_features(world: World, setup: HorizonSetup, truth: np.ndarray, ids, noise_rng: Callable[[int], np.random.Generator]):
    """Measured contributions and stacked ``z`` for the features in ``ids``.

    Bearings come from the true poses; frames follow the planned visibility
    mask.  ``noise_rng(fid)`` yields the per-feature noise stream so that every
    method sees identical measurements of a shared feature.
    """
    contribs = []
    zs = {}
    planned = {c.feature_id: c for c in setup.candidates.contributions or []}
    for fid in ids:
        f = setup.features[fid]
        mask = planned[fid].mask
        rng = noise_rng(fid)
        bearings = {}
        z = []
        for k in np.flatnonzero(mask):
            R = setup.orientations[k]
            u = bearing(world.rig, truth[k], R, f.y)
            bearings[int(k)] = u
            z.append(observe(world.rig, truth[k], R, f, u_meas=u, rng=rng))
        c = contribution_from_bearings(world.rig, setup.orientations, bearings, fid)
        if c.triangulable:
            contribs.append(c)
            zs[fid] = np.concatenate(z)
    return contribs, zs


@dataclass
class HorizonRecord:
    index: int
    t: int
    T: int
    N: int
    q: int
    selection: SelectionResult
    posterior: FusedPosterior
    truth: np.ndarray
    theta: float
    prior_belief: GaussianBelief

    @property
    def terminal(self) -> GaussianBelief:
        return self.posterior.belief.marginal(self.T)


def default_budget(N: int, fraction: float = 0.5) -> int:
    return int(math.ceil(fraction * N))


def complete_horizon(world, setup, selection: SelectionResult, truth, noise_rng) -> FusedPosterior:
    contribs, zs = measure_features(world, setup, truth, selection.selected, noise_rng)
    return fuse(setup.prior_info, contribs, zs)


def run_horizon(
    world: World,
    start: GaussianBelief,
    x_start,
    index: int,
    T: int,
    select: Callable[[CandidateSet, int], SelectionResult],
    seed: int = 0,
    budget_fraction: float = 0.5,
) -> HorizonRecord:
    """One receding-horizon step: propagate, enumerate, select, simulate, fuse."""
    t = index * T
    try:
        setup = plan_horizon(world, start, t, T)
        truth = simulate_truth(world, setup, x_start, np.random.default_rng([seed, STREAM_TRUTH, index]))
        q = default_budget(setup.candidates.N, budget_fraction)
        sel = select(setup.candidates, q)
        post = complete_horizon(
            world, setup, sel, truth,
            lambda fid: np.random.default_rng([seed, STREAM_MEAS, index, int(fid)]),
        )
    except FeatselError as exc:
        raise HorizonAbort(index, exc) from exc
    from .simenv import rmse

    theta = rmse(truth, post.belief.mean, T)
    return HorizonRecord(index, t, T, setup.candidates.N, q, sel, post, truth, theta, setup.prior_belief)


def initial_state(world: World, mean0, cov0, seed: int, sample: bool = True) -> tuple[GaussianBelief, np.ndarray]:
    """Initial belief and a truth start drawn from it (or equal to its mean).

    A common offset of the whole trajectory is invisible to bearings of
    unmapped landmarks, so noiseless runs start the truth at the mean.
    """
    mean0 = np.asarray(mean0, dtype=float)
    cov0 = nx.sym(cov0)
    if not sample:
        return GaussianBelief(mean0, cov0), mean0.copy()
    rng = np.random.default_rng([seed, STREAM_INIT])
    x0 = mean0 + _sqrt_psd(cov0) @ rng.standard_normal(3)
    return GaussianBelief(mean0, cov0), x0
