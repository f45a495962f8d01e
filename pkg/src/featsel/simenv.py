"""Benchmark world (figure-eight path, rotating camera, landmark ring) and metrics."""

from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import FeatselError, HorizonAbort, InvalidInputError, UndefinedGapError
from .estimator import (
    STREAM_MEAS,
    STREAM_TRUTH,
    World,
    complete_horizon,
    default_budget,
    initial_state,
    plan_horizon,
    simulate_truth,
)
from .motion import GaussianBelief, integrator_dynamics, propagate_prior, to_information
from .selection import (
    CandidateSet,
    Measure,
    best_of_restarts,
    evaluate_measure,
    greedy_select,
    maximal_information,
)
from .vision import CameraRig, Feature, build_contribution, euler_zyx

STREAM_LANDMARKS = 4
STREAM_LEVERAGE = 5
STREAM_UNIFORM = 6

METHODS = ("leverage", "uniform", "greedy")


@dataclass
class ScenarioConfig:
    R: float = 7500.0
    omega: float = 0.08
    omega_r: float = 0.0064
    p0: float = 0.0
    sigma: float = 0.1
    process_noise: tuple = (4.0, 4.0, 16.0)      # diagonal of Lambda
    init_cov: tuple = (1.0, 1.0, 1.0)            # diagonal of Sigma_0
    T: int = 20
    horizons: int = 400
    restarts: int = 50
    landmarks: int = 1752
    seed: int = 0
    budget_fraction: float = 0.5
    measure: str = "rho_v"
    fov_h_deg: float = 45.0
    fov_v_deg: float = 35.0
    radial_band: tuple = (1.2, 2.5)              # multiples of R
    height_band: tuple = (-1.0, 1.0)             # multiples of R
    cross_mode: str = "standard"
    chain_method: str = "greedy"
    process_noise_floor: float = 1e-6

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("R", "omega", "omega_r", "p0", "sigma", "budget_fraction", "process_noise_floor"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidInputError(f"{name} must be finite")
        if self.T < 1:
            raise InvalidInputError("T must be >= 1")
        if self.horizons < 1 or self.restarts < 1 or self.landmarks < 1:
            raise InvalidInputError("horizons, restarts and landmarks must be >= 1")
        if not self.sigma > 0:
            raise InvalidInputError("sigma must be positive")
        if len(self.process_noise) != 3 or min(self.process_noise) < 0:
            raise InvalidInputError("process_noise needs three nonnegative entries")
        if len(self.init_cov) != 3 or min(self.init_cov) <= 0:
            raise InvalidInputError("init_cov needs three positive entries")
        if not 0 < self.budget_fraction <= 1:
            raise InvalidInputError("budget_fraction must lie in (0, 1]")
        if self.process_noise_floor < 0:
            raise InvalidInputError("process_noise_floor must be >= 0")
        try:
            Measure(self.measure)
        except ValueError:
            raise InvalidInputError(f"unknown measure {self.measure!r}") from None
        if self.chain_method not in METHODS:
            raise InvalidInputError(f"chain_method must be one of {METHODS}")
        if self.cross_mode not in ("standard", "paper-literal"):
            raise InvalidInputError("cross_mode must be 'standard' or 'paper-literal'")

    @classmethod
    def paper(cls, **overrides) -> "ScenarioConfig":
        return cls(**overrides)

    @classmethod
    def desk(cls, **overrides) -> "ScenarioConfig":
        base = dict(T=10, horizons=40, restarts=16, landmarks=300)
        base.update(overrides)
        return cls(**base)

    @property
    def Lambda(self) -> np.ndarray:
        return np.diag(np.asarray(self.process_noise, dtype=float))

    @property
    def Sigma0(self) -> np.ndarray:
        return np.diag(np.asarray(self.init_cov, dtype=float))

    def to_dict(self) -> dict:
        # tuples as float lists, so "1,1,2" and "1.0,1.0,2.0" hash alike
        return {k: ([float(x) for x in v] if isinstance(v, tuple) else v)
                for k, v in dataclasses.asdict(self).items()}


def reference_path(cfg: ScenarioConfig, tau) -> np.ndarray:
    a = cfg.omega * tau
    return np.array([cfg.p0 + cfg.R * math.cos(a), cfg.R * math.sin(a), cfg.R * math.sin(a / 2.0)])


def orientation_schedule(cfg: ScenarioConfig, tau) -> np.ndarray:
    s = math.sin(cfg.omega_r * tau)
    return euler_zyx(2.0 * math.pi * s, -math.pi / 2.0 + (math.pi / 20.0) * s, 0.0)


def generate_landmarks(cfg: ScenarioConfig, seed=None) -> list[Feature]:
    """Seeded ring of points around the path center.

    Radii are area-uniform in ``radial_band * R``; heights uniform in
    ``height_band * R``.
    """
    rng = np.random.default_rng([cfg.seed if seed is None else seed, STREAM_LANDMARKS])
    r1, r2 = (b * cfg.R for b in cfg.radial_band)
    z1, z2 = (b * cfg.R for b in cfg.height_band)
    m = cfg.landmarks
    ang = rng.uniform(0.0, 2.0 * math.pi, m)
    rad = np.sqrt(rng.uniform(r1 * r1, r2 * r2, m))
    z = rng.uniform(z1, z2, m)
    pts = np.column_stack([cfg.p0 + rad * np.cos(ang), rad * np.sin(ang), z])
    return [Feature(i, pts[i]) for i in range(m)]


def tracking_controls(cfg: ScenarioConfig, mean, tau) -> np.ndarray:
    """Control at ``tau``: next reference position minus the current estimate."""
    return reference_path(cfg, tau + 1) - np.asarray(mean, dtype=float)


def rmse(truth, means, T: int | None = None) -> float:
    """``sqrt(sum ||x_tau - mu_tau||^2) / (3 (T + 1))`` (normalization outside the root)."""
    truth = np.asarray(truth, dtype=float).reshape(-1, 3)
    means = np.asarray(means, dtype=float).reshape(-1, 3)
    if truth.shape != means.shape:
        raise InvalidInputError(f"length mismatch: {truth.shape} vs {means.shape}")
    if T is None:
        T = truth.shape[0] - 1
    if truth.shape[0] != T + 1:
        raise InvalidInputError(f"expected {T + 1} samples, got {truth.shape[0]}")
    return math.sqrt(float(np.sum((truth - means) ** 2))) / (3 * (T + 1))


def relative_gap(theta: float, theta_ref: float) -> float:
    if theta_ref == 0:
        raise UndefinedGapError("reference RMSE is zero")
    return (theta - theta_ref) / theta_ref * 100.0


def cpu_ratio(t_method: float, t_greedy: float) -> float:
    if not (t_method > 0 and t_greedy > 0):
        raise InvalidInputError("timings must be positive")
    return t_method / t_greedy


def build_world(cfg: ScenarioConfig, landmarks=None) -> World:
    lam_model = cfg.Lambda + cfg.process_noise_floor * np.eye(3)
    rig = CameraRig(
        sigma=cfg.sigma,
        fov_half_angles=(math.radians(cfg.fov_h_deg), math.radians(cfg.fov_v_deg)),
    )
    return World(
        dynamics=integrator_dynamics(lam_model),
        rig=rig,
        landmarks=generate_landmarks(cfg) if landmarks is None else landmarks,
        reference=lambda tau: reference_path(cfg, tau),
        orientation=lambda tau: orientation_schedule(cfg, tau),
        truth_noise=cfg.Lambda,
        cross_mode=cfg.cross_mode,
    )


@dataclass
class MetricsRecord:
    horizon: int
    t: int
    N: int
    q: int
    rho_theta: float
    rho: dict = field(default_factory=dict)
    theta: dict = field(default_factory=dict)
    phi: dict = field(default_factory=dict)
    kappa: dict = field(default_factory=dict)
    elapsed: dict = field(default_factory=dict)
    selected: dict = field(default_factory=dict)


@dataclass
class BenchmarkResult:
    config: ScenarioConfig
    records: list
    workers: int

    def series(self, attr: str, method: str) -> np.ndarray:
        return np.array([getattr(r, attr)[method] for r in self.records])

    def kappa_cdf(self, method: str) -> tuple[np.ndarray, np.ndarray]:
        k = np.sort(self.series("kappa", method))
        return k, np.arange(1, k.size + 1) / k.size

    @property
    def turns(self) -> float:
        steps = self.config.horizons * self.config.T
        return steps * self.config.omega / (2.0 * math.pi)


def _seed_seq(*parts) -> list[int]:
    return [int(p) for p in parts]


def run_benchmark(
    cfg: ScenarioConfig,
    workers: int = 1,
    progress: Callable[[MetricsRecord], None] | None = None,
) -> BenchmarkResult:
    """All three selectors on identical candidates and noise, horizon by horizon.

    The closed loop (controls, next-horizon prior) follows ``cfg.chain_method``;
    the other methods are evaluated against the same prior, candidates, ground
    truth and measurement noise, so they differ only in their selection.
    """
    world = build_world(cfg)
    measure = Measure(cfg.measure)
    belief, x = initial_state(world, reference_path(cfg, 0), cfg.Sigma0, cfg.seed)
    records = []
    for h in range(cfg.horizons):
        t = h * cfg.T
        try:
            setup = plan_horizon(world, belief, t, cfg.T)
            truth = simulate_truth(world, setup, x, np.random.default_rng([cfg.seed, STREAM_TRUTH, h]))
            cand = setup.candidates
            q = default_budget(cand.N, cfg.budget_fraction)
            sels = {
                "leverage": best_of_restarts(
                    cand, q, measure, cfg.restarts, _seed_seq(cfg.seed, STREAM_LEVERAGE, h),
                    "leverage", workers),
                "uniform": best_of_restarts(
                    cand, q, measure, cfg.restarts, _seed_seq(cfg.seed, STREAM_UNIFORM, h),
                    "uniform", workers),
                "greedy": greedy_select(cand, q, measure),
            }
            posts = {
                m: complete_horizon(
                    world, setup, s, truth,
                    lambda fid: np.random.default_rng([cfg.seed, STREAM_MEAS, h, int(fid)]))
                for m, s in sels.items()
            }
            rho_theta = evaluate_measure(measure, maximal_information(cand))
        except FeatselError as exc:
            raise HorizonAbort(h, exc) from exc

        rec = MetricsRecord(horizon=h, t=t, N=cand.N, q=q, rho_theta=rho_theta)
        for m in METHODS:
            rec.rho[m] = sels[m].value
            rec.theta[m] = rmse(truth, posts[m].belief.mean, cfg.T)
            rec.elapsed[m] = sels[m].elapsed
            rec.selected[m] = sels[m].selected
        for m in METHODS:
            rec.phi[m] = relative_gap(rec.theta[m], rec.theta["greedy"])
            rec.kappa[m] = cpu_ratio(rec.elapsed[m], rec.elapsed["greedy"])
        records.append(rec)
        if progress is not None:
            progress(rec)
        belief = posts[cfg.chain_method].belief.marginal(cfg.T)
        x = truth[-1]
    return BenchmarkResult(cfg, records, workers)


# --- random instances for oracles, certificates and scaling -----------------


@dataclass
class RandomInstance:
    prior: GaussianBelief
    contributions: list
    features: list
    orientations: np.ndarray
    positions: np.ndarray
    rig: CameraRig

    @property
    def info(self):
        return to_information(self.prior)

    @property
    def candidates(self) -> CandidateSet:
        return CandidateSet.from_contributions(self.info, self.contributions)


def random_instance(rng, N: int, T: int, sigma: float = 1.0, visibility: float = 0.7,
                    noise_scale: float = 1.0) -> RandomInstance:
    """Small forward-looking camera scene with ``N`` triangulable features.

    The robot advances along +x under an integrator prior; features sit in
    front of the camera (+z) and each is tracked in a random subset of at
    least two frames.
    """
    rng = np.random.default_rng(rng)
    if N < 0 or T < 1:
        raise InvalidInputError("need N >= 0 and T >= 1")
    lam = np.diag(rng.uniform(0.1, 1.0, 3)) * noise_scale
    u_ref = np.array([[float(k), 0.0, 0.0] for k in range(1, T + 1)]) + rng.normal(0, 0.1, (T, 3))
    orientations = np.array([euler_zyx(*rng.normal(0, 0.05, 3)) for _ in range(T + 1)])
    prior, _ = propagate_prior(integrator_dynamics(lam), np.zeros(3), np.eye(3), u_ref)
    means = prior.mean.reshape(-1, 3)
    rig = CameraRig(sigma=sigma, fov_half_angles=(math.radians(80), math.radians(80)))
    contribs, feats = [], []
    fid = 0
    while len(contribs) < N:
        y = np.array([rng.uniform(-2.0, T + 2.0), rng.uniform(-3.0, 3.0), rng.uniform(4.0, 12.0)])
        mask = rng.random(T + 1) < visibility
        if mask.sum() < 2:
            mask[rng.choice(T + 1, 2, replace=False)] = True
        f = Feature(fid, y)
        fid += 1
        c = build_contribution(rig, orientations, means, f, mask=mask)
        if c.triangulable:
            contribs.append(c)
            feats.append(f)
    return RandomInstance(prior, contribs, feats, orientations, means, rig)


def random_candidates(rng, N: int, T: int, **kw) -> CandidateSet:
    return random_instance(rng, N, T, **kw).candidates


# --- selection-step scaling -------------------------------------------------


@dataclass
class ScalingRow:
    N: int
    q: int
    leverage: float         # median seconds
    greedy: float

    @property
    def ratio(self) -> float:
        return self.greedy / self.leverage


@dataclass
class ScalingResult:
    rows: list
    slopes: dict            # method -> log-log slope, empty with fewer than two sizes

    @property
    def ratio_monotone(self) -> bool:
        r = [row.ratio for row in self.rows]
        return all(b > a for a, b in zip(r, r[1:]))


def loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


def run_scaling(sizes, trials: int = 3, T: int = 2, restarts: int = 16, seed: int = 0,
                q_fraction: float = 0.5, measure: str = "rho_v") -> ScalingResult:
    """Median selection wall time of the leverage pipeline and greedy versus ``N``."""
    sizes = [int(n) for n in sizes]
    if not sizes or any(n < 1 for n in sizes):
        raise InvalidInputError("sizes must be positive")
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise InvalidInputError("sizes must be strictly increasing")
    if trials < 1:
        raise InvalidInputError("trials must be >= 1")
    rows = []
    for N in sizes:
        c = random_candidates([seed, N], N, T)
        q = max(1, int(round(q_fraction * N)))
        lev, gre = [], []
        for k in range(trials):
            lev.append(best_of_restarts(c, q, measure, restarts, [seed, STREAM_LEVERAGE, N, k]).elapsed)
            gre.append(greedy_select(c, q, measure).elapsed)
        rows.append(ScalingRow(N, q, float(np.median(lev)), float(np.median(gre))))
    slopes = {}
    if len(rows) > 1:
        ns = [r.N for r in rows]
        slopes = {
            "leverage": loglog_slope(ns, [r.leverage for r in rows]),
            "greedy": loglog_slope(ns, [r.greedy for r in rows]),
        }
    return ScalingResult(rows, slopes)
