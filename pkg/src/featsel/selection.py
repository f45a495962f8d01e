"""Budgeted feature selection over PSD information contributions.

Three selectors share one candidate representation: leverage-score sampling
(with best-of-``p`` restarts), uniform sampling, and greedy.  The analysis
variant of the sampler additionally tracks the per-eigen-term weights needed
for the spectral-approximation certificate.
"""

from __future__ import annotations

import enum
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import numerics as nx
from .errors import InvalidInputError, NotPositiveDefiniteError
from .motion import InformationState
from .vision import FeatureContribution


class Measure(str, enum.Enum):
    RHO_V = "rho_v"
    RHO_E = "rho_e"
    RHO_LAMBDA = "rho_lambda"


def evaluate_measure(m: Measure | str, H) -> float:
    """``rho_v = tr(H^-1)``, ``rho_e = -log det H``, ``rho_lambda = 1/lambda_min(H)``."""
    m = Measure(m)
    if m is Measure.RHO_V:
        L = nx.cholesky(H)
        Linv = np.linalg.inv(L)
        return float(np.sum(Linv * Linv))
    if m is Measure.RHO_E:
        return -nx.logdet(H)
    lo = nx.min_eig(H)
    if not lo > 0:
        raise NotPositiveDefiniteError("matrix is not positive definite")
    return 1.0 / lo


def batch_measure(m: Measure | str, Hs: np.ndarray) -> np.ndarray:
    """Vectorized :func:`evaluate_measure` over a stack ``(k, n, n)``."""
    m = Measure(m)
    if m is Measure.RHO_LAMBDA:
        lo = np.linalg.eigvalsh(Hs)[:, 0]
        if np.any(lo <= 0):
            raise NotPositiveDefiniteError("stack contains a non-PD matrix")
        return 1.0 / lo
    try:
        L = np.linalg.cholesky(Hs)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("stack contains a non-PD matrix") from exc
    if m is Measure.RHO_E:
        return -2.0 * np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1)
    Linv = np.linalg.inv(L)
    return np.sum(Linv * Linv, axis=(1, 2))


class CandidateSet:
    """Prior information plus the triangulable candidates ``Theta_t``.

    Candidates are kept sorted by feature id; ``Hf`` is the stacked
    ``(N, n, n)`` array of contributions.
    """

    def __init__(self, prior_H, Hf, ids=None, prior_b=None, contributions=None):
        self.prior_H = nx.sym(prior_H)
        n = self.prior_H.shape[0]
        Hf = np.asarray(Hf, dtype=float).reshape(-1, n, n)
        ids = np.arange(Hf.shape[0]) if ids is None else np.asarray(ids, dtype=int)
        if ids.shape[0] != Hf.shape[0]:
            raise InvalidInputError("one id per contribution required")
        if len(set(ids.tolist())) != len(ids):
            raise InvalidInputError("duplicate feature ids")
        order = np.argsort(ids, kind="stable")
        self.ids = ids[order]
        self.Hf = 0.5 * (Hf[order] + Hf[order].transpose(0, 2, 1))
        self.prior_b = None if prior_b is None else np.asarray(prior_b, dtype=float)
        self.contributions = None
        if contributions is not None:
            self.contributions = [contributions[i] for i in order]

    @classmethod
    def from_contributions(cls, prior: InformationState, contributions: Sequence[FeatureContribution]):
        usable = [c for c in contributions if c.triangulable]
        n = prior.H.shape[0]
        Hf = np.array([c.Hf for c in usable]) if usable else np.zeros((0, n, n))
        return cls(prior.H, Hf, [c.feature_id for c in usable], prior_b=prior.b, contributions=usable)

    @property
    def N(self) -> int:
        return self.Hf.shape[0]

    @property
    def n(self) -> int:
        return self.prior_H.shape[0]

    def index_of(self, ids) -> np.ndarray:
        pos = {int(f): i for i, f in enumerate(self.ids)}
        return np.array([pos[int(f)] for f in ids], dtype=int)

    def fused(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=int)
        if idx.size == 0:
            return self.prior_H.copy()
        return self.prior_H + self.Hf[idx].sum(axis=0)


def maximal_information(c: CandidateSet) -> np.ndarray:
    return c.fused(np.arange(c.N))


@dataclass(frozen=True)
class ScoreTable:
    ids: np.ndarray
    r: np.ndarray
    pi: np.ndarray
    n: int


def leverage_scores(c: CandidateSet, H_max=None) -> ScoreTable:
    """``r_f = tr(H(Theta)^-1 (H_prior / N + Hf))`` and ``pi_f = r_f / n``."""
    if c.N == 0:
        raise InvalidInputError("empty candidate set")
    H_max = maximal_information(c) if H_max is None else H_max
    G = nx.spd_inv(H_max)
    # tr(G X) = sum(G * X) for symmetric X
    r = np.einsum("ij,fij->f", G, c.Hf) + float(np.sum(G * c.prior_H)) / c.N
    r = np.maximum(r, 0.0)
    return ScoreTable(ids=c.ids.copy(), r=r, pi=r / c.n, n=c.n)


def uniform_scores(c: CandidateSet) -> ScoreTable:
    pi = np.full(c.N, 1.0 / c.N)
    return ScoreTable(ids=c.ids.copy(), r=pi * c.n, pi=pi, n=c.n)


@dataclass
class SelectionResult:
    method: str
    selected: tuple
    H: np.ndarray
    measure: Measure
    value: float
    elapsed: float = 0.0
    restart: int | None = None
    draws: np.ndarray | None = None
    restart_values: tuple = ()

    @property
    def size(self) -> int:
        return len(self.selected)


def _probabilities(pi: np.ndarray) -> np.ndarray:
    p = np.clip(np.asarray(pi, dtype=float), 0.0, None)
    return p / p.sum()


def _first_occurrences(draws: np.ndarray) -> np.ndarray:
    if draws.size == 0:
        return draws
    _, first = np.unique(draws, return_index=True)
    return draws[np.sort(first)]


def _run_sampler(c: CandidateSet, probs: np.ndarray, q: int, rng, measure, method) -> SelectionResult:
    if q < 0:
        raise InvalidInputError("q must be >= 0")
    draws = rng.choice(c.N, size=q, p=probs) if q > 0 else np.zeros(0, dtype=int)
    idx = _first_occurrences(draws)
    H = c.fused(idx)
    return SelectionResult(
        method=method,
        selected=tuple(int(f) for f in c.ids[idx]),
        H=H,
        measure=Measure(measure),
        value=evaluate_measure(measure, H),
        draws=draws,
    )


def sample_subset(c: CandidateSet, scores: ScoreTable, q: int, seed=None,
                  measure: Measure | str = Measure.RHO_V) -> SelectionResult:
    """Draw ``q`` features with replacement from ``pi``; keep first occurrences.

    Duplicate draws consume budget, so ``|Phi| <= q``.
    """
    t0 = time.perf_counter()
    res = _run_sampler(c, _probabilities(scores.pi), q, np.random.default_rng(seed), measure, "leverage")
    res.elapsed = time.perf_counter() - t0
    return res


def uniform_select(c: CandidateSet, q: int, seed=None, measure: Measure | str = Measure.RHO_V) -> SelectionResult:
    t0 = time.perf_counter()
    res = _run_sampler(c, np.full(c.N, 1.0 / c.N), q, np.random.default_rng(seed), measure, "uniform")
    res.elapsed = time.perf_counter() - t0
    return res


def restart_seed(master_seed, restart: int) -> list[int]:
    """Independent stream per (master seed, restart index).

    ``master_seed`` may itself be a sequence of ints (a named substream).
    """
    parts = list(master_seed) if isinstance(master_seed, (list, tuple)) else [master_seed]
    return [int(p) for p in parts] + [int(restart)]


def best_of_restarts(
    c: CandidateSet,
    q: int,
    measure: Measure | str = Measure.RHO_V,
    p: int = 50,
    seed=0,
    method: str = "leverage",
    workers: int = 1,
) -> SelectionResult:
    """Run ``p`` independent samplers and keep the one with minimal measure.

    The timing covers score computation and every restart.
    """
    if p < 1:
        raise InvalidInputError("p must be >= 1")
    t0 = time.perf_counter()
    if c.N == 0 or q == 0:
        res = _run_sampler(c, np.ones(max(c.N, 1)) / max(c.N, 1), 0, None, measure, method)
        res.restart = 0
        res.restart_values = (res.value,)
        res.elapsed = time.perf_counter() - t0
        return res
    if method == "leverage":
        probs = _probabilities(leverage_scores(c).pi)
    elif method == "uniform":
        probs = np.full(c.N, 1.0 / c.N)
    else:
        raise InvalidInputError(f"unknown sampling method {method!r}")

    def one(k):
        res = _run_sampler(c, probs, q, np.random.default_rng(restart_seed(seed, k)), measure, method)
        res.restart = k
        return res

    if workers > 1 and p > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(one, range(p)))
    else:
        runs = [one(k) for k in range(p)]
    best = min(runs, key=lambda r: (r.value, r.restart))
    best.restart_values = tuple(r.value for r in runs)
    best.elapsed = time.perf_counter() - t0
    return best


def greedy_select(c: CandidateSet, q: int, measure: Measure | str = Measure.RHO_V) -> SelectionResult:
    """Commit, each round, the candidate minimizing the measure; ties -> lowest id."""
    if q < 0:
        raise InvalidInputError("q must be >= 0")
    t0 = time.perf_counter()
    H = c.prior_H.copy()
    remaining = np.arange(c.N)
    chosen = []
    for _ in range(min(q, c.N)):
        vals = batch_measure(measure, H[None, :, :] + c.Hf[remaining])
        # remaining is id-ordered, so argmin's first hit is the lowest id
        j = int(np.argmin(vals))
        k = remaining[j]
        chosen.append(k)
        H = H + c.Hf[k]
        remaining = np.delete(remaining, j)
    H = c.fused(np.array(chosen, dtype=int))
    return SelectionResult(
        method="greedy",
        selected=tuple(int(f) for f in c.ids[chosen]),
        H=H,
        measure=Measure(measure),
        value=evaluate_measure(measure, H),
        elapsed=time.perf_counter() - t0,
    )


# --- analysis variant -------------------------------------------------------


@dataclass(frozen=True)
class RefinedScores:
    """Eigen-term refinement of each ``H_prior / N + Hf``.

    Arrays are padded to ``(N, n)``; dropped terms carry zero weight and zero
    probability.
    """

    vectors: np.ndarray     # (N, n, n): vectors[f, i] is the i-th unit vector
    weights: np.ndarray     # (N, n)
    r: np.ndarray           # (N, n) refined leverage scores
    pi: np.ndarray          # (N, n) = r / n
    cond: np.ndarray        # (N, n) conditional p_f(i)

    def term(self, f: int, i: int) -> nx.RankOneTerm:
        return nx.RankOneTerm(self.vectors[f, i], float(self.weights[f, i]))


def refine_scores(c: CandidateSet, H_max=None) -> RefinedScores:
    H_max = maximal_information(c) if H_max is None else H_max
    G = nx.spd_inv(H_max)
    N, n = c.N, c.n
    vectors = np.zeros((N, n, n))
    weights = np.zeros((N, n))
    for f in range(N):
        terms = nx.rank_one_split(c.prior_H / N + c.Hf[f])
        for i, t in enumerate(terms):
            vectors[f, i] = t.vector
            weights[f, i] = t.weight
    r = weights * np.einsum("fia,ab,fib->fi", vectors, G, vectors)
    r = np.maximum(r, 0.0)
    pi = r / n
    tot = pi.sum(axis=1, keepdims=True)
    cond = np.divide(pi, tot, out=np.zeros_like(pi), where=tot > 0)
    return RefinedScores(vectors=vectors, weights=weights, r=r, pi=pi, cond=cond)


@dataclass
class AnalysisRun:
    result: SelectionResult
    weights: dict               # (feature index, term index) -> w
    pairs: tuple                # Phi-hat in first-sampled order
    chi: float | None
    H_w: np.ndarray


def _split_seed(seed):
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.random.default_rng(ss), np.random.default_rng(ss.spawn(1)[0])


def sample_subset_analysis(
    c: CandidateSet,
    scores: ScoreTable,
    q: int,
    seed=None,
    refined: RefinedScores | None = None,
    measure: Measure | str = Measure.RHO_V,
    compute_chi: bool = True,
) -> AnalysisRun:
    """Sampler with the weight bookkeeping ``w(f, i) += 1 / (q pi_fi)``.

    Feature draws use the same stream as :func:`sample_subset` for the same
    ``seed``, so ``Phi`` and ``H`` coincide; term indices use a spawned child
    stream.
    """
    if refined is None:
        refined = refine_scores(c)
    if isinstance(seed, np.random.SeedSequence):
        feat_rng, term_rng = _split_seed(seed)
    else:
        feat_rng, term_rng = _split_seed(np.random.SeedSequence(seed))
    res = _run_sampler(c, _probabilities(scores.pi), q, feat_rng, measure, "leverage")
    draws = res.draws
    weights: dict = {}
    pairs = []
    if q > 0:
        u = term_rng.random(q)
        cum = np.cumsum(refined.cond[draws], axis=1)
        terms = np.array([
            min(int(np.searchsorted(cum[k], u[k] * cum[k, -1], side="right")), c.n - 1)
            for k in range(q)
        ])
        for f, i in zip(draws.tolist(), terms.tolist()):
            key = (f, i)
            if key not in weights:
                weights[key] = 0.0
                pairs.append(key)
            weights[key] += 1.0 / (q * refined.pi[f, i])
    H_w = np.zeros((c.n, c.n))
    for (f, i), w in weights.items():
        v = refined.vectors[f, i]
        H_w += w * refined.weights[f, i] * np.outer(v, v)
    chi = None
    if compute_chi and weights:
        chi = nx.chi_infimum([(w, refined.term(f, i)) for (f, i), w in weights.items()])
    return AnalysisRun(result=res, weights=weights, pairs=tuple(pairs), chi=chi, H_w=H_w)


# --- certificates ------------------------------------------------------------


@dataclass(frozen=True)
class BoundCertificate:
    """Spectral and measure-loss checks for one selection.

    ``printed_*`` evaluate the loss inequalities with the sign convention
    ``(rho(Theta) - rho(Phi)) / rho(Phi)``; ``loss_*`` evaluate the forms
    ``rho(Phi) <= c rho(Theta)`` that the spectral bound directly implies.
    """

    eps: float
    chi_bar: float
    chi_bar_stderr: float | None
    factor: float               # c = 4 chi_bar / (1 - eps)
    n: int
    q: int | None
    q_reference: float          # n log n / eps^2
    loewner: bool
    printed_v: bool
    printed_e: bool
    printed_lambda: bool
    loss_v: bool
    loss_e: bool
    loss_lambda: bool
    rho: dict = field(default_factory=dict)

    @property
    def measures_pass(self) -> bool:
        return all((self.printed_v, self.printed_e, self.printed_lambda,
                    self.loss_v, self.loss_e, self.loss_lambda))


def certify_bounds(
    c: CandidateSet,
    result: SelectionResult,
    eps: float = 0.5,
    chi_bar: float = 1.0,
    chi_bar_stderr: float | None = None,
    q: int | None = None,
    H_max=None,
    numerics_tol: float = 1e-9,
) -> BoundCertificate:
    if not 0 < eps < 1:
        raise InvalidInputError("eps must lie in (0, 1)")
    if not chi_bar > 0:
        raise InvalidInputError("chi_bar must be positive")
    H_max = maximal_information(c) if H_max is None else H_max
    H_phi = result.H
    n = c.n
    factor = 4.0 * chi_bar / (1.0 - eps)
    loewner = nx.loewner_geq(H_phi, H_max / factor)

    rho = {}
    for m in Measure:
        rho[m.value] = (evaluate_measure(m, H_max), evaluate_measure(m, H_phi))
    v_th, v_ph = rho["rho_v"]
    e_th, e_ph = rho["rho_e"]
    l_th, l_ph = rho["rho_lambda"]
    slack = numerics_tol

    def le(a, b):
        return a <= b + slack * max(1.0, abs(a), abs(b))

    return BoundCertificate(
        eps=eps, chi_bar=chi_bar, chi_bar_stderr=chi_bar_stderr, factor=factor, n=n, q=q,
        q_reference=n * math.log(n) / eps ** 2,
        loewner=loewner,
        printed_v=le((v_th - v_ph) / v_ph, factor - 1.0),
        printed_e=le(e_th - e_ph, n * math.log(factor)),
        printed_lambda=le((l_th - l_ph) / l_ph, factor - 1.0),
        loss_v=le((v_ph - v_th) / v_th, factor - 1.0),
        loss_e=le(e_ph - e_th, n * math.log(factor)),
        loss_lambda=le((l_ph - l_th) / l_th, factor - 1.0),
        rho=rho,
    )


def estimate_chi_bar(
    c: CandidateSet, q: int, seeds: Sequence[int], scores=None, refined=None,
) -> tuple[float, float, list[AnalysisRun]]:
    """Mean and standard error of ``chi`` over analysis-mode runs."""
    scores = leverage_scores(c) if scores is None else scores
    refined = refine_scores(c) if refined is None else refined
    runs = [sample_subset_analysis(c, scores, q, s, refined=refined) for s in seeds]
    chis = np.array([r.chi for r in runs if r.chi is not None])
    if chis.size == 0:
        raise InvalidInputError("no analysis run produced a chi value (q = 0?)")
    stderr = float(chis.std(ddof=1) / math.sqrt(chis.size)) if chis.size > 1 else float("nan")
    return float(chis.mean()), stderr, runs
