"""Contextual acquisition over ECH candidates given a target-pressure context.

The decision space is discrete (historical rows when replaying, the full
prior grid when live), so acquisition maximization is an exact scan. Measured
inputs — not commanded ones — update the dataset, projected to the prior grid
first.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import EmptyCandidates
from .gp import GpDataset, GpPosterior, add_observation
from .prior import EchGrid, project_to_grid
from .profiles import EchParams
from .records import ShotSummary

_log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Ucb:
    """mean + alpha * sigma; alpha trades exploration against exploitation."""

    alpha: float = 2.0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("exploration weight must be nonnegative")


@dataclass(frozen=True)
class ExpectedImprovement:
    """Improvement over the best observed outcome so far."""

    best: float


@dataclass(frozen=True)
class ThompsonSample:
    """Argmax of one joint posterior draw over the candidates."""

    seed: int = 0


Acquisition = Ucb | ExpectedImprovement | ThompsonSample


@dataclass(frozen=True)
class Proposal:
    ech: EchParams
    context_beta: float
    acquisition_value: float
    posterior_mean: float
    posterior_sigma: float
    candidate_index: int
    candidate_set_id: str = ""


def _candidate_inputs(context_beta: float, candidates: list[EchParams]) -> np.ndarray:
    return np.array([[context_beta, c.mu, c.sigma, c.w] for c in candidates])


def acquisition_scores(posterior: GpPosterior, context_beta: float,
                       candidates: list[EchParams], acq: Acquisition) -> np.ndarray:
    x = _candidate_inputs(context_beta, candidates)
    mean, var = posterior.predict_many(x)
    sigma = np.sqrt(var)
    if isinstance(acq, Ucb):
        return mean + acq.alpha * sigma
    if isinstance(acq, ExpectedImprovement):
        improve = mean - acq.best
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(sigma > 0, improve / np.where(sigma > 0, sigma, 1.0), 0.0)
            ei = np.where(sigma > 0,
                          improve * norm.cdf(z) + sigma * norm.pdf(z),
                          np.maximum(improve, 0.0))
        return ei
    if isinstance(acq, ThompsonSample):
        rng = np.random.default_rng(acq.seed)
        return posterior.sample_many(x, rng)
    raise TypeError(f"unknown acquisition {acq!r}")


def propose(posterior: GpPosterior, context_beta: float, candidates: list[EchParams],
            acq: Acquisition, candidate_set_id: str = "") -> Proposal:
    """Exact argmax of the acquisition over the candidate set.

    Ties break to the lowest candidate index, so proposals are pure functions
    of (posterior, candidates) — and of the seed for Thompson sampling.
    """
    if not candidates:
        raise EmptyCandidates("no candidates to propose from")
    scores = acquisition_scores(posterior, context_beta, candidates, acq)
    j = int(np.argmax(scores))
    mean, var = posterior.predict_many(_candidate_inputs(context_beta, [candidates[j]]))
    return Proposal(
        ech=candidates[j],
        context_beta=context_beta,
        acquisition_value=float(scores[j]),
        posterior_mean=float(mean[0]),
        posterior_sigma=float(np.sqrt(var[0])),
        candidate_index=j,
        candidate_set_id=candidate_set_id,
    )


def observe(dataset: GpDataset, measured_beta: float, measured_ech: EchParams,
            measured_t: float, campaign: float = 0.0, grid: EchGrid | None = None) -> GpDataset:
    """Append the *measured* row, projected onto the prior grid when given."""
    ech = measured_ech
    if grid is not None:
        ech = project_to_grid(grid, measured_ech.mu, measured_ech.sigma, measured_ech.w)
    row = np.array([measured_beta, ech.mu, ech.sigma, ech.w])
    return add_observation(dataset, row, measured_t, campaign)


def replay_candidates(rows: list[ShotSummary], context_beta: float,
                      epsilon: float) -> tuple[list[int], float]:
    """Indices of rows whose pressure lies within the context interval.

    An empty interval widens by doubling epsilon until at least one row
    qualifies (logged); the dataset itself must be nonempty.
    """
    if not rows:
        raise EmptyCandidates("empty historical dataset")
    eps = epsilon
    while True:
        idx = [i for i, r in enumerate(rows) if abs(r.beta_n_bar - context_beta) <= eps]
        if idx:
            if eps != epsilon:
                _log.info("widened context interval to %.3g to find candidates", eps)
            return idx, eps
        eps *= 2.0


def live_candidates(grid: EchGrid) -> list[EchParams]:
    nodes = grid.node_array()
    return [EchParams(mu=float(m), sigma=float(s), w=float(w)) for m, s, w in nodes]


def candidate_set_for_context(grid: EchGrid | None, rows: list[ShotSummary] | None,
                              context_beta: float, epsilon: float,
                              mode: str = "replay") -> list[EchParams]:
    """Replay mode: ECH values of in-interval historical rows. Live mode: the
    full grid."""
    if mode == "replay":
        if rows is None:
            raise EmptyCandidates("replay mode needs historical rows")
        idx, _ = replay_candidates(rows, context_beta, epsilon)
        return [rows[i].ech for i in idx]
    if mode == "live":
        if grid is None:
            raise EmptyCandidates("live mode needs a grid")
        return live_candidates(grid)
    raise ValueError(f"unknown candidate mode {mode!r}")
