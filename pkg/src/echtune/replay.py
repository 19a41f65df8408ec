"""Offline replay benchmark over a historical shot table.

Each step samples a target-pressure context, restricts the candidates to
historical rows near that context, lets the configured method pick one, and
replays that row's measured outcome as the new observation. Methods differ in
their prior mean and in whether the GP updates at all:

  prior_gp       GP with the rollout-table prior mean (this package's method)
  prior_gp_time  same, with the kernel time-augmented over campaign index
  prior_only     argmax of the rollout prior; never updates
  zero_gp        vanilla GP, zero prior mean
  mean_gp        vanilla GP, constant prior equal to the dataset mean outcome
"""

from __future__ import annotations

import csv
import statistics
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .bo import ExpectedImprovement, Proposal, ThompsonSample, Ucb, observe, propose, replay_candidates
from .errors import EmptyDataset, RangeError
from .gp import ConstantPrior, GpDataset, InputScaler, Kernel, fit, zero_prior
from .prior import PriorTable, TablePrior, query_prior
from .profiles import EchParams
from .records import ShotSummary

METHODS = ("prior_gp", "prior_gp_time", "prior_only", "zero_gp", "mean_gp")
GP_METHODS = ("prior_gp", "prior_gp_time", "zero_gp", "mean_gp")

DEFAULT_TAU_MAX = 10.0


@dataclass(frozen=True)
class ReplayConfig:
    steps: int = 200
    epsilon: float = 0.04
    tau_max: float = DEFAULT_TAU_MAX
    method: str = "prior_gp"
    kernel: Kernel = field(default_factory=Kernel)
    acquisition: str = "ucb"        # ucb | ei | thompson
    alpha: float = 2.0
    noise_variance: float = 0.25
    context_range: tuple[float, float] | None = None   # None -> dataset min/max
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("need at least one replay step")
        if self.epsilon <= 0:
            raise ValueError("context interval half-width must be positive")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.acquisition not in ("ucb", "ei", "thompson"):
            raise ValueError(f"unknown acquisition {self.acquisition!r}")


@dataclass(frozen=True)
class ReplayStep:
    step: int
    context: float
    ech: EchParams
    observed_t: float
    instantaneous_regret: float
    cumulative_regret: float
    row_index: int
    posterior_mean: float
    posterior_sigma: float


@dataclass
class RegretCurve:
    method: str
    kernel_label: str
    seed: int
    steps: list[ReplayStep]
    observations: list[tuple[np.ndarray, float, float]]   # (input row, outcome, campaign)

    @property
    def final_cumulative_regret(self) -> float:
        return self.steps[-1].cumulative_regret if self.steps else 0.0

    def distinct_query_count(self) -> int:
        return len({(s.ech.mu, s.ech.sigma, s.ech.w) for s in self.steps})


def cumulative_regret(outcomes, tau_max: float = DEFAULT_TAU_MAX) -> np.ndarray:
    """Partial sums of (tau_max - observed time)."""
    t = np.asarray(outcomes, dtype=float)
    if np.any(t <= 0.0) or np.any(t > tau_max + 1e-12):
        raise RangeError(f"outcomes must lie in (0, {tau_max}]")
    return np.cumsum(tau_max - t)


def _prior_for(method: str, table: PriorTable | None, rows: list[ShotSummary]):
    if method in ("prior_gp", "prior_gp_time", "prior_only"):
        if table is None:
            raise ValueError(f"method {method!r} needs a prior table")
        return TablePrior(table)
    if method == "zero_gp":
        return zero_prior
    if method == "mean_gp":
        return ConstantPrior(float(np.mean([r.t_tm_seconds for r in rows])))
    raise ValueError(method)


def _kernel_for(method: str, base: Kernel) -> Kernel:
    if method == "prior_gp_time":
        if base.time_lengthscale is None:
            return replace(base, time_lengthscale=2.0)
        return base
    return replace(base, time_lengthscale=None) if base.time_lengthscale is not None else base


def run_replay(
    rows: list[ShotSummary],
    cfg: ReplayConfig,
    prior_table: PriorTable | None,
    scaler: InputScaler,
    grid=None,
) -> RegretCurve:
    """Replay one method/kernel/seed cell; deterministic under the seed.

    Replayed rows are sampled with replacement (runs may outlast the table),
    and when several rows share the chosen ECH value within a context subset
    the observed outcome is drawn uniformly among them.
    """
    if not rows:
        raise EmptyDataset("cannot replay an empty dataset")
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 7)))
    betas = [r.beta_n_bar for r in rows]
    lo, hi = cfg.context_range if cfg.context_range else (min(betas), max(betas))
    prior = _prior_for(cfg.method, prior_table, rows)
    kernel = _kernel_for(cfg.method, cfg.kernel)
    query_campaign = float(max(r.campaign for r in rows))

    dataset = GpDataset(x=np.zeros((0, 4)), y=np.zeros(0), campaign=np.zeros(0),
                        noise_variance=cfg.noise_variance)
    posterior = fit(dataset, kernel, prior, scaler, query_campaign) if cfg.method in GP_METHODS else None

    steps: list[ReplayStep] = []
    observations: list[tuple[np.ndarray, float, float]] = []
    cum = 0.0
    for step_idx in range(cfg.steps):
        context = float(rng.uniform(lo, hi))
        idx, _ = replay_candidates(rows, context, cfg.epsilon)
        candidates = [rows[i].ech for i in idx]

        if cfg.method == "prior_only":
            scores = np.array([query_prior(prior_table, context, c.mu, c.sigma, c.w) for c in candidates])
            j = int(np.argmax(scores))
            pmean, psigma = float(scores[j]), 0.0
            chosen = candidates[j]
        else:
            proposal: Proposal = propose(posterior, context, candidates, _acq(cfg, step_idx, observations, prior_table, context))
            j = proposal.candidate_index
            chosen = proposal.ech
            pmean, psigma = proposal.posterior_mean, proposal.posterior_sigma

        sharing = [i for i in idx if rows[i].ech == chosen]
        pick = int(sharing[rng.integers(0, len(sharing))])
        row = rows[pick]
        inst = cfg.tau_max - row.t_tm_seconds
        cum += inst
        steps.append(ReplayStep(
            step=step_idx, context=context, ech=chosen, observed_t=row.t_tm_seconds,
            instantaneous_regret=inst, cumulative_regret=cum, row_index=pick,
            posterior_mean=pmean, posterior_sigma=psigma,
        ))

        if cfg.method in GP_METHODS:
            dataset = observe(dataset, row.beta_n_bar, row.ech, row.t_tm_seconds,
                              campaign=float(row.campaign), grid=grid)
            observations.append((dataset.x[-1].copy(), row.t_tm_seconds, float(row.campaign)))
            posterior = fit(dataset, kernel, prior, scaler, query_campaign)

    return RegretCurve(method=cfg.method, kernel_label=cfg.kernel.label(), seed=cfg.seed,
                       steps=steps, observations=observations)


def _acq(cfg: ReplayConfig, step_idx: int, observations, prior_table, context):
    if cfg.acquisition == "ucb":
        return Ucb(alpha=cfg.alpha)
    if cfg.acquisition == "thompson":
        return ThompsonSample(seed=int(np.random.SeedSequence((cfg.seed, step_idx, 11)).generate_state(1)[0]))
    # expected improvement: best observed outcome within the context's pressure
    # bin so far, falling back to the best outcome anywhere, then zero
    best = 0.0
    if observations:
        ys = [y for _, y, _ in observations]
        best = max(ys)
        if prior_table is not None:
            b = prior_table.bin_of(context)
            in_bin = [y for (x, y, _) in observations if prior_table.bin_of(x[0]) == b]
            if in_bin:
                best = max(in_bin)
    return ExpectedImprovement(best=best)


# ---------------------------------------------------------------------------
# suites


@dataclass
class SuiteCell:
    method: str
    kernel_label: str
    curves: list[RegretCurve]

    def final_regrets(self) -> list[float]:
        return [c.final_cumulative_regret for c in self.curves]

    def median_final_regret(self) -> float:
        return float(statistics.median(self.final_regrets()))

    def median_distinct_queries(self) -> float:
        return float(statistics.median([c.distinct_query_count() for c in self.curves]))


def run_baseline_suite(
    rows: list[ShotSummary],
    kernels: list[Kernel],
    methods: list[str],
    seeds: list[int],
    prior_table: PriorTable | None,
    scaler: InputScaler,
    grid=None,
    base_cfg: ReplayConfig | None = None,
) -> list[SuiteCell]:
    """Full method x kernel cross-product, each cell run over all seeds."""
    base = base_cfg or ReplayConfig()
    cells = []
    for kernel in kernels:
        for method in methods:
            curves = [
                run_replay(rows, replace(base, method=method, kernel=kernel, seed=seed),
                           prior_table, scaler, grid)
                for seed in seeds
            ]
            cells.append(SuiteCell(method=method, kernel_label=kernel.label(), curves=curves))
    return cells


def compare_acquisitions(
    rows: list[ShotSummary],
    kernels: list[Kernel],
    seeds: list[int],
    prior_table: PriorTable,
    scaler: InputScaler,
    grid=None,
    steps: int = 500,
    base_cfg: ReplayConfig | None = None,
) -> list[dict]:
    """UCB vs Thompson vs EI under the prior-mean GP, per kernel.

    Returns one record per (acquisition, kernel): mean and standard deviation
    of the final cumulative regret over seeds.
    """
    base = base_cfg or ReplayConfig()
    out = []
    for acq in ("ucb", "thompson", "ei"):
        for kernel in kernels:
            finals = []
            for seed in seeds:
                cfg = replace(base, method="prior_gp", kernel=kernel, seed=seed,
                              acquisition=acq, steps=steps)
                finals.append(run_replay(rows, cfg, prior_table, scaler, grid).final_cumulative_regret)
            out.append({
                "acquisition": acq,
                "kernel": kernel.label(),
                "mean_final_regret": float(np.mean(finals)),
                "std_final_regret": float(np.std(finals)),
                "n_seeds": len(seeds),
            })
    return out


# ---------------------------------------------------------------------------
# CSV outputs


def write_curve(curve: RegretCurve, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["step", "context", "mu_q", "sigma_q", "w_q", "t_tm", "cum_regret"])
        for s in curve.steps:
            wr.writerow([s.step, repr(s.context), repr(s.ech.mu), repr(s.ech.sigma),
                         repr(s.ech.w), repr(s.observed_t), repr(s.cumulative_regret)])
    return path


def write_suite_summary(cells: list[SuiteCell], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["method", "kernel", "median_final_regret", "q25", "q75",
                     "mean_final_regret", "std_final_regret", "median_distinct_queries", "n_seeds"])
        for cell in cells:
            finals = np.array(cell.final_regrets())
            wr.writerow([
                cell.method, cell.kernel_label,
                repr(float(np.median(finals))),
                repr(float(np.percentile(finals, 25))), repr(float(np.percentile(finals, 75))),
                repr(float(finals.mean())), repr(float(finals.std())),
                repr(cell.median_distinct_queries()), len(finals),
            ])
    return path


def write_query_scatter(cells: list[SuiteCell], path: str | Path) -> Path:
    """Per-method queried ECH values per step, for exploration plots."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["method", "kernel", "seed", "step", "mu_q", "sigma_q", "w_q"])
        for cell in cells:
            for curve in cell.curves:
                for s in curve.steps:
                    wr.writerow([cell.method, cell.kernel_label, curve.seed, s.step,
                                 repr(s.ech.mu), repr(s.ech.sigma), repr(s.ech.w)])
    return path
