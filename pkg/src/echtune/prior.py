"""Prior mean for the GP: expected time-to-instability tabulated by
Monte-Carlo dynamics-model rollouts over an ECH parameter grid, binned by the
achieved average pressure.

Queries project to the Euclidean-nearest grid node (axes normalized to [0,1])
and the nearest pressure bin; the same projection is applied to measured
inputs before they enter the GP dataset.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import EmptyDataset
from .profiles import EchParams
from .records import ShotSummary
from .rpnn import RpnnParams, rollout_batch

_log = logging.getLogger(__name__)

DEFAULT_RESOLUTION = 10
DEFAULT_EPSILON = 0.04
DEFAULT_ROLLOUTS_PER_NODE = 32
_CHUNK_ROLLOUTS = 1024


@dataclass(frozen=True)
class EchGrid:
    """Node lattice over (center, width, amplitude), bounds from observed data."""

    mu_nodes: tuple[float, ...]
    sigma_nodes: tuple[float, ...]
    w_nodes: tuple[float, ...]

    @property
    def n_nodes(self) -> int:
        return len(self.mu_nodes) * len(self.sigma_nodes) * len(self.w_nodes)

    def node_array(self) -> np.ndarray:
        """(n_nodes, 3) rows in (mu, sigma, w) order, w varying fastest."""
        return _node_array(self)

    def node_params(self, index: int) -> EchParams:
        row = self.node_array()[index]
        return EchParams(mu=float(row[0]), sigma=float(row[1]), w=float(row[2]))

    def bounds(self) -> np.ndarray:
        return np.array([
            [min(self.mu_nodes), max(self.mu_nodes)],
            [min(self.sigma_nodes), max(self.sigma_nodes)],
            [min(self.w_nodes), max(self.w_nodes)],
        ])

    def nearest_node(self, mu: float, sigma: float, w: float) -> int:
        """Exhaustive nearest node under [0,1]-normalized Euclidean distance;
        out-of-range queries land on boundary nodes."""
        normalized, lo, span = _normalized_nodes(self)
        q = (np.array([mu, sigma, w]) - lo) / span
        d2 = ((normalized - q) ** 2).sum(axis=1)
        return int(np.argmin(d2))


@lru_cache(maxsize=8)
def _node_array(grid: EchGrid) -> np.ndarray:
    mu, sg, w = np.meshgrid(grid.mu_nodes, grid.sigma_nodes, grid.w_nodes, indexing="ij")
    return np.stack([mu.ravel(), sg.ravel(), w.ravel()], axis=1)


@lru_cache(maxsize=8)
def _normalized_nodes(grid: EchGrid):
    b = grid.bounds()
    lo = b[:, 0]
    span = np.where(b[:, 1] > b[:, 0], b[:, 1] - b[:, 0], 1.0)
    return (_node_array(grid) - lo) / span, lo, span


def _axis_nodes(lo: float, hi: float, resolution: int, name: str) -> tuple[float, ...]:
    if hi <= lo:
        _log.warning("degenerate %s axis (single value %g); collapsing to one node", name, lo)
        return (float(lo),)
    return tuple(float(v) for v in np.linspace(lo, hi, resolution))


def build_grid(rows: list[ShotSummary], resolution: int = DEFAULT_RESOLUTION) -> EchGrid:
    """Axis bounds from the historically observed parameter extremes."""
    if not rows:
        raise EmptyDataset("cannot build a grid from an empty dataset")
    mus = [r.ech.mu for r in rows]
    sigmas = [r.ech.sigma for r in rows]
    ws = [r.ech.w for r in rows]
    return EchGrid(
        mu_nodes=_axis_nodes(min(mus), max(mus), resolution, "center"),
        sigma_nodes=_axis_nodes(min(sigmas), max(sigmas), resolution, "width"),
        w_nodes=_axis_nodes(min(ws), max(ws), resolution, "amplitude"),
    )


# ---------------------------------------------------------------------------
# rollout machinery


def make_schedule_pool(sequences, horizon: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """(initial state, action schedule) pairs from historical shot sequences.

    Schedules shorter than the horizon repeat their final action (heating and
    feedforward commands are held in practice anyway).
    """
    pool = []
    for states, actions, *_ in sequences:
        states = np.asarray(states, dtype=float)
        actions = np.asarray(actions, dtype=float)
        if states.shape[0] < 2:
            continue
        if actions.shape[0] >= horizon:
            sched = actions[:horizon].copy()
        else:
            pad = np.repeat(actions[-1:], horizon - actions.shape[0], axis=0)
            sched = np.concatenate([actions, pad])
        pool.append((states[0].copy(), sched))
    return pool


def _first_trip_times(probs: np.ndarray, step_seconds: float, censor_seconds: float) -> np.ndarray:
    """Per-rollout first step with probability >= 0.5, censored at the horizon."""
    tripped = probs >= 0.5
    any_trip = tripped.any(axis=1)
    first = np.argmax(tripped, axis=1)
    t = (first + 1) * step_seconds
    return np.where(any_trip, t, censor_seconds)


def estimate_time_to_tm(
    rpnn: RpnnParams,
    classifier,
    initial_state,
    action_schedule,
    a_q: EchParams,
    m_rollouts: int,
    seed: int,
    horizon: int,
    step_seconds: float,
    censor_seconds: float,
    beta_index: int = 0,
    ech_slice: slice = slice(-3, None),
) -> tuple[float, float]:
    """Mean predicted time-to-instability and mean achieved pressure at one
    ECH setting, over seeded stochastic rollouts of a single schedule."""
    if m_rollouts < 1:
        raise ValueError("need at least one rollout")
    schedule = np.asarray(action_schedule, dtype=float)[:horizon].copy()
    schedule[:, ech_slice] = a_q.as_array()
    s0s = np.repeat(np.asarray(initial_state, dtype=float)[None, :], m_rollouts, axis=0)
    schedules = np.repeat(schedule[None, :, :], m_rollouts, axis=0)
    rngs = [np.random.default_rng(np.random.SeedSequence((seed, m))) for m in range(m_rollouts)]
    states, probs = rollout_batch(rpnn, classifier, s0s, schedules, horizon, rngs)
    times = _first_trip_times(probs, step_seconds, censor_seconds)
    betas = states[:, 1:, beta_index].mean(axis=1)
    return float(times.mean()), float(betas.mean())


@dataclass
class PriorTable:
    """t_hat on (grid node x pressure bin) cells, with the per-rollout audit log."""

    grid: EchGrid
    bin_lo: float
    epsilon: float
    n_bins: int
    values: np.ndarray    # (n_nodes, n_bins) seconds
    counts: np.ndarray    # (n_nodes, n_bins) rollouts landing in the cell
    record_node: np.ndarray
    record_bin: np.ndarray
    record_t: np.ndarray
    record_beta: np.ndarray
    fills: list[tuple[int, int, str]] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def bin_width(self) -> float:
        return 2.0 * self.epsilon

    def bin_of(self, beta: float) -> int:
        raw = int(np.floor((beta - self.bin_lo) / self.bin_width))
        return int(np.clip(raw, 0, self.n_bins - 1))

    def bin_center(self, index: int) -> float:
        return self.bin_lo + (index + 0.5) * self.bin_width


def build_prior_table(
    rpnn: RpnnParams,
    classifier,
    schedule_pool: list[tuple[np.ndarray, np.ndarray]],
    grid: EchGrid,
    epsilon: float = DEFAULT_EPSILON,
    m_rollouts: int = DEFAULT_ROLLOUTS_PER_NODE,
    seed: int = 0,
    horizon: int = 250,
    step_seconds: float = 0.02,
    censor_seconds: float = 10.0,
    beta_index: int = 0,
    ech_slice: slice = slice(-3, None),
    beta_clip: tuple[float, float] = (0.0, 10.0),
) -> PriorTable:
    """Roll every grid node against sampled historical schedules and average
    the per-rollout times within (node, pressure-bin) cells.

    Rollout pressures are clipped to a physical range before binning so a
    diverging rollout cannot explode the bin count. Empty cells fall back to
    the bin-marginal mean, then the global mean; every fill is logged on the
    table.
    """
    if not schedule_pool:
        raise EmptyDataset("schedule pool is empty")
    nodes = grid.node_array()
    n_nodes = nodes.shape[0]

    jobs = []  # (node_idx, rollout_idx, pool_idx)
    for node_idx in range(n_nodes):
        pick = np.random.default_rng(np.random.SeedSequence((seed, node_idx)))
        pool_idx = pick.integers(0, len(schedule_pool), size=m_rollouts)
        for m in range(m_rollouts):
            jobs.append((node_idx, m, int(pool_idx[m])))

    rec_node = np.empty(len(jobs), dtype=np.int64)
    rec_t = np.empty(len(jobs))
    rec_beta = np.empty(len(jobs))
    horizon_eff = horizon

    for lo in range(0, len(jobs), _CHUNK_ROLLOUTS):
        chunk = jobs[lo: lo + _CHUNK_ROLLOUTS]
        s0s = np.stack([schedule_pool[p][0] for _, _, p in chunk])
        schedules = np.stack([schedule_pool[p][1][:horizon_eff] for _, _, p in chunk])
        for row, (node_idx, _, _) in enumerate(chunk):
            schedules[row, :, ech_slice] = nodes[node_idx]
        rngs = [np.random.default_rng(np.random.SeedSequence((seed, n, m + 1))) for n, m, _ in chunk]
        states, probs = rollout_batch(rpnn, classifier, s0s, schedules, horizon_eff, rngs)
        times = _first_trip_times(probs, step_seconds, censor_seconds)
        betas = states[:, 1:, beta_index].mean(axis=1)
        sl = slice(lo, lo + len(chunk))
        rec_node[sl] = [n for n, _, _ in chunk]
        rec_t[sl] = times
        rec_beta[sl] = betas

    rec_beta = np.clip(rec_beta, beta_clip[0], beta_clip[1])
    bin_lo = float(rec_beta.min())
    width = 2.0 * epsilon
    n_bins = max(1, int(np.ceil((float(rec_beta.max()) - bin_lo) / width + 1e-12)))
    rec_bin = np.clip(((rec_beta - bin_lo) / width).astype(int), 0, n_bins - 1)

    values = np.full((n_nodes, n_bins), np.nan)
    counts = np.zeros((n_nodes, n_bins), dtype=np.int64)
    flat = rec_node * n_bins + rec_bin
    sums = np.bincount(flat, weights=rec_t, minlength=n_nodes * n_bins).reshape(n_nodes, n_bins)
    counts = np.bincount(flat, minlength=n_nodes * n_bins).reshape(n_nodes, n_bins)
    with np.errstate(invalid="ignore"):
        values = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)

    fills: list[tuple[int, int, str]] = []
    bin_sums = np.bincount(rec_bin, weights=rec_t, minlength=n_bins)
    bin_counts = np.bincount(rec_bin, minlength=n_bins)
    global_mean = float(rec_t.mean())
    for b in range(n_bins):
        empty = np.isnan(values[:, b])
        if not empty.any():
            continue
        fill_value = bin_sums[b] / bin_counts[b] if bin_counts[b] > 0 else global_mean
        kind = "bin-marginal" if bin_counts[b] > 0 else "global"
        for node_idx in np.nonzero(empty)[0]:
            fills.append((int(node_idx), b, kind))
        values[empty, b] = fill_value

    return PriorTable(
        grid=grid, bin_lo=bin_lo, epsilon=epsilon, n_bins=n_bins,
        values=values, counts=counts,
        record_node=rec_node, record_bin=rec_bin, record_t=rec_t, record_beta=rec_beta,
        fills=fills,
        meta={
            "m_rollouts": m_rollouts, "horizon": horizon, "seed": seed,
            "step_seconds": step_seconds, "censor_seconds": censor_seconds,
        },
    )


def query_prior(table: PriorTable, beta_n_bar: float, mu: float, sigma: float, w: float) -> float:
    """Cell value at the nearest grid node and nearest pressure bin."""
    node = table.grid.nearest_node(mu, sigma, w)
    return float(table.values[node, table.bin_of(beta_n_bar)])


def project_to_grid(grid: EchGrid, mu: float, sigma: float, w: float) -> EchParams:
    return grid.node_params(grid.nearest_node(mu, sigma, w))


@dataclass(frozen=True)
class TablePrior:
    """Adapter exposing the table as a GP prior-mean function over raw inputs."""

    table: PriorTable

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return query_prior(self.table, x[0], x[1], x[2], x[3])


# ---------------------------------------------------------------------------
# serialization: flat cell table + manifest


def save_prior_table(table: PriorTable, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    n_sigma = len(table.grid.sigma_nodes)
    n_w = len(table.grid.w_nodes)
    with open(directory / "cells.csv", "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["i_mu", "i_sigma", "i_w", "bin_index", "t_hat_seconds", "sample_count"])
        for node in range(table.grid.n_nodes):
            i_mu, rem = divmod(node, n_sigma * n_w)
            i_sigma, i_w = divmod(rem, n_w)
            for b in range(table.n_bins):
                wr.writerow([i_mu, i_sigma, i_w, b, repr(float(table.values[node, b])),
                             int(table.counts[node, b])])
    manifest = {
        "mu_nodes": list(table.grid.mu_nodes),
        "sigma_nodes": list(table.grid.sigma_nodes),
        "w_nodes": list(table.grid.w_nodes),
        "bin_lo": table.bin_lo,
        "epsilon": table.epsilon,
        "n_bins": table.n_bins,
        "fills": [list(f) for f in table.fills],
        "meta": table.meta,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1))
    np.savez(
        directory / "records.npz",
        node=table.record_node, bin=table.record_bin,
        t=table.record_t, beta=table.record_beta,
    )
    return directory


def load_prior_table(directory: str | Path) -> PriorTable:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    grid = EchGrid(
        mu_nodes=tuple(manifest["mu_nodes"]),
        sigma_nodes=tuple(manifest["sigma_nodes"]),
        w_nodes=tuple(manifest["w_nodes"]),
    )
    n_bins = manifest["n_bins"]
    values = np.full((grid.n_nodes, n_bins), np.nan)
    counts = np.zeros((grid.n_nodes, n_bins), dtype=np.int64)
    n_sigma = len(grid.sigma_nodes)
    n_w = len(grid.w_nodes)
    with open(directory / "cells.csv", newline="") as f:
        for rec in csv.DictReader(f):
            node = (int(rec["i_mu"]) * n_sigma + int(rec["i_sigma"])) * n_w + int(rec["i_w"])
            b = int(rec["bin_index"])
            values[node, b] = float(rec["t_hat_seconds"])
            counts[node, b] = int(rec["sample_count"])
    records = np.load(directory / "records.npz")
    return PriorTable(
        grid=grid, bin_lo=manifest["bin_lo"], epsilon=manifest["epsilon"], n_bins=n_bins,
        values=values, counts=counts,
        record_node=records["node"], record_bin=records["bin"],
        record_t=records["t"], record_beta=records["beta"],
        fills=[tuple(f) for f in manifest["fills"]],
        meta=manifest["meta"],
    )
