"""Trajectory preprocessing: flat-top extraction, per-channel PCA, ECH curve
fitting, and reduction to shot-level regression rows and step-level model
features.

Only flat-top data feeds the models; profile channels are compressed to the
few principal components explaining the variance target, and the heating
profile is summarized by its Gaussian parameters instead.
"""

from __future__ import annotations

import bisect
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateData, DegenerateProfile, EmptyDatasetWarning, NoFlatTop, SchemaError
from .profiles import EchParams, fit_ech_gaussian  # noqa: F401  (fit_ech_gaussian is part of this surface)
from .records import ShotSummary, Trajectory, TrajectorySet

MIN_FLAT_TOP_STEPS = 5
MEDIAN_BAND = 0.10       # flat-top points stay within 10% of the window median
PEAK_FRACTION = 0.50     # and above half of the shot's maximum pressure


class _SortedWindow:
    """Sorted multiset over a sliding index window; O(w) insert/remove."""

    def __init__(self):
        self.vals: list[float] = []

    def add(self, v: float):
        bisect.insort(self.vals, v)

    def remove(self, v: float):
        i = bisect.bisect_left(self.vals, v)
        del self.vals[i]

    def in_band(self) -> bool:
        vals = self.vals
        n = len(vals)
        m = vals[n // 2] if n % 2 else 0.5 * (vals[n // 2 - 1] + vals[n // 2])
        return vals[0] >= (1.0 - MEDIAN_BAND) * m and vals[-1] <= (1.0 + MEDIAN_BAND) * m


def extract_flat_top(traj: Trajectory) -> tuple[int, int]:
    """Longest window where pressure sits in a 10% band around the window
    median and above half the shot maximum. Returns a half-open index range.

    Found by a two-pointer sweep over each above-half-peak run: the window
    grows to the right and sheds from the left whenever the band breaks.
    """
    beta = np.asarray(traj.scalars["beta_n"], dtype=float)
    if beta.size < 10:
        raise NoFlatTop(f"trajectory has {beta.size} steps, need at least 10")
    peak = float(beta.max())
    if peak <= 0:
        raise NoFlatTop("pressure never rises above zero")
    mask = beta > PEAK_FRACTION * peak

    best: tuple[int, int] | None = None
    i = 0
    n = beta.size
    while i < n:
        if not mask[i]:
            i += 1
            continue
        j = i
        while j < n and mask[j]:
            j += 1
        # two-pointer scan of the run [i, j)
        window = _SortedWindow()
        start = i
        for end in range(i, j):
            window.add(beta[end])
            while not window.in_band() and start < end:
                window.remove(beta[start])
                start += 1
            if window.in_band() and (best is None or end + 1 - start > best[1] - best[0]):
                best = (start, end + 1)
        i = j
    if best is None or best[1] - best[0] < MIN_FLAT_TOP_STEPS:
        raise NoFlatTop("no qualifying window of at least "
                        f"{MIN_FLAT_TOP_STEPS} steps")
    return best


@dataclass(frozen=True)
class PcaBasis:
    """Orthonormal components retained to meet an explained-variance target."""

    channel: str
    mean: np.ndarray
    components: np.ndarray                 # (k, R)
    explained_variance_ratio: np.ndarray   # (k,)

    @property
    def k(self) -> int:
        return self.components.shape[0]


def fit_pca(profiles, var_target: float = 0.99, channel: str = "") -> PcaBasis:
    """Principal components of a profile set, keeping the smallest count whose
    cumulative explained variance reaches the target."""
    x = np.asarray(profiles, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need at least two profiles to decompose")
    if not (0.0 < var_target <= 1.0):
        raise ValueError("variance target must lie in (0, 1]")
    mean = x.mean(axis=0)
    xc = x - mean
    total = float(np.sum(xc**2))
    if total < 1e-24 * max(1.0, float(np.sum(mean**2))):
        raise DegenerateData("all profiles identical; holding the mean only",)
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    ratios = s**2 / np.sum(s**2)
    k = int(np.searchsorted(np.cumsum(ratios), var_target - 1e-12) + 1)
    k = min(k, len(ratios))
    return PcaBasis(channel=channel, mean=mean, components=vt[:k], explained_variance_ratio=ratios[:k])


def project_profile(basis: PcaBasis, profile) -> np.ndarray:
    profile = np.asarray(profile, dtype=float)
    if profile.shape != basis.mean.shape:
        raise SchemaError(f"profile length {profile.shape} != basis length {basis.mean.shape}")
    return basis.components @ (profile - basis.mean)


def reconstruct(basis: PcaBasis, scores) -> np.ndarray:
    scores = np.asarray(scores, dtype=float)
    if scores.shape != (basis.k,):
        raise SchemaError(f"score length {scores.shape} != component count {basis.k}")
    return basis.mean + scores @ basis.components


def summarize_shot(traj: Trajectory) -> ShotSummary:
    """Reduce a shot to its regression row.

    Mean pressure and the heating-profile fit come from the flat-top window;
    the time to the tearing mode is measured from shot start and censored at
    shot end when no mode occurred.
    """
    start, stop = extract_flat_top(traj)
    beta_bar = float(np.mean(traj.scalars["beta_n"][start:stop]))
    mean_profile = np.asarray(traj.profiles["ech_profile"][start:stop]).mean(axis=0)
    mean_profile = np.clip(mean_profile, 0.0, None)
    try:
        ech, _ = fit_ech_gaussian(mean_profile, traj.radial["ech_profile"])
    except DegenerateProfile as err:
        ech = err.params
    t_tm, censored = traj.t_tm_seconds()
    return ShotSummary(
        shot_id=traj.shot_id,
        beta_n_bar=beta_bar,
        ech=ech,
        t_tm_seconds=t_tm,
        censored=censored,
        campaign=traj.campaign,
    )


def build_gp_dataset(corpus: TrajectorySet, pressure_floor: float = 3.0) -> list[ShotSummary]:
    """One row per shot whose flat-top mean pressure clears the floor.

    Shots without a flat top are skipped; an empty result is a warning, not an
    error, so callers can report the attrition.
    """
    rows = []
    skipped = 0
    for traj in corpus:
        try:
            summary = summarize_shot(traj)
        except NoFlatTop:
            skipped += 1
            continue
        if summary.beta_n_bar > pressure_floor:
            rows.append(summary)
    if not rows:
        warnings.warn(
            f"no shots passed the pressure floor {pressure_floor} "
            f"({skipped} had no flat top)", EmptyDatasetWarning, stacklevel=2)
    return rows


# ---------------------------------------------------------------------------
# step-level features for the dynamics model and the instability classifier


@dataclass
class StepDataset:
    """Per-shot feature sequences: states (T, ds), actions (T, da), labels (T,)."""

    state_names: list[str]
    action_names: list[str]
    bases: dict[str, PcaBasis]
    sequences: list[tuple[np.ndarray, np.ndarray, np.ndarray]]
    shot_ids: list[str]
    campaigns: list[int]

    @property
    def state_dim(self) -> int:
        return len(self.state_names)

    @property
    def action_dim(self) -> int:
        return len(self.action_names)

    def flat_steps(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """All steps pooled: (X_state, X_action, labels)."""
        xs = np.concatenate([s for s, _, _ in self.sequences])
        xa = np.concatenate([a for _, a, _ in self.sequences])
        y = np.concatenate([l for _, _, l in self.sequences])
        return xs, xa, y


def build_step_dataset(
    corpus: TrajectorySet,
    var_target: float = 0.99,
    pca_channels: tuple[str, ...] = ("temp_profile",),
    flat_top_only: bool = True,
) -> StepDataset:
    """Assemble model features: scalar state channels plus PCA scores of the
    profile channels, and the raw actuator channels (heating already in its
    Gaussian parameterization).

    With ``flat_top_only`` each shot is sliced from its flat-top start to the
    recorded end (so tearing events and their tails stay in), and shots that
    never reach a flat top are dropped; the ramp phase is out of scope for
    the models, which only ever operate on sustained plasmas.
    """
    if not corpus.shots:
        raise ValueError("empty corpus")
    first = corpus.shots[0]
    state_channels = list(first.meta["state_channels"])
    action_channels = list(first.meta["actuator_channels"])

    windows: dict[str, tuple[int, int]] = {}
    for traj in corpus:
        if flat_top_only:
            try:
                start, _ = extract_flat_top(traj)
            except NoFlatTop:
                continue
            windows[traj.shot_id] = (start, traj.n_steps)
        else:
            windows[traj.shot_id] = (0, traj.n_steps)
    kept = [t for t in corpus if t.shot_id in windows]
    if not kept:
        raise ValueError("no usable shots after flat-top slicing")

    bases: dict[str, PcaBasis] = {}
    for ch in pca_channels:
        stacked = np.concatenate([
            np.asarray(t.profiles[ch])[windows[t.shot_id][0]: windows[t.shot_id][1]] for t in kept
        ])
        try:
            bases[ch] = fit_pca(stacked, var_target, channel=ch)
        except DegenerateData:
            continue

    state_names = state_channels + [f"{ch}_pc{i}" for ch in bases for i in range(bases[ch].k)]
    sequences, shot_ids, campaigns = [], [], []
    for traj in kept:
        start, stop = windows[traj.shot_id]
        cols = [np.asarray(traj.scalars[c], dtype=float)[start:stop] for c in state_channels]
        for ch, basis in bases.items():
            scores = (np.asarray(traj.profiles[ch])[start:stop] - basis.mean) @ basis.components.T
            cols.extend(scores.T)
        states = np.stack(cols, axis=1)
        actions = np.stack([np.asarray(traj.scalars[c], dtype=float)[start:stop] for c in action_channels], axis=1)
        sequences.append((states, actions, np.asarray(traj.tm_label, dtype=float)[start:stop]))
        shot_ids.append(traj.shot_id)
        campaigns.append(traj.campaign)
    return StepDataset(
        state_names=state_names,
        action_names=action_channels,
        bases=bases,
        sequences=sequences,
        shot_ids=shot_ids,
        campaigns=campaigns,
    )
