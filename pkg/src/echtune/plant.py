"""Synthetic drifting tokamak stand-in.

Ground truth the rest of the package never sees directly: a saturating affine
state transition with Gaussian process noise, a per-step Bernoulli tearing
hazard, campaign-to-campaign parameter drift, and shot execution with actuator
noise so that the measured heating profile differs from the commanded one.

Tearing hazard (per step, logistic in pressure and heating alignment):

    p = logistic(c0 + c1*beta - c2*w*exp(-c3*(mu - rho_star)^2 / (2*max(sigma, sigma_min)^2)))

Heating aimed at the rational surface rho_star suppresses the mode; higher
pressure destabilizes. Once a tearing mode occurs the shot is effectively
over: pressure collapses and the mode-amplitude channel latches high for a
short recorded tail.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .actuation import GyrotronSet, angles_to_profile, profile_to_angles
from .errors import DegenerateProfile, SchemaError
from .profiles import EchParams, SIGMA_MIN, fit_ech_gaussian, gaussian_profile, radial_grid
from .records import Trajectory, TrajectorySet

STATE_CHANNELS = ("beta_n", "n1_mode", "density", "conf_energy", "temp_core", "rotation", "q_min", "press_peak")
ACTUATOR_CHANNELS = ("p_cmd", "gas_cmd", "shape_cmd", "ech_mu", "ech_sigma", "ech_w")

BETA = 0  # index of the normalized-pressure channel
N1 = 1    # index of the mode-amplitude channel


def _default_a() -> tuple:
    a = np.diag([0.95, 0.50, 0.90, 0.90, 0.90, 0.92, 0.93, 0.90])
    a[3, BETA] = 0.05     # stored energy rises with pressure
    a[6, BETA] = -0.01    # safety factor sags with pressure
    a[7, BETA] = 0.03
    a[5, 4] = 0.02        # rotation couples to core temperature
    return tuple(tuple(float(x) for x in row) for row in a)


def _default_b() -> tuple:
    b = np.zeros((8, 6))
    b[BETA, 0] = 0.1875   # feedback power drives pressure
    b[2, 1] = 0.50        # gas feeds density
    b[3, 0] = 0.30
    b[4, 5] = 0.80        # ECH amplitude heats the core
    b[4, 0] = 0.20
    b[5, 1] = -0.20
    b[7, 5] = -0.20       # ECH broadens the pressure profile
    return tuple(tuple(float(x) for x in row) for row in b)


@dataclass(frozen=True)
class PlantConfig:
    state_dim: int = 8
    action_dim: int = 6
    step_seconds: float = 0.02
    horizon_steps: int = 250
    max_shot_seconds: float = 10.0
    # hazard coefficients: offset, pressure weight, suppression weight, misalignment scale
    hazard_c0: float = -3.0
    hazard_c1: float = 1.2
    hazard_c2: float = 4.0
    hazard_c3: float = 1.0
    rho_star: float = 0.45
    sigma_min: float = SIGMA_MIN
    # transition: s' = bias + sat * tanh((A s + B a) / sat) + noise
    a_matrix: tuple = field(default_factory=_default_a)
    b_matrix: tuple = field(default_factory=_default_b)
    bias: tuple = (0.1, 0.04, 0.2, 0.3, 0.5, 0.4, 0.15, 0.1)
    saturation: tuple = (20.0, 4.0, 8.0, 8.0, 8.0, 8.0, 8.0, 8.0)
    process_noise: tuple = (0.03, 0.035, 0.02, 0.02, 0.02, 0.02, 0.01, 0.02)
    initial_state: tuple = (0.4, 0.05, 0.3, 0.5, 0.6, 0.5, 0.2, 0.3)
    initial_jitter: float = 0.05
    # feedback controller
    feedback_gain: float = 8.0
    feedback_clip: float = 4.0
    # actuator noise on realized quantities
    ech_amp_noise: float = 0.05
    ech_center_noise: float = 0.02
    beta_target_noise: float = 0.03
    profile_meas_noise: float = 0.005
    # post-tearing behavior: mode amplitude latches high, pressure takes a
    # constant confinement drag; a short tail is recorded, then the shot ends
    tail_steps: int = 15
    tm_beta_drag: float = 0.3
    n1_latched_level: float = 1.6
    # campaign drift schedule (piecewise constant per campaign)
    drift_amplitude: float = 1.0
    drift_c0_step: float = 0.15
    drift_rho_step: float = 0.008
    drift_bias_beta_step: float = 0.02
    gyrotrons: GyrotronSet = field(default_factory=GyrotronSet)
    radial_points: int = 33

    def __post_init__(self):
        if self.step_seconds <= 0:
            raise ValueError("step_seconds must be positive")
        if self.horizon_steps * self.step_seconds > self.max_shot_seconds:
            raise ValueError("horizon exceeds the maximum shot length")
        if not (0.0 <= self.rho_star <= 1.0):
            raise ValueError("rational surface must lie in [0, 1]")

    # -- serialization: bit-exact JSON round trip ------------------------------

    def to_dict(self) -> dict:
        d = {}
        for name in self.__dataclass_fields__:
            v = getattr(self, name)
            if isinstance(v, GyrotronSet):
                v = {k: getattr(v, k) for k in v.__dataclass_fields__}
            elif isinstance(v, tuple):
                v = [list(r) if isinstance(r, tuple) else r for r in v]
            d[name] = v
        return d

    @staticmethod
    def from_dict(d: dict) -> "PlantConfig":
        kw = dict(d)
        kw["gyrotrons"] = GyrotronSet(**kw["gyrotrons"])
        for name in ("a_matrix", "b_matrix"):
            kw[name] = tuple(tuple(row) for row in kw[name])
        for name in ("bias", "saturation", "process_noise", "initial_state"):
            kw[name] = tuple(kw[name])
        return PlantConfig(**kw)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))
        return path

    @staticmethod
    def load(path: str | Path) -> "PlantConfig":
        return PlantConfig.from_dict(json.loads(Path(path).read_text()))


@dataclass
class PlantState:
    s: np.ndarray
    t: int = 0
    tm_latched: bool = False


@dataclass(frozen=True)
class ShotRequest:
    """Everything fixed before a shot: target pressure, schedules, heating."""

    target_pressure: float
    ech: EchParams
    gyrotron_count: int = 4
    feedback_gain: float | None = None      # None -> config default
    gas_cmd: float = 0.5
    shape_cmd: float = 0.0
    seed: int = 0


def _logistic(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


def hazard(state: PlantState, action: np.ndarray, cfg: PlantConfig) -> float:
    """Per-step tearing probability; deterministic in (state, action)."""
    action = np.asarray(action, dtype=float)
    if state.s.shape != (cfg.state_dim,):
        raise SchemaError(f"state dim {state.s.shape} != {cfg.state_dim}")
    if action.shape != (cfg.action_dim,):
        raise SchemaError(f"action dim {action.shape} != {cfg.action_dim}")
    beta = state.s[BETA]
    mu, sigma, w = action[3], action[4], action[5]
    width = max(sigma, cfg.sigma_min)
    alignment = np.exp(-cfg.hazard_c3 * (mu - cfg.rho_star) ** 2 / (2.0 * width**2))
    return _logistic(cfg.hazard_c0 + cfg.hazard_c1 * beta - cfg.hazard_c2 * w * alignment)


def step(state: PlantState, action: np.ndarray, cfg: PlantConfig, rng: np.random.Generator) -> tuple[PlantState, bool]:
    """Advance one time step; returns (next state, tearing flag drawn this step)."""
    max_steps = int(round(cfg.max_shot_seconds / cfg.step_seconds))
    if state.t >= max_steps:
        raise ValueError(f"state is past the maximum shot length ({max_steps} steps)")
    p = hazard(state, action, cfg)
    tm_flag = bool(rng.random() < p)
    latched = state.tm_latched or tm_flag

    a_mat = np.asarray(cfg.a_matrix, dtype=float)
    b_mat = np.asarray(cfg.b_matrix, dtype=float)
    sat = np.asarray(cfg.saturation, dtype=float)
    det = np.asarray(cfg.bias, dtype=float) + sat * np.tanh((a_mat @ state.s + b_mat @ action) / sat)
    if latched:
        # degraded confinement: constant pressure drag, mode amplitude pegged
        det[BETA] = max(det[BETA] - cfg.tm_beta_drag, 0.0)
        det[N1] = cfg.n1_latched_level
    nxt = det + np.asarray(cfg.process_noise, dtype=float) * rng.standard_normal(cfg.state_dim)
    return PlantState(s=nxt, t=state.t + 1, tm_latched=latched), tm_flag


@dataclass(frozen=True)
class _CompiledDynamics:
    """Config arrays materialized once per shot."""

    a: np.ndarray
    b: np.ndarray
    bias: np.ndarray
    sat: np.ndarray
    noise: np.ndarray


def _temp_profile(s: np.ndarray, ech_profile: np.ndarray, rho: np.ndarray) -> np.ndarray:
    core = s[4] * np.exp(-((rho / 0.5) ** 2))
    return core + 0.3 * ech_profile


def realized_ech(req: ShotRequest, cfg: PlantConfig, rng: np.random.Generator) -> tuple[np.ndarray, EchParams]:
    """Commanded profile -> gyrotron quantization -> actuator noise -> fitted params."""
    rho = radial_grid(cfg.radial_points)
    if req.ech.w <= 0.0 or req.gyrotron_count == 0:
        params = EchParams(req.ech.mu, req.ech.sigma, 0.0)
        return np.zeros_like(rho), params
    gset = replace(cfg.gyrotrons, count=req.gyrotron_count)
    fit = profile_to_angles(req.ech, gset, rho)
    amp_factor = max(1.0 + cfg.ech_amp_noise * rng.standard_normal(), 0.05)
    center_shift = cfg.ech_center_noise * rng.standard_normal()
    shifted = np.clip(fit.centers + center_shift, 0.0, 1.0)
    profile = amp_factor * angles_to_profile(gset.center_to_angle(shifted), gset, rho)
    try:
        params, _ = fit_ech_gaussian(profile, rho)
    except DegenerateProfile as err:
        params = err.params
    return profile, params


def run_shot(req: ShotRequest, cfg: PlantConfig) -> Trajectory:
    """Roll a full shot; the trajectory carries realized channels and labels."""
    rng = np.random.default_rng(np.random.SeedSequence(req.seed))
    rho = radial_grid(cfg.radial_points)

    target = req.target_pressure + cfg.beta_target_noise * rng.standard_normal()
    ech_profile, ech_params = realized_ech(req, cfg, rng)
    gain = cfg.feedback_gain if req.feedback_gain is None else req.feedback_gain

    s0 = np.asarray(cfg.initial_state, dtype=float) + cfg.initial_jitter * rng.standard_normal(cfg.state_dim)
    state = PlantState(s=s0)

    scalars = {name: [] for name in STATE_CHANNELS + ACTUATOR_CHANNELS}
    temp_rows, ech_rows, labels = [], [], []
    tail_left = cfg.tail_steps

    for _ in range(cfg.horizon_steps):
        p_cmd = float(np.clip(gain * (target - state.s[BETA]), 0.0, cfg.feedback_clip))
        action = np.array([p_cmd, req.gas_cmd, req.shape_cmd, ech_params.mu, ech_params.sigma, ech_params.w])

        for i, name in enumerate(STATE_CHANNELS):
            scalars[name].append(float(state.s[i]))
        for j, name in enumerate(ACTUATOR_CHANNELS):
            scalars[name].append(float(action[j]))
        ech_rows.append(ech_profile + cfg.profile_meas_noise * rng.standard_normal(rho.size))
        temp_rows.append(_temp_profile(state.s, ech_profile, rho) + cfg.profile_meas_noise * rng.standard_normal(rho.size))

        state, _ = step(state, action, cfg, rng)
        labels.append(int(state.tm_latched))

        if state.tm_latched:
            if tail_left == 0:
                break
            tail_left -= 1

    return Trajectory(
        shot_id=f"s{req.seed:08d}",
        campaign=0,
        step_seconds=cfg.step_seconds,
        scalars={k: np.array(v) for k, v in scalars.items()},
        profiles={"temp_profile": np.array(temp_rows), "ech_profile": np.array(ech_rows)},
        radial={"temp_profile": rho, "ech_profile": rho},
        tm_label=np.array(labels, dtype=np.int8),
        meta={
            "state_channels": list(STATE_CHANNELS),
            "actuator_channels": list(ACTUATOR_CHANNELS),
            "target_pressure": req.target_pressure,
            "realized_target": float(target),
            "commanded_ech": {"mu": req.ech.mu, "sigma": req.ech.sigma, "w": req.ech.w},
            "realized_ech": {"mu": ech_params.mu, "sigma": ech_params.sigma, "w": ech_params.w},
            "gyrotron_count": req.gyrotron_count,
            "seed": req.seed,
        },
    )


def drift(cfg: PlantConfig, campaign_index: int) -> PlantConfig:
    """Deterministic per-campaign parameter drift; campaign 0 is the base config."""
    if campaign_index < 0:
        raise ValueError("campaign index must be nonnegative")
    if campaign_index == 0:
        return cfg
    k = campaign_index * cfg.drift_amplitude
    bias = list(cfg.bias)
    bias[BETA] = bias[BETA] + cfg.drift_bias_beta_step * k
    return replace(
        cfg,
        hazard_c0=cfg.hazard_c0 + cfg.drift_c0_step * k,
        rho_star=float(np.clip(cfg.rho_star + cfg.drift_rho_step * k, 0.0, 1.0)),
        bias=tuple(bias),
    )


@dataclass(frozen=True)
class CorpusSampling:
    """Shot-request sampling ranges for corpus generation."""

    beta_range: tuple[float, float] = (2.6, 3.6)
    mu_range: tuple[float, float] = (0.15, 0.85)
    sigma_range: tuple[float, float] = (0.03, 0.15)
    w_range: tuple[float, float] = (0.0, 2.5)
    gyrotron_counts: tuple[int, ...] = (2, 3, 4, 5)
    gas_range: tuple[float, float] = (0.2, 0.8)
    shape_range: tuple[float, float] = (-0.5, 0.5)


def _uniform(rng, lo_hi):
    return float(rng.uniform(lo_hi[0], lo_hi[1]))


def generate_corpus(
    cfg: PlantConfig,
    n_shots: int,
    campaigns: int = 1,
    seed: int = 0,
    sampling: CorpusSampling | None = None,
) -> TrajectorySet:
    """Seeded shot corpus spread across drifted campaigns."""
    if n_shots < 1:
        raise ValueError("need at least one shot")
    if campaigns < 1:
        raise ValueError("need at least one campaign")
    sampling = sampling or CorpusSampling()

    shots = []
    for i in range(n_shots):
        campaign = i * campaigns // n_shots
        rng = np.random.default_rng(np.random.SeedSequence((seed, i)))
        shot_seed = int(rng.integers(0, 2**63 - 1))
        req = ShotRequest(
            target_pressure=_uniform(rng, sampling.beta_range),
            ech=EchParams(
                mu=_uniform(rng, sampling.mu_range),
                sigma=_uniform(rng, sampling.sigma_range),
                w=_uniform(rng, sampling.w_range),
            ),
            gyrotron_count=int(rng.choice(sampling.gyrotron_counts)),
            gas_cmd=_uniform(rng, sampling.gas_range),
            shape_cmd=_uniform(rng, sampling.shape_range),
            seed=shot_seed,
        )
        traj = run_shot(req, drift(cfg, campaign))
        traj.shot_id = f"c{campaign}_{i:05d}"
        traj.campaign = campaign
        shots.append(traj)
    return TrajectorySet(shots=shots, config_snapshot=cfg.to_dict(), seed=seed)
