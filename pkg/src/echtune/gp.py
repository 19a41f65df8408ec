"""Exact Gaussian-process regression of time-to-instability with a nonzero
prior mean.

Posterior at a test input x*:

    mean = prior(x*) + k*^T (K + sigma_no^2 I)^-1 (y - prior(X))
    var  = k** - k*^T (K + sigma_no^2 I)^-1 k* + sigma_no^2

Inputs are scaled to the unit box (then centered) before kernel evaluation,
so lengthscales are in scaled units. The time-augmented variant multiplies
the base kernel by a squared-exponential over campaign distance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import NumericalFailure, SchemaError
from .profiles import EchParams
from .records import ShotSummary

_log = logging.getLogger(__name__)

KERNEL_VARIANTS = ("se", "matern15", "matern25", "linear")

DEFAULT_NOISE_VARIANCE = 0.25   # seconds^2
DEFAULT_SIGNAL_VARIANCE = 4.0   # seconds^2
DEFAULT_LENGTHSCALE = 0.3       # scaled units

JITTER_START = 1e-10
JITTER_MAX = 1e-6


@dataclass(frozen=True)
class Kernel:
    variant: str = "se"
    signal_variance: float = DEFAULT_SIGNAL_VARIANCE
    lengthscales: tuple[float, ...] | float = DEFAULT_LENGTHSCALE
    time_lengthscale: float | None = None   # campaigns; set to augment with time

    def __post_init__(self):
        if self.variant not in KERNEL_VARIANTS:
            raise ValueError(f"unknown kernel variant {self.variant!r}")
        if self.signal_variance <= 0:
            raise ValueError("signal variance must be positive")
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if np.any(ls <= 0):
            raise ValueError("lengthscales must be positive")
        if self.time_lengthscale is not None and self.time_lengthscale <= 0:
            raise ValueError("time lengthscale must be positive")

    def label(self) -> str:
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        base = f"{self.variant}(ls={ls[0]:g})" if ls.size == 1 or np.all(ls == ls[0]) \
            else f"{self.variant}(ls={tuple(ls)})"
        return base + ("*time" if self.time_lengthscale is not None else "")


def _scaled_sq_dist(x: np.ndarray, y: np.ndarray, ls: np.ndarray) -> np.ndarray:
    xs = x / ls
    ys = y / ls
    d2 = (xs**2).sum(1)[:, None] + (ys**2).sum(1)[None, :] - 2.0 * xs @ ys.T
    return np.maximum(d2, 0.0)


def kernel_matrix(kernel: Kernel, x: np.ndarray, y: np.ndarray,
                  cx: np.ndarray | None = None, cy: np.ndarray | None = None) -> np.ndarray:
    """Cross-covariance of prepared (scaled, centered) inputs.

    cx/cy carry campaign indices when the kernel is time-augmented.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if x.shape[1] != y.shape[1]:
        raise SchemaError(f"input dims differ: {x.shape[1]} vs {y.shape[1]}")
    ls = np.atleast_1d(np.asarray(kernel.lengthscales, dtype=float))
    if ls.size == 1:
        ls = np.full(x.shape[1], ls[0])
    if ls.size != x.shape[1]:
        raise SchemaError(f"{ls.size} lengthscales for {x.shape[1]} input dims")

    if kernel.variant == "se":
        k = kernel.signal_variance * np.exp(-0.5 * _scaled_sq_dist(x, y, ls))
    elif kernel.variant == "matern15":
        r = np.sqrt(_scaled_sq_dist(x, y, ls))
        arg = np.sqrt(3.0) * r
        k = kernel.signal_variance * (1.0 + arg) * np.exp(-arg)
    elif kernel.variant == "matern25":
        r = np.sqrt(_scaled_sq_dist(x, y, ls))
        arg = np.sqrt(5.0) * r
        k = kernel.signal_variance * (1.0 + arg + arg**2 / 3.0) * np.exp(-arg)
    elif kernel.variant == "linear":
        k = kernel.signal_variance * ((x / ls) @ (y / ls).T)
    else:  # pragma: no cover
        raise ValueError(kernel.variant)

    if kernel.time_lengthscale is not None:
        if cx is None or cy is None:
            raise SchemaError("time-augmented kernel needs campaign indices")
        cx = np.asarray(cx, dtype=float).reshape(-1, 1)
        cy = np.asarray(cy, dtype=float).reshape(-1, 1)
        dt2 = (cx - cy.T) ** 2
        k = k * np.exp(-0.5 * dt2 / kernel.time_lengthscale**2)
    return k


def kernel_eval(kernel: Kernel, x, y, cx: float | None = None, cy: float | None = None) -> float:
    """Pointwise kernel value on prepared inputs."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != y.shape:
        raise SchemaError(f"input shapes differ: {x.shape} vs {y.shape}")
    cxa = None if cx is None else np.array([cx])
    cya = None if cy is None else np.array([cy])
    return float(kernel_matrix(kernel, x[None, :], y[None, :], cxa, cya)[0, 0])


@dataclass(frozen=True)
class InputScaler:
    """Maps raw inputs to the centered unit box via per-dimension bounds."""

    bounds: tuple[tuple[float, float], ...]

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        lo = np.array([b[0] for b in self.bounds])
        hi = np.array([b[1] for b in self.bounds])
        span = np.where(hi > lo, hi - lo, 1.0)
        return (x - lo) / span - 0.5

    @property
    def dim(self) -> int:
        return len(self.bounds)


def identity_scaler(dim: int) -> InputScaler:
    return InputScaler(bounds=tuple((0.0, 1.0) for _ in range(dim)))


# ---------------------------------------------------------------------------
# dataset and posterior


def summary_input(row: ShotSummary) -> np.ndarray:
    return np.array([row.beta_n_bar, row.ech.mu, row.ech.sigma, row.ech.w])


@dataclass(frozen=True)
class GpDataset:
    """Raw rows (inputs in physical units), observation noise, campaign tags."""

    x: np.ndarray          # (n, d)
    y: np.ndarray          # (n,)
    campaign: np.ndarray   # (n,)
    noise_variance: float = DEFAULT_NOISE_VARIANCE

    def __post_init__(self):
        if self.x.ndim != 2 or self.y.shape != (self.x.shape[0],) \
                or self.campaign.shape != (self.x.shape[0],):
            raise SchemaError("inconsistent dataset shapes")
        if self.noise_variance <= 0:
            raise ValueError("noise variance must be positive")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @staticmethod
    def from_summaries(rows: list[ShotSummary], noise_variance: float = DEFAULT_NOISE_VARIANCE) -> "GpDataset":
        if rows:
            x = np.stack([summary_input(r) for r in rows])
            y = np.array([r.t_tm_seconds for r in rows])
            c = np.array([r.campaign for r in rows], dtype=float)
        else:
            x = np.zeros((0, 4))
            y = np.zeros(0)
            c = np.zeros(0)
        return GpDataset(x=x, y=y, campaign=c, noise_variance=noise_variance)


def add_observation(dataset: GpDataset, x_row, y_value: float, campaign: float = 0.0) -> GpDataset:
    """Append one measured row; the posterior must be refit before use."""
    x_row = np.asarray(x_row, dtype=float).reshape(1, -1)
    if dataset.n and x_row.shape[1] != dataset.x.shape[1]:
        raise SchemaError(f"row dim {x_row.shape[1]} != dataset dim {dataset.x.shape[1]}")
    return replace(
        dataset,
        x=np.concatenate([dataset.x, x_row]) if dataset.n else x_row,
        y=np.append(dataset.y, float(y_value)),
        campaign=np.append(dataset.campaign, float(campaign)),
    )


class GpPosterior:
    """Factorized exact posterior; immutable once fit."""

    def __init__(self, dataset: GpDataset, kernel: Kernel, prior, scaler: InputScaler,
                 query_campaign: float | None = None):
        self.dataset = dataset
        self.kernel = kernel
        self.prior = prior
        self.scaler = scaler
        self.query_campaign = query_campaign
        self.jitter_used = 0.0

        self._xp = scaler.transform(dataset.x) if dataset.n else np.zeros((0, scaler.dim))
        if dataset.n:
            prior_at = np.array([float(prior(xi)) for xi in dataset.x])
            self.residual = dataset.y - prior_at
            k = kernel_matrix(kernel, self._xp, self._xp, dataset.campaign, dataset.campaign)
            self._chol = self._factorize(k + dataset.noise_variance * np.eye(dataset.n))
            self._alpha = cho_solve(self._chol, self.residual)
        else:
            self.residual = np.zeros(0)
            self._chol = None
            self._alpha = np.zeros(0)

    def _factorize(self, a: np.ndarray):
        jitter = 0.0
        while True:
            try:
                chol = cho_factor(a + jitter * np.eye(a.shape[0]), lower=True)
                if jitter > 0:
                    self.jitter_used = jitter
                    _log.warning("kernel matrix needed jitter %.1e", jitter)
                return chol
            except np.linalg.LinAlgError:
                if jitter == 0.0:
                    jitter = JITTER_START
                elif jitter >= JITTER_MAX:
                    raise NumericalFailure(
                        f"factorization failed at maximum jitter {JITTER_MAX:g}")
                else:
                    jitter *= 10.0

    def _prep_query(self, x_star: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
        xq = self.scaler.transform(x_star)
        cq = None
        if self.kernel.time_lengthscale is not None:
            qc = self.query_campaign
            if qc is None:
                qc = float(self.dataset.campaign.max()) if self.dataset.n else 0.0
            cq = np.full(xq.shape[0], qc)
        return xq, cq

    def predict_many(self, x_star) -> tuple[np.ndarray, np.ndarray]:
        """Posterior (mean, variance) at raw-unit query rows."""
        x_star = np.atleast_2d(np.asarray(x_star, dtype=float))
        xq, cq = self._prep_query(x_star)
        prior_at = np.array([float(self.prior(xi)) for xi in x_star])
        noise = self.dataset.noise_variance
        k_ss = np.array([
            kernel_eval(self.kernel, xq[i], xq[i],
                        None if cq is None else cq[i], None if cq is None else cq[i])
            for i in range(xq.shape[0])
        ])
        if self.dataset.n == 0:
            return prior_at, k_ss + noise
        k_star = kernel_matrix(self.kernel, xq, self._xp, cq, self.dataset.campaign)
        mean = prior_at + k_star @ self._alpha
        v = cho_solve(self._chol, k_star.T)
        var = k_ss - np.einsum("ij,ji->i", k_star, v) + noise
        return mean, np.maximum(var, noise - 1e-8)

    def predict(self, beta_n_bar: float, ech: EchParams) -> tuple[float, float]:
        mean, var = self.predict_many(np.array([[beta_n_bar, ech.mu, ech.sigma, ech.w]]))
        return float(mean[0]), float(var[0])

    def sample_many(self, x_star, rng: np.random.Generator) -> np.ndarray:
        """One joint draw of the latent function at raw-unit query rows."""
        x_star = np.atleast_2d(np.asarray(x_star, dtype=float))
        xq, cq = self._prep_query(x_star)
        prior_at = np.array([float(self.prior(xi)) for xi in x_star])
        cov = kernel_matrix(self.kernel, xq, xq, cq, cq)
        mean = prior_at
        if self.dataset.n:
            k_star = kernel_matrix(self.kernel, xq, self._xp, cq, self.dataset.campaign)
            mean = prior_at + k_star @ self._alpha
            cov = cov - k_star @ cho_solve(self._chol, k_star.T)
        cov = 0.5 * (cov + cov.T)
        jitter = 1e-10 * max(1.0, float(np.trace(cov)) / max(cov.shape[0], 1))
        for _ in range(8):
            try:
                chol = np.linalg.cholesky(cov + jitter * np.eye(cov.shape[0]))
                break
            except np.linalg.LinAlgError:
                jitter *= 10.0
        else:
            raise NumericalFailure("could not factorize the joint predictive covariance")
        return mean + chol @ rng.standard_normal(cov.shape[0])

    def log_marginal_likelihood(self) -> float:
        if self.dataset.n == 0:
            return 0.0
        half_logdet = float(np.sum(np.log(np.diagonal(self._chol[0]))))
        return float(
            -0.5 * self.residual @ self._alpha - half_logdet
            - 0.5 * self.dataset.n * np.log(2.0 * np.pi)
        )


def fit(dataset: GpDataset, kernel: Kernel, prior, scaler: InputScaler,
        query_campaign: float | None = None) -> GpPosterior:
    """Build the factorized posterior for a dataset/kernel/prior triple."""
    return GpPosterior(dataset, kernel, prior, scaler, query_campaign)


def zero_prior(_x) -> float:
    return 0.0


@dataclass(frozen=True)
class ConstantPrior:
    value: float

    def __call__(self, _x) -> float:
        return self.value


def select_kernel_by_lml(dataset: GpDataset, kernels: list[Kernel], prior,
                         scaler: InputScaler) -> tuple[Kernel, list[tuple[str, float]]]:
    """Optional hyperparameter selection: pick the kernel with the highest
    log marginal likelihood. Off by default everywhere; provided for sweeps."""
    scores = []
    for k in kernels:
        post = fit(dataset, k, prior, scaler)
        scores.append((k.label(), post.log_marginal_likelihood()))
    best = int(np.argmax([s for _, s in scores]))
    return kernels[best], scores
