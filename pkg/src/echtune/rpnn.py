"""Recurrent probabilistic dynamics model.

A GRU-cored network mapping (state, action) to a diagonal Gaussian over the
next state *delta*. Encoder and decoder are tanh MLPs (the decoder with
residual connections), trained by exact backpropagation through time on the
Gaussian negative log likelihood with decoupled weight decay. Inputs and
targets are standardized per channel; the standardization is stored with the
parameters so predictions come back in raw units.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NonFiniteLoss, SchemaError

LOG2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class RpnnConfig:
    state_dim: int = 8
    action_dim: int = 6
    encoder_widths: tuple[int, ...] = (64, 64)
    hidden_size: int = 32
    decoder_widths: tuple[int, ...] = (64, 64)   # equal widths; residual after the first
    learning_rate: float = 3e-4
    weight_decay: float = 1e-3
    patience: int = 250
    val_fraction: float = 0.10
    logvar_min: float = -10.0
    logvar_max: float = 4.0
    batch_size: int = 32
    max_epochs: int = 2000
    grad_clip: float = 10.0

    def __post_init__(self):
        if any(w < 1 for w in self.encoder_widths + self.decoder_widths) or self.hidden_size < 1:
            raise ValueError("all layer widths must be >= 1")
        if not (0.0 < self.val_fraction < 1.0):
            raise ValueError("validation fraction must lie in (0, 1)")
        if len(set(self.decoder_widths)) != 1:
            raise ValueError("decoder widths must be equal for residual connections")

    @property
    def input_dim(self) -> int:
        return self.state_dim + self.action_dim


@dataclass
class GaussianPrediction:
    """Diagonal normal over the next-state delta, in raw state units."""

    mean: np.ndarray
    variance: np.ndarray


@dataclass
class RpnnParams:
    config: RpnnConfig
    weights: dict[str, np.ndarray]
    in_mean: np.ndarray
    in_scale: np.ndarray
    tgt_mean: np.ndarray
    tgt_scale: np.ndarray

    def copy(self) -> "RpnnParams":
        return RpnnParams(
            config=self.config,
            weights={k: v.copy() for k, v in self.weights.items()},
            in_mean=self.in_mean.copy(), in_scale=self.in_scale.copy(),
            tgt_mean=self.tgt_mean.copy(), tgt_scale=self.tgt_scale.copy(),
        )

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        cfg_json = json.dumps({k: getattr(self.config, k) for k in self.config.__dataclass_fields__})
        np.savez(
            path,
            __config__=np.frombuffer(cfg_json.encode(), dtype=np.uint8),
            __in_mean__=self.in_mean, __in_scale__=self.in_scale,
            __tgt_mean__=self.tgt_mean, __tgt_scale__=self.tgt_scale,
            **self.weights,
        )
        return path

    @staticmethod
    def load(path: str | Path) -> "RpnnParams":
        data = np.load(path)
        raw = json.loads(bytes(data["__config__"]).decode())
        for key in ("encoder_widths", "decoder_widths"):
            raw[key] = tuple(raw[key])
        cfg = RpnnConfig(**raw)
        weights = {k: data[k] for k in data.files if not k.startswith("__")}
        return RpnnParams(
            config=cfg, weights=weights,
            in_mean=data["__in_mean__"], in_scale=data["__in_scale__"],
            tgt_mean=data["__tgt_mean__"], tgt_scale=data["__tgt_scale__"],
        )


def init_params(cfg: RpnnConfig, seed: int = 0) -> RpnnParams:
    rng = np.random.default_rng(seed)

    def glorot(out_d, in_d):
        s = np.sqrt(6.0 / (in_d + out_d))
        return rng.uniform(-s, s, size=(out_d, in_d))

    w: dict[str, np.ndarray] = {}
    prev = cfg.input_dim
    for i, width in enumerate(cfg.encoder_widths):
        w[f"enc{i}_W"] = glorot(width, prev)
        w[f"enc{i}_b"] = np.zeros(width)
        prev = width
    h = cfg.hidden_size
    for gate in ("z", "r", "n"):
        w[f"gru_W{gate}"] = glorot(h, prev)
        w[f"gru_U{gate}"] = glorot(h, h)
        w[f"gru_b{gate}"] = np.zeros(h)
    prev = h
    for i, width in enumerate(cfg.decoder_widths):
        w[f"dec{i}_W"] = glorot(width, prev)
        w[f"dec{i}_b"] = np.zeros(width)
        prev = width
    w["mean_W"] = glorot(cfg.state_dim, prev) * 0.1
    w["mean_b"] = np.zeros(cfg.state_dim)
    w["logvar_W"] = np.zeros((cfg.state_dim, prev))
    w["logvar_b"] = np.full(cfg.state_dim, -1.0)
    d = np.ones(cfg.input_dim)
    return RpnnParams(
        config=cfg, weights=w,
        in_mean=np.zeros(cfg.input_dim), in_scale=d,
        tgt_mean=np.zeros(cfg.state_dim), tgt_scale=np.ones(cfg.state_dim),
    )


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _step_core(w: dict, cfg: RpnnConfig, x: np.ndarray, h: np.ndarray, cache: dict | None = None):
    """One standardized step for a batch: x (B, in), h (B, H) -> (m, lv, h')."""
    e = x
    encs = []
    for i in range(len(cfg.encoder_widths)):
        e = np.tanh(e @ w[f"enc{i}_W"].T + w[f"enc{i}_b"])
        encs.append(e)
    z = _sigmoid(e @ w["gru_Wz"].T + h @ w["gru_Uz"].T + w["gru_bz"])
    r = _sigmoid(e @ w["gru_Wr"].T + h @ w["gru_Ur"].T + w["gru_br"])
    u = h @ w["gru_Un"].T
    n = np.tanh(e @ w["gru_Wn"].T + r * u + w["gru_bn"])
    h_new = z * h + (1.0 - z) * n
    d = h_new
    decs = []
    for i in range(len(cfg.decoder_widths)):
        c = np.tanh(d @ w[f"dec{i}_W"].T + w[f"dec{i}_b"])
        decs.append(c)
        d = c if i == 0 else c + d
    m = d @ w["mean_W"].T + w["mean_b"]
    lv_raw = d @ w["logvar_W"].T + w["logvar_b"]
    lv = np.clip(lv_raw, cfg.logvar_min, cfg.logvar_max)
    if cache is not None:
        cache.update(x=x, encs=encs, h_prev=h, z=z, r=r, u=u, n=n, h_new=h_new,
                     decs=decs, d_out=d, lv_raw=lv_raw)
    return m, lv, h_new


def forward(params: RpnnParams, hidden: np.ndarray, s, a) -> tuple[GaussianPrediction, np.ndarray]:
    """Single-step prediction in raw units; pure in (params, hidden, s, a)."""
    cfg = params.config
    s = np.asarray(s, dtype=float)
    a = np.asarray(a, dtype=float)
    if s.shape != (cfg.state_dim,) or a.shape != (cfg.action_dim,):
        raise SchemaError(f"expected state {cfg.state_dim} and action {cfg.action_dim}, "
                          f"got {s.shape} and {a.shape}")
    hidden = np.asarray(hidden, dtype=float)
    if hidden.shape != (cfg.hidden_size,):
        raise SchemaError(f"hidden size {hidden.shape} != {cfg.hidden_size}")
    x = (np.concatenate([s, a]) - params.in_mean) / params.in_scale
    m, lv, h_new = _step_core(params.weights, cfg, x[None, :], hidden[None, :])
    mean = m[0] * params.tgt_scale + params.tgt_mean
    var = np.exp(lv[0]) * params.tgt_scale**2
    return GaussianPrediction(mean=mean, variance=var), h_new[0]


def nll_loss(pred: GaussianPrediction, target) -> float:
    """Gaussian negative log likelihood, summed over dimensions.

    For batched predictions (2-d mean/variance) the value is averaged over
    the batch axis.
    """
    target = np.asarray(target, dtype=float)
    if target.shape != pred.mean.shape:
        raise SchemaError(f"target shape {target.shape} != prediction shape {pred.mean.shape}")
    per_dim = 0.5 * (LOG2PI + np.log(pred.variance) + (target - pred.mean) ** 2 / pred.variance)
    per_item = per_dim.sum(axis=-1)
    return float(per_item.mean()) if per_item.ndim else float(per_item)


# ---------------------------------------------------------------------------
# training: exact BPTT over padded sequence batches


def _sequence_loss_and_grads(w, cfg, x, y, mask, want_grads=True):
    """Standardized NLL averaged over valid (batch, time) cells, with grads.

    x: (B, T, in), y: (B, T, out), mask: (B, T) of 0/1.
    """
    bsz, tlen, _ = x.shape
    h = np.zeros((bsz, cfg.hidden_size))
    caches = []
    total = 0.0
    n_valid = float(mask.sum())
    resid_over_v = np.empty((tlen, bsz, cfg.state_dim))
    lv_all = np.empty((tlen, bsz, cfg.state_dim))
    for t in range(tlen):
        cache: dict = {}
        m, lv, h = _step_core(w, cfg, x[:, t], h, cache)
        resid = y[:, t] - m
        inv_v = np.exp(-lv)
        cell = 0.5 * (LOG2PI + lv + resid**2 * inv_v).sum(axis=1)
        total += float((cell * mask[:, t]).sum())
        resid_over_v[t] = resid * inv_v
        lv_all[t] = lv
        caches.append(cache)
    loss = total / n_valid
    if not want_grads:
        return loss, None

    grads = {k: np.zeros_like(v) for k, v in w.items()}
    gh_next = np.zeros((bsz, cfg.hidden_size))
    n_dec = len(cfg.decoder_widths)
    n_enc = len(cfg.encoder_widths)
    for t in range(tlen - 1, -1, -1):
        c = caches[t]
        scale = (mask[:, t] / n_valid)[:, None]
        dm = -resid_over_v[t] * scale
        # dl/dlv = 0.5 * (1 - resid^2 / v), gated by the clamp
        in_clip = (c["lv_raw"] > cfg.logvar_min) & (c["lv_raw"] < cfg.logvar_max)
        dlv = 0.5 * (1.0 - resid_over_v[t] ** 2 * np.exp(lv_all[t])) * scale * in_clip

        grads["mean_W"] += dm.T @ c["d_out"]
        grads["mean_b"] += dm.sum(axis=0)
        grads["logvar_W"] += dlv.T @ c["d_out"]
        grads["logvar_b"] += dlv.sum(axis=0)
        dd = dm @ w["mean_W"] + dlv @ w["logvar_W"]

        for i in range(n_dec - 1, -1, -1):
            ci = c["decs"][i]
            dpre = dd * (1.0 - ci**2)
            prev = _dec_input(c, i)
            grads[f"dec{i}_W"] += dpre.T @ prev
            grads[f"dec{i}_b"] += dpre.sum(axis=0)
            dd_prev = dpre @ w[f"dec{i}_W"]
            dd = dd_prev if i == 0 else dd_prev + dd  # residual passthrough
        gh = dd + gh_next

        z, r, u, n, h_prev = c["z"], c["r"], c["u"], c["n"], c["h_prev"]
        dz = gh * (h_prev - n)
        dn = gh * (1.0 - z)
        dh_prev = gh * z
        dan = dn * (1.0 - n**2)
        grads["gru_Wn"] += dan.T @ c["encs"][-1]
        grads["gru_bn"] += dan.sum(axis=0)
        dr = dan * u
        du = dan * r
        grads["gru_Un"] += du.T @ h_prev
        dh_prev = dh_prev + du @ w["gru_Un"]
        dar = dr * r * (1.0 - r)
        grads["gru_Wr"] += dar.T @ c["encs"][-1]
        grads["gru_Ur"] += dar.T @ h_prev
        grads["gru_br"] += dar.sum(axis=0)
        dh_prev = dh_prev + dar @ w["gru_Ur"]
        daz = dz * z * (1.0 - z)
        grads["gru_Wz"] += daz.T @ c["encs"][-1]
        grads["gru_Uz"] += daz.T @ h_prev
        grads["gru_bz"] += daz.sum(axis=0)
        dh_prev = dh_prev + daz @ w["gru_Uz"]
        de = dan @ w["gru_Wn"] + dar @ w["gru_Wr"] + daz @ w["gru_Wz"]

        for i in range(n_enc - 1, -1, -1):
            ei = c["encs"][i]
            dpre = de * (1.0 - ei**2)
            prev = c["encs"][i - 1] if i > 0 else c["x"]
            grads[f"enc{i}_W"] += dpre.T @ prev
            grads[f"enc{i}_b"] += dpre.sum(axis=0)
            de = dpre @ w[f"enc{i}_W"]
        gh_next = dh_prev
    return loss, grads


def _dec_input(cache: dict, i: int) -> np.ndarray:
    """Input that decoder layer i saw during the forward pass."""
    if i == 0:
        return cache["h_new"]
    d = cache["decs"][0]
    for j in range(1, i):
        d = cache["decs"][j] + d
    return d


@dataclass
class EpochStats:
    epoch: int
    train_nll: float
    val_nll: float


def _standardize_stats(arrs, floor=1e-6):
    flat = np.concatenate([a.reshape(-1, a.shape[-1]) for a in arrs])
    return flat.mean(axis=0), np.maximum(flat.std(axis=0), floor)


def _pack_batch(seqs_x, seqs_y):
    tmax = max(x.shape[0] for x in seqs_x)
    bsz = len(seqs_x)
    x = np.zeros((bsz, tmax, seqs_x[0].shape[1]))
    y = np.zeros((bsz, tmax, seqs_y[0].shape[1]))
    mask = np.zeros((bsz, tmax))
    for i, (xs, ys) in enumerate(zip(seqs_x, seqs_y)):
        x[i, : xs.shape[0]] = xs
        y[i, : ys.shape[0]] = ys
        mask[i, : xs.shape[0]] = 1.0
    return x, y, mask


def make_transition_sequences(sequences) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """(states, actions) per shot -> (inputs x_t=[s_t,a_t], targets Δs_{t+1})."""
    xs, ys = [], []
    for states, actions in sequences:
        states = np.asarray(states, dtype=float)
        actions = np.asarray(actions, dtype=float)
        if states.shape[0] < 2:
            continue
        xs.append(np.concatenate([states[:-1], actions[:-1]], axis=1))
        ys.append(np.diff(states, axis=0))
    return xs, ys


def train(sequences, cfg: RpnnConfig, seed: int = 0) -> tuple[RpnnParams, list[EpochStats]]:
    """Fit on a list of (states (T, ds), actions (T, da)) shot sequences.

    Holds out a validation fraction of whole sequences, steps AdamW on padded
    minibatches with exact BPTT, and returns the parameters at the best
    validation NLL together with the per-epoch training log.
    """
    xs, ys = make_transition_sequences(sequences)
    if len(xs) < 2:
        raise ValueError("need at least two usable sequences")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(xs))
    n_val = max(1, int(round(cfg.val_fraction * len(xs))))
    val_idx, train_idx = order[:n_val], order[n_val:]
    if train_idx.size == 0:
        train_idx, val_idx = val_idx, train_idx[:0]

    params = init_params(cfg, seed=int(rng.integers(2**31)))
    params.in_mean, params.in_scale = _standardize_stats([xs[i] for i in train_idx])
    params.tgt_mean, params.tgt_scale = _standardize_stats([ys[i] for i in train_idx])

    def std_xy(idx):
        return ([(xs[i] - params.in_mean) / params.in_scale for i in idx],
                [(ys[i] - params.tgt_mean) / params.tgt_scale for i in idx])

    tr_x, tr_y = std_xy(train_idx)
    va_x, va_y = std_xy(val_idx)
    val_batch = _pack_batch(va_x, va_y) if va_x else None

    w = params.weights
    adam_m = {k: np.zeros_like(v) for k, v in w.items()}
    adam_v = {k: np.zeros_like(v) for k, v in w.items()}
    t_adam = 0
    beta1, beta2, eps = 0.9, 0.999, 1e-8

    best_val = np.inf
    best_weights = {k: v.copy() for k, v in w.items()}
    since_best = 0
    log: list[EpochStats] = []

    for epoch in range(cfg.max_epochs):
        perm = rng.permutation(len(tr_x))
        train_losses = []
        for lo in range(0, len(perm), cfg.batch_size):
            idx = perm[lo: lo + cfg.batch_size]
            x, y, mask = _pack_batch([tr_x[i] for i in idx], [tr_y[i] for i in idx])
            loss, grads = _sequence_loss_and_grads(w, cfg, x, y, mask)
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"non-finite training loss at epoch {epoch}")
            gnorm = np.sqrt(sum(float(np.sum(g**2)) for g in grads.values()))
            if gnorm > cfg.grad_clip:
                for g in grads.values():
                    g *= cfg.grad_clip / gnorm
            t_adam += 1
            corr1 = 1.0 - beta1**t_adam
            corr2 = 1.0 - beta2**t_adam
            for k in w:
                adam_m[k] = beta1 * adam_m[k] + (1 - beta1) * grads[k]
                adam_v[k] = beta2 * adam_v[k] + (1 - beta2) * grads[k] ** 2
                update = (adam_m[k] / corr1) / (np.sqrt(adam_v[k] / corr2) + eps)
                w[k] -= cfg.learning_rate * (update + cfg.weight_decay * w[k])
            train_losses.append(loss)

        if val_batch is not None:
            val_loss, _ = _sequence_loss_and_grads(w, cfg, *val_batch, want_grads=False)
        else:
            val_loss = float(np.mean(train_losses))
        log.append(EpochStats(epoch=epoch, train_nll=float(np.mean(train_losses)), val_nll=float(val_loss)))

        if val_loss < best_val - 1e-12:
            best_val = val_loss
            best_weights = {k: v.copy() for k, v in w.items()}
            since_best = 0
        else:
            since_best += 1
            if since_best > cfg.patience:
                break

    params.weights = best_weights
    return params, log


def write_training_log(log: list[EpochStats], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        f.write("epoch,train_nll,val_nll\n")
        for row in log:
            f.write(f"{row.epoch},{row.train_nll!r},{row.val_nll!r}\n")
    return path


def gradient_check(params: RpnnParams, batch, epsilon: float = 1e-5,
                   max_entries_per_group: int | None = None, seed: int = 0) -> float:
    """Max relative error between BPTT gradients and central differences.

    ``batch`` is (x, y, mask) in standardized units. Every parameter group is
    checked; large groups can be subsampled via ``max_entries_per_group``.
    """
    x, y, mask = batch
    cfg = params.config
    w = params.weights
    _, grads = _sequence_loss_and_grads(w, cfg, x, y, mask)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, arr in w.items():
        flat = arr.reshape(-1)
        idxs = np.arange(flat.size)
        if max_entries_per_group is not None and flat.size > max_entries_per_group:
            idxs = rng.choice(flat.size, size=max_entries_per_group, replace=False)
        ganalytic = grads[name].reshape(-1)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + epsilon
            lp, _ = _sequence_loss_and_grads(w, cfg, x, y, mask, want_grads=False)
            flat[i] = orig - epsilon
            lm, _ = _sequence_loss_and_grads(w, cfg, x, y, mask, want_grads=False)
            flat[i] = orig
            gnum = (lp - lm) / (2.0 * epsilon)
            denom = max(abs(ganalytic[i]), abs(gnum), 1e-6)
            worst = max(worst, abs(ganalytic[i] - gnum) / denom)
    return worst


# ---------------------------------------------------------------------------
# autoregressive rollouts


def rollout(params: RpnnParams, classifier, s0, action_schedule, horizon: int,
            rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Sample one state path and the per-step instability probability.

    classifier.predict_prob(s, a) supplies the probability; the next state is
    the current state plus a draw from the predicted delta distribution.
    """
    cfg = params.config
    schedule = np.asarray(action_schedule, dtype=float)
    if schedule.shape[0] < horizon:
        raise SchemaError(f"schedule length {schedule.shape[0]} < horizon {horizon}")
    s = np.asarray(s0, dtype=float).copy()
    h = np.zeros(cfg.hidden_size)
    states = np.empty((horizon + 1, cfg.state_dim))
    probs = np.empty(horizon)
    states[0] = s
    for t in range(horizon):
        a = schedule[t]
        probs[t] = classifier.predict_prob(s, a)
        pred, h = forward(params, h, s, a)
        s = s + pred.mean + np.sqrt(pred.variance) * rng.standard_normal(cfg.state_dim)
        states[t + 1] = s
    return states, probs


def rollout_batch(params: RpnnParams, classifier, s0s, schedules, horizon: int,
                  rngs) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized rollouts; path b reproduces rollout() under rngs[b] exactly.

    Per-path noise is pre-drawn as (horizon, state_dim) blocks, which consumes
    each generator identically to the sequential per-step draws.
    """
    cfg = params.config
    s0s = np.asarray(s0s, dtype=float)
    schedules = np.asarray(schedules, dtype=float)
    bsz = s0s.shape[0]
    noise = np.stack([rng.standard_normal((horizon, cfg.state_dim)) for rng in rngs])
    s = s0s.copy()
    h = np.zeros((bsz, cfg.hidden_size))
    states = np.empty((bsz, horizon + 1, cfg.state_dim))
    probs = np.empty((bsz, horizon))
    states[:, 0] = s
    w = params.weights
    for t in range(horizon):
        a = schedules[:, t]
        probs[:, t] = classifier.predict_prob_batch(s, a)
        x = (np.concatenate([s, a], axis=1) - params.in_mean) / params.in_scale
        m, lv, h = _step_core(w, cfg, x, h)
        mean = m * params.tgt_scale + params.tgt_mean
        std = np.exp(0.5 * lv) * params.tgt_scale
        s = s + mean + std * noise[:, t]
        states[:, t + 1] = s
    return states, probs
