"""Trajectory and shot-summary records plus their on-disk formats.

Corpus format: one JSON object per time step (shot id, campaign, step index,
named scalar channels, named profile channels, tearing label), accompanied by
a manifest with the channel schema, generating-config snapshot, and seed.
The shot-level table is a flat CSV consumed by the replay harness and the
operator service.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import SchemaError
from .profiles import EchParams


@dataclass
class Trajectory:
    """One shot: per-step channels at a fixed time step, with tearing labels."""

    shot_id: str
    campaign: int
    step_seconds: float
    scalars: dict[str, np.ndarray]            # each (T,)
    profiles: dict[str, np.ndarray]           # each (T, R)
    radial: dict[str, np.ndarray]             # radial grid per profile channel
    tm_label: np.ndarray                      # (T,) 0/1, monotone (latch)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.tm_label)
        for name, v in self.scalars.items():
            if len(v) != n:
                raise SchemaError(f"scalar channel {name!r} length {len(v)} != {n}")
        for name, v in self.profiles.items():
            if v.shape[0] != n:
                raise SchemaError(f"profile channel {name!r} has {v.shape[0]} steps, expected {n}")
            if name not in self.radial or self.radial[name].shape[0] != v.shape[1]:
                raise SchemaError(f"profile channel {name!r} lacks a matching radial grid")

    @property
    def n_steps(self) -> int:
        return len(self.tm_label)

    @property
    def duration_seconds(self) -> float:
        return self.n_steps * self.step_seconds

    def first_tm_index(self) -> int | None:
        hits = np.nonzero(self.tm_label)[0]
        return int(hits[0]) if hits.size else None

    def t_tm_seconds(self) -> tuple[float, bool]:
        """Seconds from shot start to first tearing label, censored at shot end."""
        idx = self.first_tm_index()
        if idx is None:
            return self.duration_seconds, True
        return (idx + 1) * self.step_seconds, False


@dataclass
class TrajectorySet:
    shots: list[Trajectory]
    config_snapshot: dict
    seed: int

    def __len__(self) -> int:
        return len(self.shots)

    def __iter__(self):
        return iter(self.shots)


@dataclass(frozen=True)
class ShotSummary:
    """The shot-level regression row: (mean flat-top pressure, ECH fit, time to TM)."""

    shot_id: str
    beta_n_bar: float
    ech: EchParams
    t_tm_seconds: float
    censored: bool
    campaign: int


# ---------------------------------------------------------------------------
# corpus (step-level) serialization


def _step_record(traj: Trajectory, t: int) -> dict:
    return {
        "shot_id": traj.shot_id,
        "campaign": traj.campaign,
        "t": t,
        "state": {k: float(v[t]) for k, v in traj.scalars.items() if k in traj.meta.get("state_channels", traj.scalars)},
        "actuators": {k: float(v[t]) for k, v in traj.scalars.items() if k in traj.meta.get("actuator_channels", ())},
        "profiles": {k: [float(x) for x in v[t]] for k, v in traj.profiles.items()},
        "tm_label": int(traj.tm_label[t]),
    }


def write_corpus(corpus: TrajectorySet, directory: str | Path) -> Path:
    """Write line-delimited step records plus a manifest; returns the directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    shot_meta = {}
    with open(directory / "steps.jsonl", "w") as f:
        for traj in corpus:
            for t in range(traj.n_steps):
                f.write(json.dumps(_step_record(traj, t), sort_keys=True) + "\n")
            shot_meta[traj.shot_id] = {
                "campaign": traj.campaign,
                "step_seconds": traj.step_seconds,
                "meta": _jsonable(traj.meta),
            }
    first = corpus.shots[0] if corpus.shots else None
    manifest = {
        "schema": {
            "state_channels": list(first.meta.get("state_channels", [])) if first else [],
            "actuator_channels": list(first.meta.get("actuator_channels", [])) if first else [],
            "profile_channels": {k: [float(x) for x in first.radial[k]] for k in first.profiles} if first else {},
        },
        "config": corpus.config_snapshot,
        "seed": corpus.seed,
        "shots": shot_meta,
    }
    with open(directory / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return directory


def read_corpus(directory: str | Path) -> TrajectorySet:
    directory = Path(directory)
    with open(directory / "manifest.json") as f:
        manifest = json.load(f)
    per_shot: dict[str, list[dict]] = {}
    order: list[str] = []
    with open(directory / "steps.jsonl") as f:
        for line in f:
            rec = json.loads(line)
            sid = rec["shot_id"]
            if sid not in per_shot:
                per_shot[sid] = []
                order.append(sid)
            per_shot[sid].append(rec)
    shots = []
    schema = manifest["schema"]
    for sid in order:
        rows = sorted(per_shot[sid], key=lambda r: r["t"])
        info = manifest["shots"][sid]
        scalars = {}
        for k in schema["state_channels"]:
            scalars[k] = np.array([r["state"][k] for r in rows])
        for k in schema["actuator_channels"]:
            scalars[k] = np.array([r["actuators"][k] for r in rows])
        profiles = {k: np.array([r["profiles"][k] for r in rows]) for k in schema["profile_channels"]}
        radial = {k: np.array(g) for k, g in schema["profile_channels"].items()}
        shots.append(Trajectory(
            shot_id=sid,
            campaign=info["campaign"],
            step_seconds=info["step_seconds"],
            scalars=scalars,
            profiles=profiles,
            radial=radial,
            tm_label=np.array([r["tm_label"] for r in rows], dtype=np.int8),
            meta=info["meta"],
        ))
    return TrajectorySet(shots=shots, config_snapshot=manifest["config"], seed=manifest["seed"])


def corpus_digest(corpus: TrajectorySet) -> str:
    """Stable content hash of every step record, for determinism checks."""
    h = hashlib.sha256()
    for traj in corpus:
        for t in range(traj.n_steps):
            h.update(json.dumps(_step_record(traj, t), sort_keys=True).encode())
    return h.hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, EchParams):
        return {"mu": obj.mu, "sigma": obj.sigma, "w": obj.w}
    return obj


# ---------------------------------------------------------------------------
# shot-level table serialization

GP_DATASET_HEADER = ["shot_id", "beta_n_bar", "mu_q", "sigma_q", "w_q", "t_tm_seconds", "censored", "campaign"]


def write_gp_dataset(rows: list[ShotSummary], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(GP_DATASET_HEADER)
        for r in rows:
            wr.writerow([
                r.shot_id, repr(r.beta_n_bar), repr(r.ech.mu), repr(r.ech.sigma),
                repr(r.ech.w), repr(r.t_tm_seconds), int(r.censored), r.campaign,
            ])
    return path


def read_gp_dataset(path: str | Path) -> list[ShotSummary]:
    rows = []
    with open(path, newline="") as f:
        rd = csv.DictReader(f)
        if rd.fieldnames != GP_DATASET_HEADER:
            raise SchemaError(f"unexpected columns {rd.fieldnames} in {path}")
        for rec in rd:
            rows.append(ShotSummary(
                shot_id=rec["shot_id"],
                beta_n_bar=float(rec["beta_n_bar"]),
                ech=EchParams(float(rec["mu_q"]), float(rec["sigma_q"]), float(rec["w_q"])),
                t_tm_seconds=float(rec["t_tm_seconds"]),
                censored=bool(int(rec["censored"])),
                campaign=int(rec["campaign"]),
            ))
    return rows
