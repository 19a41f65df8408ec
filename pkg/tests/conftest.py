"""Shared fixtures: a small seeded corpus for model tests and the full
reference experiment (cached on disk under .cache/) for the acceptance suite."""

from __future__ import annotations

import numpy as np
import pytest

from echtune.pipeline import build_gp_dataset, build_step_dataset
from echtune.plant import generate_corpus
from echtune.reference import build_reference_models, reference_plant_config

CACHE_DIR = ".cache"


@pytest.fixture(scope="session")
def small_corpus():
    cfg = reference_plant_config()
    return generate_corpus(cfg, n_shots=40, campaigns=2, seed=424242)


@pytest.fixture(scope="session")
def small_step_dataset(small_corpus):
    return build_step_dataset(small_corpus)


@pytest.fixture(scope="session")
def small_gp_rows(small_corpus):
    return build_gp_dataset(small_corpus)


@pytest.fixture(scope="session")
def reference_models():
    return build_reference_models(cache_dir=CACHE_DIR)


def rng_for(name: str) -> np.random.Generator:
    """Stable per-test generator derived from the test name."""
    import hashlib

    h = int.from_bytes(hashlib.sha256(name.encode()).digest()[:8], "little")
    return np.random.default_rng(h)
