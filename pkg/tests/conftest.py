import zlib

import numpy as np
import pytest

from bellsim import ExperimentConfig
from bellsim.stats import CountsTable


def spawn_seed(*ids) -> int:
    """Stable derived seed for independent Monte Carlo repetitions."""
    entropy = [
        zlib.crc32(i.encode()) if isinstance(i, str) else int(i) for i in ids
    ]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def table_from_probs(probs, events_per_setting) -> CountsTable:
    """Counts proportional to a probability table (rounded, no sampling)."""
    probs = np.asarray(probs, dtype=float)
    counts = np.rint(probs * float(events_per_setting)).astype(np.int64)
    return CountsTable(counts)


@pytest.fixture
def default_config() -> ExperimentConfig:
    return ExperimentConfig()


@pytest.fixture(scope="session")
def mle_corpus():
    """Frozen corpus of 50 random small tables for the oracle comparison."""
    rng = np.random.default_rng(2027)
    tables = []
    for _ in range(50):
        n = rng.integers(100, 900)
        tab = np.empty((2, 2, 4))
        for x in range(2):
            for y in range(2):
                p = rng.dirichlet(np.ones(4) * rng.uniform(0.5, 3.0))
                tab[x, y] = rng.poisson(n * p)
        # keep every setting populated so the likelihood is defined
        tab += tab.sum(axis=2, keepdims=True) == 0
        tables.append(CountsTable(tab.reshape(2, 2, 2, 2).astype(np.int64)))
    return tables
