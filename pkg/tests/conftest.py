import numpy as np
import pytest

from bcops.data import Dataset, generate_paper_sim
from bcops.learners import LearnerConfig


@pytest.fixture(scope="session")
def glm():
    return LearnerConfig(kind="glm", seed=0)


@pytest.fixture(scope="session")
def paper_sim():
    """One fixed draw of the benchmark simulation, shared read-only."""
    return generate_paper_sim(0)


def two_blob_data(rng, n_per=100, sep=10.0, p=1):
    """Well-separated pair of Gaussian classes (shared test helper)."""
    pos = rng.standard_normal((n_per, p))
    pos[:, 0] += sep / 2
    neg = rng.standard_normal((n_per, p))
    neg[:, 0] -= sep / 2
    return Dataset(pos), Dataset(neg)


def grid_search_oracle(design, response, step=1e-3):
    """Brute-force minimizer of ||response - design @ pi||^2 over the
    grid {0, step, ...}^2 intersected with {pi >= 0, sum <= 1}."""
    ticks = np.arange(0.0, 1.0 + step / 2, step)
    best, best_val = None, np.inf
    for a in ticks:
        bs = ticks[ticks <= 1.0 - a + 1e-12]
        pts = np.column_stack([np.full(bs.size, a), bs])
        vals = ((response[None, :] - pts @ design.T) ** 2).sum(axis=1)
        i = int(np.argmin(vals))
        if vals[i] < best_val:
            best_val, best = vals[i], pts[i]
    return best
