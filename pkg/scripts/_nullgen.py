"""Deterministic synthetic null-exam generator family.

Builds CopulaModel instances from handcrafted multinomial marginals: a mix
of easy, medium and hard questions over partial-credit supports, with an
equicorrelated latent structure. Used to produce the bundled calibration
data; the test suite builds its own variants the same way.
"""

import numpy as np

from qsid.synthetic import CopulaModel


def marginal_family(p: int, seed: int, grain_units=(0, 25, 50, 75, 100)):
    """Per-question (support, probs) with complexities around 0.3-0.6."""
    rng = np.random.default_rng(seed)
    supports, probs = [], []
    for _ in range(p):
        k = int(rng.integers(3, len(grain_units) + 1))
        support = np.array(grain_units[:k], dtype=np.int64)
        difficulty = rng.uniform(0.25, 0.85)
        weights = difficulty ** np.arange(k)[::-1].astype(float)
        weights = weights + rng.uniform(0.05, 0.2, size=k)
        theta = weights / weights.sum()
        supports.append(support)
        probs.append(theta)
    return supports, probs


def null_model(n: int, p: int, seed: int, rho: float = 0.25, cohorts: int = 1) -> CopulaModel:
    supports, probs = marginal_family(p, seed)
    corr = np.full((p, p), rho)
    np.fill_diagonal(corr, 1.0)
    base, rem = divmod(n, cohorts)
    sizes = [base + (1 if k < rem else 0) for k in range(cohorts)]
    return CopulaModel.from_marginals(sizes, supports, probs, corr)


def model_complexity(model: CopulaModel) -> float:
    """Theoretical complexity of the marginals (collision probability)."""
    total = 0.0
    for theta in model.cohorts[0].probs:
        total += -np.log10(float(np.square(theta).sum()))
    return total
