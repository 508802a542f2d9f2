"""NumPy fallback for the pairwise identity-score kernel."""

import numpy as np


def identity_score_matrix(units: np.ndarray) -> np.ndarray:
    """Count identical entries for every row pair of an (n, p) unit matrix.

    Returns a symmetric (n, n) int32 matrix with zeros on the diagonal.
    """
    n = units.shape[0]
    out = np.zeros((n, n), dtype=np.int32)
    for s in range(units.shape[1]):
        col = units[:, s]
        out += col[:, None] == col[None, :]
    np.fill_diagonal(out, 0)
    return out
