"""Hot-loop kernels with a compiled core and a NumPy fallback.

The compiled extension is optional; both backends produce bit-identical
integer output, so backend choice never affects results.
"""

import numpy as np

from qsid._kernels import _pairwise_py

try:
    from qsid._kernels import _pairwise_c
except ImportError:
    _pairwise_c = None

BACKEND = "compiled" if _pairwise_c is not None else "python"


def identity_score_matrix(units: np.ndarray) -> np.ndarray:
    """Pairwise count of identical grain-unit scores, (n, p) -> (n, n) int32."""
    units = np.ascontiguousarray(units, dtype=np.int64)
    if _pairwise_c is not None:
        return _pairwise_c.identity_score_matrix(units)
    return _pairwise_py.identity_score_matrix(units)


def backends() -> dict:
    """Importable kernel implementations keyed by name (for benchmarks)."""
    found = {"python": _pairwise_py.identity_score_matrix}
    if _pairwise_c is not None:
        found["compiled"] = _pairwise_c.identity_score_matrix
    return found
