import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from qsid.exam_data import ScoreMatrix


@pytest.fixture
def make_matrix():
    def _make(units, ids=None, labels=None, grain=None):
        units = np.asarray(units, dtype=np.int64)
        n, p = units.shape
        kwargs = {}
        if grain is not None:
            kwargs["grain"] = grain
        return ScoreMatrix(
            student_ids=tuple(ids) if ids else tuple(f"s{i:02d}" for i in range(n)),
            question_labels=tuple(labels) if labels else tuple(f"q{j + 1}" for j in range(p)),
            units=units,
            **kwargs,
        )

    return _make
