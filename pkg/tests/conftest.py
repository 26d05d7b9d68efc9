import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from msquant import FloatMatrix, build_plan

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture
def data_dir() -> Path:
    return DATA_DIR


def plan_from_cmax(cmax, bits=8, alpha=2, num_groups=3, chunk_rows=256):
    """Plan whose chunk has exactly these per-channel absolute maxima (bias 0)."""
    cmax = np.asarray(cmax, dtype=np.float64)
    sample = FloatMatrix(np.vstack([cmax, -cmax]))
    return build_plan(
        [sample], bits=bits, alpha=alpha, num_groups=num_groups, chunk_rows=chunk_rows
    )
