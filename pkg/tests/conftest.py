"""Shared fixtures: the deterministic 4x4 rank-1 completion problem used as a
golden case throughout the suite, plus small helpers."""

import numpy as np
import pytest

from hmirls.measurements import MeasurementOperator, ProblemInstance

# Rank-1 ground truth outer([1, 10, -2, 0.1], [1, 2, 3, 4]) observed at the
# seven positions (2,1),(4,1),(3,2),(4,2),(4,3),(1,4),(2,4) in 1-based
# notation. m equals the rank-1 degree count 1*(4+4-1) = 7, so the problem
# is determined with zero oversampling.
GOLDEN_LEFT = np.array([1.0, 10.0, -2.0, 0.1])
GOLDEN_RIGHT = np.array([1.0, 2.0, 3.0, 4.0])
GOLDEN_ROWS = np.array([1, 3, 2, 3, 3, 0, 1])
GOLDEN_COLS = np.array([0, 0, 1, 1, 2, 3, 3])


def make_golden_instance() -> ProblemInstance:
    X0 = np.outer(GOLDEN_LEFT, GOLDEN_RIGHT)
    op = MeasurementOperator(
        kind="completion", d1=4, d2=4, rows=GOLDEN_ROWS.copy(), cols=GOLDEN_COLS.copy()
    )
    return ProblemInstance(
        d1=4, d2=4, rank=1, operator=op, y=op.apply(X0), ground_truth=X0
    )


@pytest.fixture(scope="session")
def golden():
    return make_golden_instance()
