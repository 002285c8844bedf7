import numpy as np
import pytest

from fitann import (AttributedDataset, CostParams, WorkloadTally,
                    attribute_sets, parse)

# Eight-row dataset exercising the whole pipeline: cardinalities 3 (A),
# 4 (A|B and D), 5 (A|B|C), 1 (F), with D&(C|E) matching exactly 3 rows.
WORKED_ROWS = [
    {"A", "E", "T1", "X"},
    {"D", "E", "P", "R"},
    {"A", "T2", "X"},
    {"A"},
    {"B", "C"},
    {"C", "D", "P", "Q"},
    {"D", "E", "P", "Q", "R"},
    {"D", "Q", "R", "F"},
]

# Back-solved occurrence counts: with M_inf=10, B=165, gamma=1, cor=1, k=1
# the greedy picks A, D, A|B|C at unit benefits 0.2535 / 0.2167 / 0.2079.
WORKED_TALLY = [
    ("A", 2),
    ("A|B", 1),
    ("A|B|C", 1),
    ("D", 1),
    ("D&P", 1),
    ("D&Q", 1),
    ("D&R", 1),
    ("C|(A&X)", 2),
    ("C|(A&T1)", 1),
    ("C|(A&T2)", 1),
]


@pytest.fixture(scope="session")
def worked_ds() -> AttributedDataset:
    rng = np.random.default_rng(7)
    return AttributedDataset(
        vectors=rng.standard_normal((8, 4)).astype(np.float32),
        attributes=attribute_sets(WORKED_ROWS),
    )


@pytest.fixture(scope="session")
def worked_tally() -> WorkloadTally:
    return WorkloadTally([(parse(t), c) for t, c in WORKED_TALLY])


@pytest.fixture(scope="session")
def worked_params() -> CostParams:
    return CostParams(m_inf=10, sef_inf=1, k=1, gamma=1.0, cor=1.0, budget_b=165)
