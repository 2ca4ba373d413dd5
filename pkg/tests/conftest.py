import numpy as np
import pytest

# 3x4 example profile: rows are agents 1..3, columns goods 1..4
EXAMPLE_PROFILE = np.array(
    [
        [1.0, 0.0, 3.0, 2.0],
        [3.0, 2.0, 1.0, 0.0],
        [4.0, 3.0, 2.0, 1.0],
    ]
)


def separated_profile(rng, n, m, step=0.05):
    """Rows of distinct multiples of ``step`` in [0, 1]: no ties, every gap >= step."""
    levels = int(round(1 / step)) + 1
    assert m <= levels
    return np.array([rng.choice(levels, size=m, replace=False) * step for _ in range(n)])


@pytest.fixture
def example_profile():
    return EXAMPLE_PROFILE.copy()
