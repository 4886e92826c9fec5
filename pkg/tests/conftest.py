import numpy as np
import pytest


def tv_distance(f1, f2, nodes):
    """Total-variation distance between two densities on a shared grid."""
    p1 = np.exp(f1.log_pdf(nodes))
    p2 = np.exp(f2.log_pdf(nodes))
    return 0.5 * np.trapezoid(np.abs(p1 - p2), nodes)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
