import numpy as np
import pytest

from smooth_lsvi import harmonics as ha


@pytest.fixture(scope="session")
def quad1():
    return ha.trapezoid_quadrature(1)


@pytest.fixture(scope="session")
def quad2():
    return ha.trapezoid_quadrature(2)


def random_trig_poly(rng, d, degree, amplitude=1.0):
    """Random polynomial in the max-norm span of the given degree.

    Returns (callable on (n, d) points, coefficient vector, feature map).
    """
    fm = ha.FeatureMap(
        ha.enumerate_indices(d, degree, ha.NormKind.LINF), ha.Normalization.RAW
    )
    theta = rng.uniform(-amplitude, amplitude, fm.n_features)

    def f(Z):
        return ha.feature_matrix(fm, np.atleast_2d(Z)) @ theta

    return f, theta, fm
