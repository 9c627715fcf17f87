import math

import numpy as np
import pytest

GAUSS2 = "exp(-(x1^2 + x2^2)/2)/(2*pi)"
NORMAL1 = "exp(-x1^2/2)/sqrt(2*pi)"
NOISE = "exp(-x2^2/2)/sqrt(2*pi)"

RATIO_LIK = "abs(x1)*exp(-x1^2*x2^2/2)/sqrt(2*pi)"
SUM_LIK = "exp(-(x2 - x1)^2/2)/sqrt(2*pi)"

# joint densities of (X, Z = Y/X) and (X, W = X + Y)
RATIO_JOINT = "abs(x1)/(2*pi)*exp(-x1^2*(1 + x2^2)/2)"
SUM_JOINT = "exp(-x1^2/2 - (x2 - x1)^2/2)/(2*pi)"


def ratio_density(u):
    return np.abs(u) * np.exp(-np.asarray(u) ** 2)


def sum_density(u):
    return np.exp(-np.asarray(u) ** 2) / math.sqrt(math.pi)


# total variation between the two guiding-example densities, from
# 50-digit adaptive quadrature over the whole line (mpmath), computed
# before any package code existed
TV_ORACLE = 0.302439865611854


@pytest.fixture
def grid():
    return np.linspace(-3.0, 3.0, 601)
