import numpy as np
import pytest

from dpgrad import GroundTruth, Hyperparams, ProblemDims

NU = 2**-6
BIG_D = 2.0


def practical(dims, epsilon=1e-3, **kw):
    return Hyperparams.practical(dims, BIG_D, NU, epsilon, **kw)


def orthogonal_two_task_instance(r):
    """Two unit-norm targets on disjoint axes; rank 2 regardless of r."""
    dims = ProblemDims(d=4, r=r, k=2)
    w1 = np.zeros(4)
    w1[0] = 64 * NU
    w2 = np.zeros(4)
    w2[1] = 64 * NU
    return GroundTruth(
        dims=dims,
        big_d=BIG_D,
        nu=NU,
        w_list=np.vstack([w1, w2]),
        novel_flags=(True, True),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(0)
