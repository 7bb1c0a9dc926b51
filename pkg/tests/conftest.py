import numpy as np
import pytest

from sdcphm.cones import SOC, ConeSpec, NonNeg
from sdcphm.markowitz import MarketData
from sdcphm.model import AffineSecondStage, BatchedQuadratic, Quadratic, TwoStageProblem
from sdcphm.prox import l0_penalty, l1_penalty


def generic_problem(seed=0, K=3, m1=3, m2=2, first=True, second=True):
    """Small random convex problem with an SOC row, an l0 first stage and l1 second stage."""
    rng = np.random.default_rng(seed)
    M1 = rng.standard_normal((m1, m1))
    H2 = np.array([(lambda M: M @ M.T)(rng.standard_normal((m2, m2))) for _ in range(K)])
    stage2 = AffineSecondStage(
        A1=rng.standard_normal((K, 1, m2)), A2=rng.standard_normal((K, 1, m1)), d=rng.standard_normal((K, 1)),
        W=rng.standard_normal((K, 3, m2)), T=rng.standard_normal((K, 3, m1)), h=rng.standard_normal((K, 3)),
        cone=ConeSpec([SOC(3)]))
    return TwoStageProblem(
        m1=m1, m2=m2, probs=rng.dirichlet(np.ones(K)),
        first_obj=Quadratic(M1 @ M1.T, rng.standard_normal(m1)),
        second_obj=BatchedQuadratic(H2, rng.standard_normal((K, m2))),
        A=np.ones((1, m1)), a=[1.0], B=rng.standard_normal((2, m1)), b=rng.standard_normal(2),
        cone1=ConeSpec([NonNeg(2)]), second=stage2,
        x_cone=ConeSpec.nonneg(m1),
        penalty_first=l0_penalty(0.05) if first else None,
        penalty_second=l1_penalty(0.1) if second else None)


def identity_market(n=2, K=1, rbar1=None, r1_min=0.0):
    """Hand-built market with Q = I everywhere."""
    rbar1 = np.linspace(0.5, 1.5, n) if rbar1 is None else np.asarray(rbar1, float)
    return MarketData(n, K, rbar1, np.eye(n), np.tile(rbar1, (K, 1)), np.tile(np.eye(n), (K, 1, 1)),
                      r1_min, np.full(K, r1_min), np.full(K, 0.2))


@pytest.fixture
def gen_prob():
    return generic_problem()
