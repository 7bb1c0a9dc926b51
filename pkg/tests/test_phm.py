import numpy as np
import pytest

from sdcphm.markowitz import ModelVariant, build_problem, synthesize_market
from sdcphm.model import PrimalDualPoint, initial_point, make_anchor, natural_residual, plain_anchor
from sdcphm.phm import (BUDGET_STATUS, CONVERGED_STATUS, PHMState, aggregate, consensus_mask, from_scenario_rows,
                        phm_step, run_phm, to_scenario_rows)
from sdcphm.sdc import SDCConfig
from sdcphm.verify import model_d_oracle

from conftest import generic_problem


def markowitz(label, n, K, seed):
    data = synthesize_market(n, K, seed)
    return data, build_problem(data, ModelVariant.named(label))


def test_aggregation_two_scenarios():
    _, prob = markowitz("D", 2, 2, 0)
    state = PHMState.start(prob, initial_point(prob))
    hat = state.breve.copy()
    S = prob.scenario_layout
    hat[:, S["x"]] = [[1.0, 0.0], [0.0, 1.0]]
    new = aggregate(prob, state, hat)
    assert np.allclose(new.point(prob).x, [0.5, 0.5])
    assert np.allclose(prob.probs @ new.mult, 0.0)
    assert np.allclose(new.mult[:, S["x"]], [[0.5, -0.5], [-0.5, 0.5]])
    assert new.nu == 1


def test_single_scenario_keeps_multipliers_zero():
    _, prob = markowitz("D", 3, 1, 0)
    state = PHMState.start(prob, initial_point(prob))
    for _ in range(3):
        state, _ = phm_step(prob, plain_anchor(prob), state)
        assert np.all(state.mult == 0.0)
        assert np.allclose(state.point(prob).x, state.hat[0, prob.scenario_layout["x"]])


def test_scenario_row_roundtrip():
    prob = generic_problem(2)
    rng = np.random.default_rng(0)
    pt = PrimalDualPoint.from_vector(prob, prob.project_D(rng.standard_normal(prob.dim)))
    back = from_scenario_rows(prob, to_scenario_rows(prob, pt))
    assert np.allclose(back.stack(), pt.stack())
    assert consensus_mask(prob).sum() == prob.m1 + prob.n1 + prob.s1


@pytest.mark.xfail(strict=True, reason="this data needs about 750 steps; the multiplier blocks of each "
                   "scenario converge at the sigma = 1 proximal-point rate")
def test_model_d_residual_below_1e6_within_500_steps():
    _, prob = markowitz("D", 5, 8, 1)
    res = run_phm(prob, plain_anchor(prob), 1e-6, budget=500, start=initial_point(prob))
    assert res.status == CONVERGED_STATUS and res.residual <= 1e-6


def test_model_d_residual_below_1e6_eventually():
    _, prob = markowitz("D", 5, 8, 1)
    res = run_phm(prob, plain_anchor(prob), 1e-6, budget=2000, start=initial_point(prob))
    assert res.status == CONVERGED_STATUS and res.steps <= 1000
    resid = [r["residual"] for r in res.trace]
    # the residual decreases overall: each 100-step window ends lower than it started
    assert all(b < a for a, b in zip(resid[::100], resid[100::100]))


def test_model_d_matches_active_set_oracle():
    data, prob = markowitz("D", 3, 2, 3)
    res = run_phm(prob, plain_anchor(prob), 1e-9, budget=5000, start=initial_point(prob))
    x, ys = model_d_oracle(data)
    assert np.max(np.abs(res.point.x - x)) <= 1e-6
    assert np.max(np.abs(res.point.ys - ys)) <= 1e-6


def test_model_c_matches_conic_solver():
    cp = pytest.importorskip("cvxpy")
    data, prob = markowitz("C", 3, 2, 4)
    res = run_phm(prob, plain_anchor(prob), 1e-8, budget=5000, start=initial_point(prob))
    n, K = data.n, data.K
    x, Y = cp.Variable(n), cp.Variable((K, n))
    obj = cp.quad_form(x, cp.psd_wrap(data.Q1)) + sum(cp.quad_form(Y[i], cp.psd_wrap(data.Q2[i])) for i in range(K)) / K
    cons = [cp.sum(x) == 1, data.rbar1 @ x >= data.r1_min, x >= 0, Y >= 0]
    for i in range(K):
        cons += [cp.sum(Y[i]) == 1, data.rbar2[i] @ Y[i] >= data.r2_min[i],
                 cp.norm(x - Y[i]) <= data.tau_soc[i]]
    cp.Problem(cp.Minimize(obj), cons).solve(solver="CLARABEL")
    assert np.max(np.abs(res.point.x - x.value)) <= 1e-4
    assert np.max(np.abs(res.point.ys - Y.value)) <= 1e-4


def test_nonanticipativity_every_iteration():
    _, prob = markowitz("A", 4, 5, 2)
    anc = make_anchor(prob, np.full(4, 0.25), np.full((5, 4), 0.25), 0.3, 1e-4, 1e-4)
    res = run_phm(prob, anc, 1e-12, budget=60, start=initial_point(prob))
    assert res.status == BUDGET_STATUS and len(res.trace) == 61
    assert max(r["nonanticipativity"] for r in res.trace) <= 1e-10


def test_returns_immediately_at_solution():
    _, prob = markowitz("D", 3, 2, 3)
    first = run_phm(prob, plain_anchor(prob), 1e-9, budget=5000, start=initial_point(prob))
    again = run_phm(prob, plain_anchor(prob), 1e-8, budget=5000, start=first.point)
    assert again.steps == 0 and again.status == CONVERGED_STATUS


def test_value_cap_blocks_acceptance():
    _, prob = markowitz("D", 3, 2, 3)
    start = initial_point(prob)
    res = run_phm(prob, plain_anchor(prob), 10.0, value_cap=-1.0, budget=5, start=start)
    assert res.status == BUDGET_STATUS


def test_budget_returns_best_residual_iterate():
    _, prob = markowitz("C", 3, 3, 5)
    res = run_phm(prob, plain_anchor(prob), 1e-14, budget=20, start=initial_point(prob))
    best = min(r["residual"] for r in res.trace)
    _, r = natural_residual(prob, plain_anchor(prob), res.point.stack())
    assert res.status == BUDGET_STATUS and r == pytest.approx(best)


def test_stop_threshold_default():
    for K in (5, 16, 100):
        cfg = SDCConfig().resolved(K)
        assert cfg.eta1 * cfg.rho(0) == pytest.approx(K / 5)


def test_budget_must_be_positive():
    _, prob = markowitz("D", 2, 1, 0)
    with pytest.raises(ValueError):
        run_phm(prob, plain_anchor(prob), 1e-6, budget=0, start=initial_point(prob))
