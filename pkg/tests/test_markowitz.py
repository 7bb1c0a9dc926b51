import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdcphm.markowitz import (MarketData, ModelVariant, build_problem, compute_rmin, estimate_first_stage,
                              load_returns_csv, market_from_returns, psd_floor, synthesize_market)
from sdcphm.model import eval_H_L, initial_point, make_anchor, verify_monotone
from sdcphm.sdc import SDCConfig, run_direct_phm
from sdcphm.verify import model_d_oracle

from conftest import identity_market


# ---------------------------------------------------------------------------
# synthetic data


def test_synthesis_is_deterministic():
    a, b = synthesize_market(6, 4, 11), synthesize_market(6, 4, 11)
    assert a.to_dict() == b.to_dict()
    assert not np.array_equal(a.Q2, synthesize_market(6, 4, 12).Q2)


@pytest.mark.parametrize("seed", range(5))
def test_correlations_in_range_and_psd(seed):
    data = synthesize_market(8, 10, seed)
    for Q in data.Q2:
        d = np.sqrt(np.diag(Q))
        C = Q / np.outer(d, d)
        off = C[~np.eye(data.n, dtype=bool)]
        assert np.all(np.abs(off) <= 0.5 + 1e-9)
        assert np.linalg.eigvalsh(Q).min() >= 1e-9 - 1e-12
    assert np.all((data.rbar2 >= 0.5) & (data.rbar2 <= 1.5))


def test_volatilities_near_ten_percent():
    data = synthesize_market(20, 50, 0)
    vol = np.sqrt(np.einsum("kii->ki", data.Q2))
    # tenths units: a 10% volatility is 1.0
    assert 0.5 < np.median(vol) < 2.0


def test_unit_systems_rescale_covariances():
    pct = synthesize_market(4, 3, 2, units="percent")
    frac = synthesize_market(4, 3, 2, units="fraction")
    assert np.allclose(pct.Q1, frac.Q1 * 1e4)
    assert np.allclose(pct.rbar2, frac.rbar2)
    with pytest.raises(ValueError):
        synthesize_market(4, 3, 2, units="basis-points")


def test_synthesis_rejects_small_sizes():
    with pytest.raises(ValueError):
        synthesize_market(1, 3, 0)
    with pytest.raises(ValueError):
        synthesize_market(3, 0, 0)


def test_market_roundtrip(tmp_path):
    data = synthesize_market(3, 2, 4)
    data.save(tmp_path / "m.json")
    back = MarketData.load(tmp_path / "m.json")
    assert np.array_equal(back.Q2, data.Q2) and back.r1_min == data.r1_min and back.meta == data.meta


def test_psd_floor_lifts_negative_eigenvalues():
    M = np.diag([1.0, -2.0, 0.0])
    out = psd_floor(M)
    assert np.linalg.eigvalsh(out).min() >= 1e-9 - 1e-15
    assert out[0, 0] == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# estimation


def test_constant_returns_give_eps_identity():
    mean, Q = estimate_first_stage(np.ones((5, 3)) * 0.02)
    assert np.allclose(mean, 0.02)
    assert np.array_equal(Q, 1e-9 * np.eye(3))


def test_two_observations_by_hand():
    mean, Q = estimate_first_stage(np.array([[0.0], [2.0]]))
    assert mean == pytest.approx([1.0])
    assert Q[0, 0] == pytest.approx(2 + 1e-9, abs=1e-15)


def test_covariance_matches_numpy():
    R = np.random.default_rng(0).standard_normal((40, 5))
    _, Q = estimate_first_stage(R)
    assert np.allclose(Q, np.cov(R, rowvar=False) + 1e-9 * np.eye(5), atol=1e-12, rtol=0)


def test_estimation_needs_two_rows():
    with pytest.raises(ValueError):
        estimate_first_stage(np.ones((1, 3)))


@pytest.mark.parametrize("rbar, expected", [([0.1, 0.3], 0.19), ([-0.1, 0.1], 0.0), ([-0.1, -0.3], -0.21)])
def test_rmin(rbar, expected):
    r1, r2 = compute_rmin(rbar, [rbar])
    assert r1 == pytest.approx(expected, abs=1e-15)
    assert r2[0] == pytest.approx(expected, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=6))
def test_equal_weights_satisfy_return_floor(rbar):
    r1, _ = compute_rmin(rbar, [rbar])
    assert np.mean(rbar) >= r1


# ---------------------------------------------------------------------------
# csv loading


def test_load_two_by_one(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("0.01\n-0.02")
    assert np.array_equal(load_returns_csv(p), [[0.01], [-0.02]])


def test_header_is_skipped(tmp_path):
    R = np.random.default_rng(1).standard_normal((6, 3))
    p = tmp_path / "r.csv"
    np.savetxt(p, R, delimiter=",", header="AAA,BBB,CCC", comments="")
    assert np.allclose(load_returns_csv(p), R)


@pytest.mark.parametrize("text", ["", "a,b\n", "1,2\n3\n", "1,2\n3,x\n"])
def test_bad_csv(tmp_path, text):
    p = tmp_path / "r.csv"
    p.write_text(text)
    with pytest.raises(ValueError):
        load_returns_csv(p)


def test_market_from_returns_converts_units():
    R = np.random.default_rng(2).standard_normal((30, 4))
    data = market_from_returns(R, 3, 0)
    assert np.allclose(data.rbar1, R.mean(axis=0) / 10)
    assert data.meta["source"] == "csv"


# ---------------------------------------------------------------------------
# problem assembly


@pytest.mark.parametrize("label, extra", [("A", 2), ("B", 1), ("C", 2), ("D", 1)])
def test_variant_dimensions(label, extra):
    n, K = 4, 3
    prob = build_problem(synthesize_market(n, K, 0), ModelVariant.named(label))
    # x, y_i, alpha1, alpha2, pi1_i and one or two inequality multipliers per scenario
    assert prob.dim == n + K * n + 1 + 1 + K + extra * K
    assert (prob.penalty_first is not None) == (label in "AB")


def test_variant_labels():
    for label in "ABCD":
        assert ModelVariant.named(label).label == label
    with pytest.raises(ValueError):
        ModelVariant.named("E")


def test_non_psd_covariance_is_rejected():
    data = synthesize_market(3, 2, 0)
    data.Q1 = -np.eye(3)
    with pytest.raises(ValueError):
        build_problem(data, ModelVariant.named("D"))


def test_ball_multiplier_couples_first_block():
    data = synthesize_market(3, 2, 1)
    pa = build_problem(data, ModelVariant.named("A"))
    pb = build_problem(data, ModelVariant.named("B"))
    rng = np.random.default_rng(0)
    x, ys = rng.uniform(0, 1, 3), rng.uniform(0, 1, (2, 3))
    anc_a = make_anchor(pa, x, ys, 1.0)
    anc_b = make_anchor(pb, x, ys, 1.0)
    za, zb = initial_point(pa, x, ys), initial_point(pb, x, ys)
    pi_tau = np.array([0.7, 1.3])
    za.pi2[:, 1] = pi_tau
    Ha = eval_H_L(pa, anc_a, za.stack())[pa.layout["x"]]
    Hb = eval_H_L(pb, anc_b, zb.stack())[pb.layout["x"]]
    # the stacked multipliers already carry the scenario weights
    expected = sum(2 * pi * (x - y) for pi, y in zip(pi_tau, ys))
    assert np.allclose(Ha - Hb, expected)


def test_equal_weights_are_slater():
    data = synthesize_market(5, 4, 3)
    prob = build_problem(data, ModelVariant.named("A"))
    xbar = np.full(5, 0.2)
    G1, G2, g1, g2 = prob.constraint_values(xbar, np.tile(xbar, (4, 1)))
    assert np.allclose(G1, 0) and np.allclose(g1, 0)
    assert np.all(G2 < 0) and np.all(g2 < 0)


def test_l0_term_only_adds():
    data = synthesize_market(4, 3, 6)
    pa, pc = build_problem(data, ModelVariant.named("A")), build_problem(data, ModelVariant.named("C"))
    rng = np.random.default_rng(1)
    for _ in range(20):
        x = rng.dirichlet(np.ones(4))
        ys = rng.dirichlet(np.ones(4), size=3)
        assert pa.objective(x, ys) >= pc.objective(x, ys)


@pytest.mark.parametrize("label", "ABCD")
def test_built_variants_are_monotone(label):
    prob = build_problem(synthesize_market(4, 3, 8), ModelVariant.named(label))
    anc = make_anchor(prob, np.full(4, 0.25), np.full((3, 4), 0.25), 0.5, 1e-4, 1e-4)
    assert verify_monotone(prob, anc, 300, seed=1).passed


def test_model_d_identity_covariance_against_oracle():
    # Q = I: unconstrained optimum e/n; the return floor pushes weight to the better asset
    data = identity_market(2, 1, rbar1=[0.5, 1.5], r1_min=1.2)
    x, ys = model_d_oracle(data)
    assert x == pytest.approx([0.3, 0.7], abs=1e-12)
    rep = run_direct_phm(build_problem(data, ModelVariant.named("D")), SDCConfig(eta1=1e-6))
    assert np.allclose(rep.point.x, x, atol=1e-5)
    assert np.allclose(rep.point.ys, ys, atol=1e-5)


def test_model_d_identity_floor_inactive():
    data = identity_market(2, 1, rbar1=[0.5, 1.5], r1_min=0.5)
    x, _ = model_d_oracle(data)
    assert x == pytest.approx([0.5, 0.5], abs=1e-12)
