import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sdcphm.prox import (composite_prox, custom_penalty, dc_subgradient, hard_threshold, l0_penalty, l1_penalty,
                         limiting_subgradient, moreau_value, prox_point, soft_threshold, zero_penalty)
from sdcphm.verify import brute_force_prox


def test_l0_keeps_large_entry():
    res = prox_point(l0_penalty(1e-5), 1.0, [0.01])
    assert np.array_equal(res.point, [0.01])
    assert moreau_value(l0_penalty(1e-5), 1.0, [0.01]) == pytest.approx(1e-5, abs=1e-15)


def test_l0_drops_small_entry():
    res = prox_point(l0_penalty(1e-5), 1.0, [0.001])
    assert np.array_equal(res.point, [0.0])
    assert res.envelope_value == pytest.approx(5e-7, abs=1e-15)


def test_zero_input():
    for P in (zero_penalty(), l0_penalty(0.3), l1_penalty(0.3)):
        res = prox_point(P, 0.7, np.zeros(3))
        assert np.array_equal(res.point, np.zeros(3)) and res.envelope_value == 0.0


def test_l0_tie_keeps_entry():
    thr = np.sqrt(2 * 0.5 * 1.0)
    res = prox_point(l0_penalty(0.5), 1.0, [thr])
    assert res.point[0] == thr and res.tie_broken
    assert np.array_equal(hard_threshold([thr, -thr, 0.5 * thr], thr), [thr, -thr, 0.0])


def test_l1_moreau_value():
    assert moreau_value(l1_penalty(1.0), 1.0, [3.0]) == pytest.approx(2.5)
    assert np.allclose(soft_threshold([3.0, -0.5, -2.0], 1.0), [2.0, 0.0, -1.0])


def test_zero_penalty_envelope_is_zero():
    assert moreau_value(zero_penalty(), 0.3, [1.0, -4.0]) == 0.0


def test_dc_subgradient_examples():
    assert np.allclose(dc_subgradient(zero_penalty(), 1.0, [5.0, 5.0], [0.0, 2.0]), [0.0, 2.0])
    P = l0_penalty(1.0, affine_U=np.array([[2.0, 0.0], [0.0, 1.0]]))
    assert np.allclose(dc_subgradient(P, 0.5, [1.0, 1.0], [1.0, 1.0]), [4.0, 2.0])


def test_dc_subgradient_zero_below_threshold():
    P, rho = l0_penalty(1e-5), 1e-2
    x = np.array([1e-5, 0.5])
    zeta = composite_prox(P, rho, x).point
    assert dc_subgradient(P, rho, x, zeta)[0] == 0.0


def test_dc_subgradient_dimension_check():
    with pytest.raises(ValueError):
        dc_subgradient(zero_penalty(), 1.0, [1.0, 2.0], [1.0])


def test_limiting_subgradient_examples():
    assert np.allclose(limiting_subgradient(l0_penalty(1e-5), 1e-4, [0.001], [0.0]), [10.0])
    assert np.allclose(limiting_subgradient(l1_penalty(1.0), 1.0, [3.0], [2.0]), [1.0])
    assert np.allclose(limiting_subgradient(zero_penalty(), 1.0, [1.0, 2.0], [1.0, 2.0]), 0.0)


def test_custom_penalty_roundtrip():
    # box indicator scaled into a finite penalty: P(w) = ||w||^2 / 2, prox w / (1 + rho)
    P = custom_penalty(lambda w: 0.5 * w @ w, lambda w, rho: w / (1 + rho), lower_bound=0.0)
    res = prox_point(P, 0.5, [3.0])
    assert np.allclose(res.point, [2.0])
    assert res.envelope_value == pytest.approx(0.5 * 9 / 1.5)


def test_invalid_inputs():
    with pytest.raises(ValueError):
        prox_point(l0_penalty(1.0), 0.0, [1.0])
    with pytest.raises(ValueError):
        l1_penalty(-1.0)
    with pytest.raises(ValueError):
        custom_penalty(lambda w: 0.0, lambda w, r: w, lower_bound=-np.inf)


def test_composite_prox_affine_shift():
    P = l1_penalty(1.0, affine_u=np.array([1.0]))
    assert np.allclose(composite_prox(P, 1.0, [2.0]).point, [2.0])


penalties = st.sampled_from(["zero", "l0", "l1"])
vectors = arrays(float, st.integers(1, 8), elements=st.floats(-5, 5, allow_nan=False))


def _make(kind, gamma):
    return {"zero": zero_penalty(), "l0": l0_penalty(gamma), "l1": l1_penalty(gamma)}[kind]


@settings(max_examples=150, deadline=None)
@given(penalties, st.floats(0.0, 2.0), st.floats(1e-4, 10.0), vectors)
def test_prox_matches_brute_force(kind, gamma, rho, w):
    P = _make(kind, gamma)
    res = prox_point(P, rho, w)
    ref, val = brute_force_prox(P.kind, P.weight, rho, w)
    assert np.max(np.abs(res.point - ref)) <= 1e-8
    assert abs(res.envelope_value - val) <= 1e-8


@settings(max_examples=200, deadline=None)
@given(penalties, st.floats(0.0, 2.0), st.floats(1e-4, 10.0), vectors)
def test_dc_identity_and_sandwich(kind, gamma, rho, w):
    P = _make(kind, gamma)
    res = prox_point(P, rho, w)
    assert abs(res.envelope_value - (w @ w / (2 * rho) - res.dc_concave_value)) <= 1e-10 * max(1, res.envelope_value)
    # 0 <= e_rho P(w) <= P(w): the prox point never does worse than w itself
    assert -1e-12 <= res.envelope_value <= P.value(w) + 1e-12


@settings(max_examples=100, deadline=None)
@given(penalties, st.floats(0.01, 2.0), st.floats(1e-3, 1.0), vectors)
def test_envelope_monotone_in_rho(kind, gamma, rho, w):
    P = _make(kind, gamma)
    assert moreau_value(P, rho, w) >= moreau_value(P, 2 * rho, w) - 1e-12
