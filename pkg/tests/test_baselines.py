import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from resqos.baselines import UIPCC, ipcc_predict, pcc, similarity_matrix, upcc_predict, uipcc_predict

from helpers import brute_force_neighbourhood

nan = float("nan")


def test_pcc_examples():
    assert pcc([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0, abs=1e-12)
    assert pcc([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0, abs=1e-12)
    # 5 * sqrt(3 / 76), worked by hand
    assert pcc([1, 2, 3], [2, 4, 7]) == pytest.approx(0.9933992677987828, abs=1e-12)


def test_pcc_mapping_inputs_and_missing():
    assert pcc({0: 1.0, 1: 2.0, 2: 3.0}, {1: 5.0, 2: 4.0, 7: 1.0}) == pytest.approx(-1.0)
    assert math.isnan(pcc([1, -1, 3], [2, 2, -1]))  # one common entry
    assert math.isnan(pcc([1, 1, 1], [1, 2, 3]))  # zero variance


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 20), min_size=3, max_size=12), st.floats(-5, 5), st.floats(0.1, 10), st.integers(0, 999))
def test_pcc_symmetric_and_affine_invariant(u, shift, scale, seed):
    if np.std(u) < 1e-3:
        return
    v = np.random.default_rng(seed).random(len(u)) * 20
    r = pcc(u, v)
    if math.isnan(r):
        return
    assert pcc(v, u) == pytest.approx(r, abs=1e-9)
    assert pcc(np.array(u) * scale + 5 + shift, v) == pytest.approx(r, abs=1e-7)
    assert -1 <= r <= 1


def test_similarity_matrix_matches_pairwise():
    rng = np.random.default_rng(0)
    q = np.where(rng.random((12, 15)) < 0.4, nan, rng.random((12, 15)) * 10)
    q[3] = nan
    q[4, :] = 2.0  # constant row: zero variance
    sim = similarity_matrix(q, chunk=5)
    for i in range(12):
        for j in range(12):
            ref = pcc(q[i], q[j])
            if math.isnan(ref):
                assert math.isnan(sim[i, j])
            else:
                assert sim[i, j] == pytest.approx(ref, abs=1e-10)
    np.testing.assert_array_equal(np.nan_to_num(sim, nan=9), np.nan_to_num(sim.T, nan=9))
    diag = np.diag(sim)
    np.testing.assert_allclose(diag[~np.isnan(diag)], 1.0, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("top_k", [1, 2, 10])
def test_predictions_match_brute_force(seed, top_k):
    rng = np.random.default_rng(seed)
    q = np.where(rng.random((6, 7)) < 0.3, nan, np.round(rng.random((6, 7)) * 5, 3))
    cf = UIPCC(q, top_k=top_k, lam=0.3)
    users, services = np.nonzero(np.isnan(q))
    up = cf.predict_upcc(users, services)
    ip = cf.predict_ipcc(users, services)
    both = cf.predict(users, services)
    for n, (u, s) in enumerate(zip(users, services)):
        ref_u = brute_force_neighbourhood(q, u, s, top_k)
        ref_i = brute_force_neighbourhood(q.T, s, u, top_k)
        assert up[n] == pytest.approx(ref_u, abs=1e-9)
        assert ip[n] == pytest.approx(ref_i, abs=1e-9)
        assert both[n] == pytest.approx(0.3 * ref_u + 0.7 * ref_i, abs=1e-9)


def test_single_neighbour_hand_example():
    # users 0 and 1 agree perfectly on services 0..2; user 1 saw service 3
    q = np.array([[1.0, 2.0, 3.0, nan], [2.0, 4.0, 6.0, 10.0]])
    # mean_0 = 2, mean_1 = 5.5, sim = 1 -> 2 + (10 - 5.5) = 6.5
    assert upcc_predict(q, 0, 3) == pytest.approx(6.5)


def test_single_neighbour_with_same_mean_gives_its_value():
    q = np.array([[1.0, 2.0, 3.0, nan], [0.0, 1.0, 2.0, 5.0]])
    assert upcc_predict(q, 0, 3) == pytest.approx(5.0)


def test_fallbacks():
    q = np.array([[1.0, nan], [nan, 3.0]])
    # no neighbour with a defined similarity -> own mean
    assert upcc_predict(q, 0, 1) == pytest.approx(1.0)
    assert ipcc_predict(q, 0, 1) == pytest.approx(3.0)
    # user with no history at all -> global mean
    q2 = np.array([[1.0, 3.0], [nan, nan]])
    assert upcc_predict(q2, 1, 0) == pytest.approx(2.0)


def test_lambda_extremes():
    rng = np.random.default_rng(3)
    q = np.where(rng.random((8, 9)) < 0.3, nan, rng.random((8, 9)))
    u, s = np.nonzero(np.isnan(q))
    cf = UIPCC(q)
    np.testing.assert_array_equal(cf.predict(u, s, lam=1.0), cf.predict_upcc(u, s))
    np.testing.assert_array_equal(cf.predict(u, s, lam=0.0), cf.predict_ipcc(u, s))
    assert uipcc_predict(q, int(u[0]), int(s[0]), lam=1.0) == cf.predict_upcc(u[:1], s[:1])[0]


def test_negative_entries_are_missing_and_bad_ids():
    q = np.array([[1.0, -1.0], [2.0, 3.0]])
    cf = UIPCC(q)
    assert not cf.mask[0, 1]
    with pytest.raises(IndexError):
        cf.predict([2], [0])
    with pytest.raises(ValueError):
        UIPCC(q, lam=1.5)
