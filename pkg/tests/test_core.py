"""Core types, emission densities and the serial likelihood backends."""

import math

import numpy as np
import pytest

from tremorhmm import (
    HmmParams,
    Observation,
    ScaledMatrix,
    StateEmission,
    brute_force_loglik,
    bvn_logpdf,
    emission_diagonal,
    forward_loglik,
    observation_arrays,
    stationary_distribution,
)

LOG_2PI = math.log(2.0 * math.pi)


def random_spd(rng, scale=1.0):
    a = rng.standard_normal((2, 2))
    return scale * (a @ a.T + 0.3 * np.eye(2))


def random_params(rng, k, p_range=(0.05, 0.95), sigma_scale=0.5):
    gamma = rng.dirichlet(np.full(k, 5.0), size=k)
    delta = rng.dirichlet(np.full(k, 5.0))
    states = tuple(
        StateEmission(rng.uniform(*p_range),
                      rng.uniform(-1.0, 1.0, size=2),
                      random_spd(rng, sigma_scale))
        for _ in range(k))
    return HmmParams(gamma=gamma, delta=delta, states=states)


def random_obs(rng, n, present_prob=0.6, spread=1.5):
    out = []
    for _ in range(n):
        if rng.random() < present_prob:
            out.append(Observation(tuple(rng.uniform(-spread, spread, size=2))))
        else:
            out.append(Observation(None))
    return out


class TestObservation:
    def test_absent_and_present(self):
        quiet = Observation(None)
        assert not quiet.present and quiet.value is None
        ev = Observation((133.5, 33.25))
        assert ev.present and ev.value == (133.5, 33.25)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            Observation((float("nan"), 1.0))
        with pytest.raises(ValueError):
            Observation((1.0, float("inf")))


class TestStateEmission:
    def test_cholesky_and_logdet_match_numpy(self):
        rng = np.random.default_rng(10)
        for _ in range(50):
            sigma = random_spd(rng)
            st = StateEmission(0.5, np.zeros(2), sigma)
            ref = np.linalg.cholesky(sigma)
            assert np.allclose(st.chol, ref, rtol=0, atol=1e-12)
            assert math.isclose(st.log_det, np.linalg.slogdet(sigma)[1],
                                rel_tol=1e-12, abs_tol=1e-12)

    def test_rejects_p_outside_open_interval(self):
        sigma = np.eye(2)
        for bad in (0.0, 1.0, -0.2, 1.2, float("nan")):
            with pytest.raises(ValueError):
                StateEmission(bad, np.zeros(2), sigma)

    def test_rejects_bad_sigma(self):
        with pytest.raises(ValueError):
            StateEmission(0.5, np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]))  # not PD
        with pytest.raises(ValueError):
            StateEmission(0.5, np.zeros(2), np.array([[1.0, 0.5], [0.1, 1.0]]))  # asymmetric
        with pytest.raises(ValueError):
            StateEmission(0.5, np.zeros(2), np.array([[-1.0, 0.0], [0.0, 1.0]]))

    def test_arrays_frozen(self):
        st = StateEmission(0.5, np.zeros(2), np.eye(2))
        with pytest.raises(ValueError):
            st.mu[0] = 1.0


class TestHmmParams:
    def test_validates_gamma_rows(self):
        states = (StateEmission(0.5, np.zeros(2), np.eye(2)),) * 2
        with pytest.raises(ValueError):
            HmmParams(gamma=np.array([[0.6, 0.5], [0.5, 0.5]]),
                      delta=np.array([0.5, 0.5]), states=states)
        with pytest.raises(ValueError):
            HmmParams(gamma=np.array([[1.1, -0.1], [0.5, 0.5]]),
                      delta=np.array([0.5, 0.5]), states=states)

    def test_validates_delta(self):
        states = (StateEmission(0.5, np.zeros(2), np.eye(2)),) * 2
        gamma = np.array([[0.5, 0.5], [0.5, 0.5]])
        with pytest.raises(ValueError):
            HmmParams(gamma=gamma, delta=np.array([0.7, 0.7]), states=states)
        with pytest.raises(ValueError):
            HmmParams(gamma=gamma, delta=np.array([1.5, -0.5]), states=states)

    def test_k_and_frozen(self):
        rng = np.random.default_rng(0)
        params = random_params(rng, 3)
        assert params.K == 3
        with pytest.raises(ValueError):
            params.gamma[0, 0] = 0.9


class TestBvnLogpdf:
    def test_at_mean_identity_cov(self):
        st = StateEmission(0.5, np.array([1.0, -2.0]), np.eye(2))
        assert math.isclose(bvn_logpdf((1.0, -2.0), st), -LOG_2PI, rel_tol=1e-15)

    def test_matches_explicit_inverse(self):
        # oracle: dense quadratic form through the explicit 2x2 inverse
        rng = np.random.default_rng(11)
        for _ in range(100):
            sigma = random_spd(rng)
            mu = rng.uniform(-3, 3, size=2)
            st = StateEmission(0.5, mu, sigma)
            x = rng.uniform(-4, 4, size=2)
            det = sigma[0, 0] * sigma[1, 1] - sigma[0, 1] * sigma[1, 0]
            inv = np.array([[sigma[1, 1], -sigma[0, 1]],
                            [-sigma[1, 0], sigma[0, 0]]]) / det
            d = x - mu
            expect = -LOG_2PI - 0.5 * math.log(det) - 0.5 * float(d @ inv @ d)
            assert math.isclose(bvn_logpdf(x, st), expect, rel_tol=1e-12, abs_tol=1e-12)


class TestEmissionDiagonal:
    def test_absent_is_one_minus_p(self):
        rng = np.random.default_rng(12)
        params = random_params(rng, 4)
        diag = emission_diagonal(params, Observation(None))
        expect = np.array([1.0 - st.p for st in params.states])
        assert np.array_equal(diag, expect)

    def test_present_single_state_closed_form(self):
        st = StateEmission(0.5, np.zeros(2), np.eye(2))
        params = HmmParams(gamma=np.array([[1.0]]), delta=np.array([1.0]), states=(st,))
        diag = emission_diagonal(params, Observation((0.0, 0.0)))
        assert math.isclose(diag[0], 0.5 / (2.0 * math.pi), rel_tol=1e-14)

    def test_present_matches_bvn_logpdf(self):
        rng = np.random.default_rng(13)
        params = random_params(rng, 3)
        for _ in range(20):
            x = tuple(rng.uniform(-2, 2, size=2))
            diag = emission_diagonal(params, Observation(x))
            expect = np.array([st.p * math.exp(bvn_logpdf(x, st))
                               for st in params.states])
            assert np.allclose(diag, expect, rtol=1e-12)
            assert np.all(diag > 0)


class TestObservationArrays:
    def test_split(self):
        obs = [Observation((1.0, 2.0)), Observation(None), Observation((-3.0, 4.5))]
        present, lon, lat = observation_arrays(obs)
        assert present.tolist() == [True, False, True]
        assert lon.tolist() == [1.0, 0.0, -3.0]
        assert lat.tolist() == [2.0, 0.0, 4.5]


class TestForwardLoglik:
    def test_all_absent_closed_form(self):
        # with every state sharing p, absent steps contribute (1-p) each and
        # the transition/initial sums telescope to 1
        rng = np.random.default_rng(14)
        p = 0.37
        params = random_params(rng, 3, p_range=(p, p))
        n = 25
        val = forward_loglik(params, [Observation(None)] * n)
        assert math.isclose(val, n * math.log(1.0 - p), rel_tol=1e-12)

    def test_single_observation_hand_expansion(self):
        rng = np.random.default_rng(15)
        params = random_params(rng, 3)
        ob = Observation((0.3, -0.4))
        expect = math.log(float(params.delta @ params.gamma
                                @ emission_diagonal(params, ob)))
        assert math.isclose(forward_loglik(params, [ob]), expect, rel_tol=1e-12)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(16)
        for k, n in ((2, 8), (3, 6), (4, 5), (5, 4)):
            params = random_params(rng, k)
            obs = random_obs(rng, n)
            f = forward_loglik(params, obs)
            b = brute_force_loglik(params, obs)
            assert math.isclose(f, b, rel_tol=1e-12, abs_tol=1e-12)

    def test_renorm_schedule_invariance(self):
        rng = np.random.default_rng(17)
        params = random_params(rng, 5)
        obs = random_obs(rng, 400)
        base = forward_loglik(params, obs)
        for period in (2, 3, 8, 50):
            alt = forward_loglik(params, obs, renorm_period=period)
            assert abs(alt - base) <= 1e-10 * abs(base)

    def test_long_sequence_finite(self):
        rng = np.random.default_rng(18)
        params = random_params(rng, 25)
        obs = random_obs(rng, 10_000)
        val = forward_loglik(params, obs)
        assert math.isfinite(val)

    def test_permutation_invariance(self):
        # relabeling hidden states must not change the likelihood
        rng = np.random.default_rng(19)
        params = random_params(rng, 4)
        obs = random_obs(rng, 60)
        base = forward_loglik(params, obs)
        for _ in range(5):
            perm = rng.permutation(4)
            permuted = HmmParams(
                gamma=params.gamma[np.ix_(perm, perm)],
                delta=params.delta[perm],
                states=tuple(params.states[i] for i in perm))
            assert math.isclose(forward_loglik(permuted, obs), base, rel_tol=1e-12)

    def test_rejects_empty(self):
        rng = np.random.default_rng(20)
        params = random_params(rng, 2)
        with pytest.raises(ValueError):
            forward_loglik(params, [])
        with pytest.raises(ValueError):
            forward_loglik(params, [Observation(None)], renorm_period=0)


class TestBruteForce:
    def test_single_state_is_log_product(self):
        st = StateEmission(0.25, np.zeros(2), np.eye(2))
        params = HmmParams(gamma=np.array([[1.0]]), delta=np.array([1.0]), states=(st,))
        obs = [Observation(None), Observation((0.1, 0.2)), Observation(None)]
        expect = sum(math.log(emission_diagonal(params, ob)[0]) for ob in obs)
        assert math.isclose(brute_force_loglik(params, obs), expect, rel_tol=1e-12)

    def test_two_state_single_step_hand_sum(self):
        rng = np.random.default_rng(21)
        params = random_params(rng, 2)
        ob = Observation((0.5, 0.5))
        diag = emission_diagonal(params, ob)
        # sum over (s_-, s_0) pairs
        expect = math.log(sum(
            params.delta[i] * params.gamma[i, j] * diag[j]
            for i in range(2) for j in range(2)))
        assert math.isclose(brute_force_loglik(params, [ob]), expect, rel_tol=1e-12)

    def test_guard_on_path_count(self):
        rng = np.random.default_rng(22)
        params = random_params(rng, 10)
        obs = random_obs(rng, 7)  # 10^8 paths
        with pytest.raises(ValueError):
            brute_force_loglik(params, obs)


class TestStationaryDistribution:
    def test_identity_returns_uniform(self):
        pi = stationary_distribution(np.eye(4))
        assert np.allclose(pi, 0.25, rtol=0, atol=1e-12)

    def test_two_state_closed_form(self):
        # stationary of [[1-a, a], [b, 1-b]] is (b, a) / (a + b)
        a, b = 0.3, 0.1
        gamma = np.array([[1 - a, a], [b, 1 - b]])
        pi = stationary_distribution(gamma)
        assert np.allclose(pi, [b / (a + b), a / (a + b)], rtol=1e-10)

    def test_matches_eigendecomposition(self):
        rng = np.random.default_rng(23)
        for _ in range(10):
            gamma = rng.dirichlet(np.full(5, 2.0), size=5)
            pi = stationary_distribution(gamma)
            w, v = np.linalg.eig(gamma.T)
            lead = np.real(v[:, np.argmax(np.real(w))])
            lead = lead / lead.sum()
            assert np.allclose(pi, lead, rtol=0, atol=1e-9)
            assert np.allclose(pi @ gamma, pi, rtol=0, atol=1e-10)

    def test_periodic_chain_raises(self):
        # bipartite chain oscillates under power iteration from uniform
        gamma = np.array([[0.0, 1.0, 0.0],
                          [0.5, 0.0, 0.5],
                          [0.0, 1.0, 0.0]])
        with pytest.raises(RuntimeError):
            stationary_distribution(gamma)

    def test_rejects_non_stochastic(self):
        with pytest.raises(ValueError):
            stationary_distribution(np.array([[0.5, 0.6], [0.5, 0.5]]))


class TestScaledMatrix:
    def test_normalized_max_is_exactly_one(self):
        rng = np.random.default_rng(24)
        for _ in range(20):
            sm = ScaledMatrix(rng.uniform(0.0, 5.0, size=(4, 4)), rng.normal())
            norm = sm.normalized()
            assert norm.m.max() == 1.0
            # value preserved: exp(c) * m identical up to float scaling
            assert np.allclose(norm.to_dense(), sm.to_dense(), rtol=1e-12)

    def test_zero_matrix_passthrough(self):
        sm = ScaledMatrix(np.zeros((3, 3)), 1.5)
        norm = sm.normalized()
        assert np.array_equal(norm.m, sm.m) and norm.log_scale == 1.5

    def test_rejects_negative_entries(self):
        with pytest.raises(ValueError):
            ScaledMatrix(np.array([[1.0, -0.1], [0.0, 1.0]]))
