import json
import math

import numpy as np
import pytest

from lopblock import aps

CFG8 = aps.ArrayConfig(M=8)


def hermitian(rng, n):
    G = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return 0.5 * (G + G.conj().T)


def diag_spread(R):
    # largest deviation of an entry from the mean of its diagonal
    n = R.shape[0]
    return max(np.abs(np.diagonal(R, k) - np.diagonal(R, k).mean()).max() for k in range(-n + 1, n))


class TestArray:
    def test_defaults(self):
        assert CFG8.antenna_spacing_m == pytest.approx(CFG8.wavelength / 2)
        assert CFG8.N == 100

    def test_broadside(self):
        np.testing.assert_allclose(aps.array_response(0.0, CFG8), np.ones(8) / math.sqrt(8))

    def test_sidelobe_floor(self):
        # with a 65 degree beamwidth the 30 dB floor is only reached beyond
        # pi/2, so check the pattern itself there
        assert aps.gain_db(2.0, CFG8) == pytest.approx(-30.0)
        assert 10 ** (aps.gain_db(2.0, CFG8) / 20) == pytest.approx(0.0316227766, rel=1e-9)
        edge = np.abs(aps.array_response(math.pi / 2, CFG8)) * math.sqrt(8)
        np.testing.assert_allclose(edge, 10 ** (-12 * (90 / 65) ** 2 / 20), rtol=1e-12)

    def test_norm_is_gain(self, rng):
        for theta in rng.uniform(-math.pi / 2, math.pi / 2, 20):
            g_db = -min(12 * (theta / CFG8.theta_3db_rad) ** 2, 30)
            assert np.linalg.norm(aps.array_response(theta, CFG8)) == pytest.approx(10 ** (g_db / 20))

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            aps.array_response(2.0, CFG8)

    def test_bad_grid(self):
        with pytest.raises(ValueError):
            aps.ArrayConfig(grid=np.array([0.0, 0.0, 1.0]))


class TestSampleAps:
    def test_true_policy_ranges(self, rng):
        for _ in range(200):
            x, spec = aps.sample_aps("true", rng)
            assert spec.Q in (1, 2)
            assert np.all((spec.centers >= -2 * math.pi / 5) & (spec.centers <= -math.pi / 5))
            assert np.sum(spec.amplitudes) == pytest.approx(1.0, abs=1e-15)
            assert np.all(x >= 0)

    def test_generator_ranges_many_draws(self, rng):
        qs = set()
        for _ in range(10_000):
            _, spec = aps.sample_aps("dataset", rng)
            qs.add(spec.Q)
            assert np.all(np.abs(spec.centers) <= 2 * math.pi / 5)
            assert np.all((spec.widths >= math.radians(2)) & (spec.widths <= math.radians(4)))
            assert np.all(spec.amplitudes >= 0)
            assert abs(spec.amplitudes.sum() - 1) < 1e-12
        assert qs == {1, 2, 3, 4, 5}

    def test_single_component(self):
        grid = aps.default_grid()
        spec = aps.APSSpec(np.array([1.0]), np.array([-math.pi / 3]), np.array([math.radians(3)]))
        x = aps.aps_from_spec(spec, grid)
        sd = math.radians(3)
        dens = np.exp(-0.5 * ((grid + math.pi / 3) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))
        np.testing.assert_allclose(x, dens, rtol=1e-13)
        assert np.argmax(x) == np.argmin(np.abs(grid + math.pi / 3))

    def test_unknown_policy(self, rng):
        with pytest.raises(ValueError):
            aps.sample_aps("other", rng)


class TestCovariance:
    def test_single_point(self):
        x = np.zeros(100)
        x[37] = 1.0
        R = aps.true_covariance(x, CFG8)
        a = aps.array_response(CFG8.grid[37], CFG8)
        np.testing.assert_allclose(R, np.outer(a, a.conj()), atol=1e-15)
        assert np.linalg.matrix_rank(R, tol=1e-10) == 1

    def test_zero(self):
        assert not np.any(aps.true_covariance(np.zeros(100), CFG8))

    def test_structure(self, rng):
        for _ in range(20):
            R = aps.true_covariance(rng.uniform(0, 1, 100), CFG8)
            assert np.abs(R - R.conj().T).max() <= 1e-12
            assert diag_spread(R) <= 1e-10
            assert np.linalg.eigvalsh(R).min() >= -1e-10

    def test_negative_aps(self):
        with pytest.raises(ValueError):
            aps.true_covariance(-np.ones(100), CFG8)


class TestChannels:
    def test_zero(self, rng):
        assert not np.any(aps.sample_channels(np.zeros((4, 4)), 10, 0.0, rng))

    def test_sample_covariance(self, rng):
        h = aps.sample_channels(np.eye(4), 100_000, 0.0, rng)
        S = h @ h.conj().T / h.shape[1]
        assert np.linalg.norm(S - np.eye(4)) <= 0.05 * 2.0

    def test_energy(self, rng):
        R = aps.true_covariance(rng.uniform(0, 1, 100), CFG8)
        s2 = 0.3
        h = aps.sample_channels(R, 50_000, s2, rng)
        energy = np.mean(np.sum(np.abs(h) ** 2, axis=0))
        assert energy == pytest.approx(np.trace(R).real + 8 * s2, rel=0.02)

    def test_shape_and_errors(self, rng):
        assert aps.sample_channels(np.eye(3), 7, 0.1, rng).shape == (3, 7)
        with pytest.raises(ValueError):
            aps.sample_channels(-np.eye(3), 7, 0.0, rng)
        with pytest.raises(ValueError):
            aps.sample_channels(np.eye(3), 0, 0.0, rng)


class TestProjections:
    def test_toeplitz_examples(self):
        np.testing.assert_allclose(aps.project_toeplitz(np.eye(3)), np.eye(3))
        out = aps.project_toeplitz(np.array([[1.0, 0.0], [0.0, 3.0]]))
        np.testing.assert_allclose(out, 2 * np.eye(2))

    def test_toeplitz_fixed_point(self, rng):
        R = aps.true_covariance(rng.uniform(0, 1, 100), CFG8)
        T = aps.project_toeplitz(R)
        np.testing.assert_allclose(aps.project_toeplitz(T), T, atol=1e-15)

    def test_psd_examples(self):
        np.testing.assert_allclose(aps.project_psd(np.diag([1.0, -1.0])), np.diag([1.0, 0.0]), atol=1e-15)
        R = aps.true_covariance(np.ones(100), CFG8)
        np.testing.assert_allclose(aps.project_psd(R), R, atol=1e-12)

    def test_psd_nearest_bruteforce(self, rng):
        # no sampled PSD matrix may be closer than the projection
        for _ in range(10):
            H = hermitian(rng, 3)
            P = aps.project_psd(H)
            best = np.linalg.norm(H - P)
            for _ in range(2000):
                G = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
                G *= rng.uniform(0, 2)
                S = G @ G.conj().T * rng.uniform(0, 1)
                assert np.linalg.norm(H - S) >= best - 1e-12
            # local perturbations around the projection stay farther too
            for _ in range(200):
                E = 1e-3 * hermitian(rng, 3)
                S = aps.project_psd(P + E)
                assert np.linalg.norm(H - S) >= best - 1e-12

    def test_idempotent_nonexpansive(self, rng):
        for proj in (aps.project_toeplitz, aps.project_psd):
            for _ in range(20):
                A, B = hermitian(rng, 6), hermitian(rng, 6)
                PA = proj(A)
                np.testing.assert_allclose(proj(PA), PA, atol=1e-12)
                assert np.linalg.norm(PA - proj(B)) <= np.linalg.norm(A - B) + 1e-12

    def test_halpern_fixed_point(self, rng):
        R = aps.true_covariance(rng.uniform(0, 1, 100), CFG8)
        R = aps.project_psd(aps.project_toeplitz(R))
        np.testing.assert_allclose(aps.halpern_project(R, 50), R, atol=1e-8)

    def test_halpern_zero_iterations(self, rng):
        H = hermitian(rng, 4)
        np.testing.assert_array_equal(aps.halpern_project(H, 0), H)

    def test_halpern_distances(self, rng):
        H = hermitian(rng, 8)
        X = aps.halpern_project(H, 1000)
        scale = np.linalg.norm(H)
        assert aps.toeplitz_distance(X) <= 1e-3 * scale
        assert aps.psd_distance(X) <= 1e-3 * scale
        Y = aps.halpern_project(H, 100)
        assert aps.psd_distance(X) < aps.psd_distance(Y)


class TestEstimate:
    def test_large_sample(self, rng):
        R = aps.true_covariance(rng.uniform(0, 1, 100), CFG8)
        h = aps.sample_channels(R, 100_000, 0.0, rng)
        est = aps.estimate_covariance(h, 0.0, 200)
        # frozen-seed Monte-Carlo error is about 1/sqrt(T) of ||R||
        assert np.linalg.norm(est.R_hat - R) <= 0.02 * np.linalg.norm(R)
        assert np.abs(est.R_hat - est.R_hat.conj().T).max() <= 1e-12

    def test_noise_only(self, rng):
        s2 = 0.5
        h = aps.sample_channels(np.zeros((4, 4)), 20_000, s2, rng)
        est = aps.estimate_covariance(h, s2, 200)
        # sample-covariance entries fluctuate by about s2 / sqrt(T)
        assert np.linalg.norm(est.R_hat) <= 3 * 4 * s2 / math.sqrt(20_000)

    def test_requires_iterations(self, rng):
        with pytest.raises(ValueError):
            aps.estimate_covariance(np.ones((2, 3)), 0.0, 0)


class TestObservation:
    def test_dimensions(self):
        for M in (1, 4, 8, 16):
            cfg = aps.ArrayConfig(M=M)
            obs = aps.extract_observation(np.eye(M), cfg)
            assert obs.M_bar == 2 * M - 1
            assert obs.A.shape == (2 * M - 1, 100)

    def test_round_trip(self, rng):
        for _ in range(20):
            x = rng.uniform(0, 5, 100)
            obs = aps.extract_observation(aps.true_covariance(x, CFG8), CFG8)
            assert np.abs(obs.A @ x - obs.r_hat).max() <= 1e-10

    def test_zero(self):
        obs = aps.extract_observation(np.zeros((8, 8)), CFG8)
        assert not np.any(obs.r_hat)


class TestDatasetStats:
    def test_identical_samples(self):
        st = aps.dataset_stats(np.ones((5, 3)))
        assert not np.any(st.C)
        assert st.delta == pytest.approx(1e-12)
        assert np.all(np.isfinite(st.P))

    def test_two_samples(self):
        e1 = np.array([1.0, 0.0, 0.0])
        st = aps.dataset_stats(np.stack([e1, -e1]))
        np.testing.assert_allclose(st.x_bar, 0)
        np.testing.assert_allclose(st.C, 2 * np.outer(e1, e1))
        assert st.delta == pytest.approx(0.02)

    def test_random(self, rng):
        X = np.array([aps.sample_aps("dataset", rng)[0] for _ in range(1000)])
        st = aps.dataset_stats(X)
        normC = np.linalg.norm(st.C, 2)
        assert st.delta == pytest.approx(normC / 100)
        np.testing.assert_allclose(st.P, st.P.T, atol=0)
        assert np.linalg.eigvalsh(st.P).min() >= 1 / (normC + st.delta) - 1e-9

    def test_too_few(self):
        with pytest.raises(ValueError):
            aps.dataset_stats(np.ones((1, 3)))


class TestSnr:
    def test_unit(self):
        h = np.ones((4, 10)) / 1.0
        assert aps.snr_noise_variance(h, 0.0, dim=4) == pytest.approx(1.0)
        assert aps.snr_noise_variance(h, 30.0, dim=4) == pytest.approx(1e-3)

    def test_default_dimension_is_antennas(self):
        h = np.ones((6, 3))
        assert aps.snr_noise_variance(h, 0.0) == pytest.approx(1.0)

    def test_log_law(self):
        h = np.ones((4, 10))
        a = aps.snr_noise_variance(h, 10.0)
        b = aps.snr_noise_variance(h, 10.0 + 10 * math.log10(2))
        assert b == pytest.approx(a / 2)


class TestIO:
    def test_json_pairs(self, tmp_path, rng):
        H = hermitian(rng, 3)
        back = aps.matrix_from_json(json.loads(json.dumps(aps.matrix_to_json(H))))
        np.testing.assert_array_equal(back, H)
        aps.dump_json(tmp_path / "d.json", R=H, x=np.arange(3.0))
        data = json.loads((tmp_path / "d.json").read_text())
        assert np.asarray(data["R"]).shape == (3, 3, 2)

    def test_csv_round_trip(self, tmp_path, rng):
        X = rng.uniform(0, 1, (4, 7))
        aps.write_dataset_csv(tmp_path / "x.csv", X)
        np.testing.assert_array_equal(aps.read_dataset_csv(tmp_path / "x.csv"), X)
