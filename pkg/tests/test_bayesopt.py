import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgda.bayesopt import (BoConfig, GpSurrogate, Sampler, diversity_bonus, direct_posterior,
                           se_kernel, target_value)
from sgda.errors import InputError
from sgda.metrics import dtw
from sgda.scenario import ParamSpace
from sgda.simenv import MANEUVERS, SIDES, EnvCondition, ParamRanges

from test_metrics import brute_dtw


class TestKernel:
    def test_values(self):
        a = np.array([[0.0, 0.0], [1.0, 0.0]])
        K = se_kernel(a, a, length=0.5, signal=2.0)
        np.testing.assert_allclose(K, [[4.0, 4.0 * np.exp(-2.0)], [4.0 * np.exp(-2.0), 4.0]])

    def test_positive_semidefinite(self):
        X = np.random.default_rng(0).uniform(size=(30, 4))
        assert np.linalg.eigvalsh(se_kernel(X, X, 0.3, 1.0)).min() > -1e-9


class TestSurrogate:
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_direct_solve(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 31))
        gp = GpSurrogate(3, length=0.4, signal=1.3, noise=0.05, refit_every=0)
        X = rng.uniform(size=(n, 3))
        y = np.sin(3 * X[:, 0]) + X[:, 1] ** 2 + rng.normal(0, 0.1, n)
        for x, t in zip(X, y):
            gp.add(x, t)
        Xs = rng.uniform(size=(20, 3))
        m, v = gp.predict(Xs)
        mo, vo = direct_posterior(X, y, Xs, 0.4, 1.3, 0.05)
        np.testing.assert_allclose(m, mo, atol=1e-8)
        np.testing.assert_allclose(v, vo, atol=1e-8)

    def test_interpolates_with_tiny_noise(self):
        rng = np.random.default_rng(1)
        gp = GpSurrogate(2, length=0.3, noise=1e-6, refit_every=0)
        X = rng.uniform(size=(8, 2))
        y = rng.normal(size=8)
        for x, t in zip(X, y):
            gp.add(x, t)
        m, _ = gp.predict(X)
        np.testing.assert_allclose(m, y, atol=1e-6)

    def test_conflicting_duplicates_average(self):
        gp = GpSurrogate(1, noise=0.1, refit_every=0)
        gp.add([0.5], 1.0)
        gp.add([0.5], 3.0)
        m, _ = gp.predict([[0.5]])
        assert 1.0 < m[0] < 3.0

    def test_variance_nonnegative_and_prior_far_away(self):
        rng = np.random.default_rng(2)
        gp = GpSurrogate(2, length=0.1, signal=1.0, noise=0.01, refit_every=0)
        X = rng.uniform(size=(10, 2))
        y = rng.normal(size=10)
        for x, t in zip(X, y):
            gp.add(x, t)
        _, v = gp.predict(rng.uniform(-1, 2, size=(200, 2)))
        assert np.all(v >= 0)
        m, v = gp.predict([[50.0, 50.0]])
        assert m[0] == pytest.approx(y.mean())
        assert v[0] == pytest.approx(np.var(y))  # signal**2 * sd**2, signal = 1

    def test_refit_picks_grid_maximum(self):
        rng = np.random.default_rng(3)
        gp = GpSurrogate(1, refit_every=10)
        X = rng.uniform(size=(10, 1))
        for x in X:
            gp.add(x, float(np.sin(20 * x[0])))
        lls = {(ell, s): gp.log_marginal_likelihood(ell, s)
               for ell in np.geomspace(0.1, 2.0, 6) for s in (0.5, 1.0, 2.0)}
        best = max(lls, key=lls.get)
        assert (gp.length, gp.signal) == pytest.approx(best)

    @pytest.mark.parametrize("bad", [np.nan, np.inf])
    def test_non_finite_rejected(self, bad):
        with pytest.raises(InputError):
            GpSurrogate(1).add([0.1], bad)
        with pytest.raises(InputError):
            Sampler(1).observe("k", [0.1], bad)


class TestTargets:
    def test_violation_has_no_bonus(self):
        assert target_value(-0.3, False, np.zeros((3, 3)), [], a=0.1) == -0.3

    def test_empty_store_gets_capped_bonus(self):
        assert target_value(0.4, True, np.zeros((3, 3)), [], a=0.1, d_cap=10.0) == pytest.approx(1.4)

    def test_nearest_neighbour_bonus(self):
        f = np.array([[0.0], [1.0], [2.0]])
        near = np.array([[0.0], [1.0], [4.0]])   # DTW 2
        far = np.array([[9.0], [9.0]])
        assert brute_dtw(f, near) == pytest.approx(2.0)
        assert target_value(0.25, True, f, [far, near], a=0.1) == pytest.approx(0.25 + 0.2)

    def test_bonus_capped(self):
        f = np.zeros((2, 1))
        assert diversity_bonus(f, [np.full((2, 1), 100.0)], a=0.1, d_cap=10.0) == pytest.approx(1.0)
        assert diversity_bonus(f, [np.full((2, 1), 1.0)], a=0.1) == pytest.approx(0.1 * dtw(f, np.ones((2, 1))))


envs = st.builds(EnvCondition, st.floats(15, 45), st.sampled_from(SIDES), st.sampled_from(MANEUVERS),
                 st.floats(10, 50), st.floats(3, 9), st.floats(9, 15))


class TestEncoding:
    @given(envs)
    def test_round_trip(self, e):
        space = ParamSpace(ParamRanges())
        x = space.encode(e)
        assert np.all((0 <= x) & (x <= 1))
        back = space.decode(x)
        assert (back.ado_side, back.ado_maneuver) == (e.ado_side, e.ado_maneuver)
        for name in ("ego_init_distance", "ado_init_distance", "ado_min_speed", "ado_max_speed"):
            assert getattr(back, name) == pytest.approx(getattr(e, name), abs=1e-9)
        np.testing.assert_allclose(space.encode(back), x, atol=1e-12)

    @settings(max_examples=50)
    @given(st.lists(st.floats(0, 1), min_size=6, max_size=6))
    def test_decode_encode_idempotent(self, x):
        space = ParamSpace(ParamRanges())
        e = space.decode(x)
        assert space.decode(space.encode(e)) == e

    def test_bin_centres(self):
        space = ParamSpace(ParamRanges())
        e = EnvCondition(15.0, "left", "right", 50.0, 3.0, 15.0)
        np.testing.assert_allclose(space.encode(e), [0.0, 3 / 6, 5 / 6, 1.0, 0.0, 1.0])

    def test_dimension(self):
        assert ParamSpace(ParamRanges()).dim == 6


class TestSampler:
    def test_cold_start_is_uniform(self):
        s = Sampler(6)
        x = s.propose("k", np.random.default_rng(0))
        np.testing.assert_array_equal(x, np.random.default_rng(0).uniform(0, 1, 6))

    def test_argmax_over_candidates(self):
        cfg = BoConfig(n_min=1)
        s = Sampler(2, cfg)
        s.observe("k", [0.5, 0.5], 3.0)
        x = s.propose("k", np.random.default_rng(7))
        pts = s.candidates(s.surrogate("k"), np.random.default_rng(7))
        acq = s.acquisition(s.surrogate("k"), pts)
        best = s.acquisition(s.surrogate("k"), x[None, :])[0]
        assert best >= acq.max() - 1e-12
        assert len(pts) == cfg.n_candidates + cfg.n_local

    def test_deterministic(self):
        def run():
            s = Sampler(2)
            rng = np.random.default_rng(5)
            out = []
            for _ in range(12):
                x = s.propose("k", rng)
                s.observe("k", x, -abs(x[0] - 0.3))
                out.append(x)
            return np.array(out)
        np.testing.assert_array_equal(run(), run())

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_optimises_one_dimensional_target(self, seed):
        s = Sampler(1)
        rng = np.random.default_rng(seed)
        best = -np.inf
        for _ in range(30):
            x = s.propose("k", rng)
            t = -abs(x[0] - 0.8)
            s.observe("k", x, t)
            best = max(best, t)
        assert best > -0.05

    def test_surrogates_are_separate(self):
        s = Sampler(1)
        s.observe(0, [0.1], 1.0)
        s.observe(1, [0.2], 2.0)
        assert len(s.surrogate(0)) == 1 and len(s.surrogate(1)) == 1

    def test_log_csv(self):
        s = Sampler(2)
        s.observe(3, [0.25, 0.5], -1.5)
        rows = list(csv.DictReader(io.StringIO(s.log_csv())))
        assert rows == [{"key": "3", "x0": "0.25", "x1": "0.5", "target": "-1.5"}]
