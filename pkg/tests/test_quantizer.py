import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scalarquant.approx_solver import Scheme
from scalarquant.density import Density
from scalarquant.errors import InvalidInitError
from scalarquant.quantizer import (EVEN, ODD, Codebook, RunConfig, RunTrace, abeo_half_sweep,
                                   approx_updater, boundaries, init_levels, k_prime,
                                   random_init, run)

# Beta(2,4), AEQ, K=8 from the equispaced start (threshold 1e-13)
BETA24_AEQ_K8 = [0.0, 0.16055355812009794, 0.25324919812009505, 0.3456424357669572,
                 0.4426573316602672, 0.5488419880412565, 0.6705592120934625,
                 0.8176302170218928, 1.0]


class TestInit:
    def test_aeq_k4(self):
        np.testing.assert_array_equal(init_levels(RunConfig(K=4, scheme="aeq")).levels,
                                      [0, 0.25, 0.5, 0.75, 1])

    def test_alm_k3_has_two_references(self):
        np.testing.assert_array_equal(init_levels(RunConfig(K=3, scheme="alm")).levels,
                                      [0, 0.25, 0.5, 0.75, 1])

    def test_aeq_k1_only_references(self):
        np.testing.assert_array_equal(init_levels(RunConfig(K=1, scheme="aeq")).levels, [0, 1])

    @pytest.mark.parametrize("levels", [[0, 0.6, 0.4, 1], [0.1, 0.4, 0.6, 1],
                                        [0, 0.4, 0.6, 0.9], [0, 0.5, 1]])
    def test_invalid_explicit(self, levels):
        with pytest.raises(InvalidInitError):
            init_levels(RunConfig(K=2, scheme="alm", init=levels))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            RunConfig(K=0)
        with pytest.raises(ValueError):
            RunConfig(K=2, threshold=-1.0)
        with pytest.raises(ValueError):
            RunConfig(K=2, max_iter=0)

    def test_k_prime(self):
        assert k_prime(5, Scheme.ALM) == 6 and k_prime(5, Scheme.AEQ) == 5


class TestHalfSweep:
    def test_uniform_interior_midpoints(self):
        cb = Codebook(Scheme.AEQ, [0, 0.1, 0.5, 0.6, 0.9, 1.0], 5)
        new, theta = abeo_half_sweep(cb, Density.uniform(), ODD)
        np.testing.assert_allclose(new.levels[[1, 3]], [0.25, 0.7], atol=1e-14)
        np.testing.assert_allclose(theta[[0, 2]], 0.5, atol=1e-13)
        assert np.all(np.isnan(theta[[1, 3]]))

    def test_alm_first_level_two_thirds_row(self):
        cb = Codebook(Scheme.ALM, [0, 0.1, 0.45, 0.7, 1.0], 3)
        new, theta = abeo_half_sweep(cb, Density.uniform(), ODD)
        assert new.levels[1] == pytest.approx(0.45 / 3, abs=1e-14)
        assert theta[0] == pytest.approx(2 / 3, abs=1e-13)
        # last designed level: q3 <- q2/3 + 2 q4/3
        assert new.levels[3] == pytest.approx(0.45 / 3 + 2 / 3, abs=1e-14)
        assert theta[2] == pytest.approx(1 / 3, abs=1e-13)

    def test_references_and_other_parity_untouched(self, rng):
        from conftest import random_density

        for _ in range(20):
            d = random_density(rng)
            scheme = Scheme.ALM if rng.random() < 0.5 else Scheme.AEQ
            K = int(rng.integers(2, 12))
            cb = Codebook(scheme, random_init(K, scheme, rng), K)
            for parity in (ODD, EVEN):
                new, _ = abeo_half_sweep(cb, d, parity)
                assert new.levels[0] == 0.0 and new.levels[-1] == 1.0
                other = np.arange(2 if parity == ODD else 1, cb.k_prime, 2)
                np.testing.assert_array_equal(new.levels[other], cb.levels[other])
                assert np.all(np.diff(new.levels) >= 0)

    def test_order_independent(self):
        d = Density.beta(2, 4)
        q = np.linspace(0, 1, 10)
        update = approx_updater(d, Scheme.ALM, 8)
        idx = np.array([1, 3, 5, 7])
        forward = update(q, idx)
        backward = update(q, idx[::-1])[::-1]
        np.testing.assert_array_equal(forward, backward)


class TestRun:
    def test_uniform_alm_k3(self):
        cb, trace = run(RunConfig(K=3), Density.uniform())
        np.testing.assert_allclose(cb.levels, [0, 1 / 6, 1 / 2, 5 / 6, 1], atol=1e-12)
        assert trace.converged and trace.stop_reason == "threshold"

    def test_uniform_aeq_k4_already_fixed(self):
        cb, trace = run(RunConfig(K=4, scheme="aeq"), Density.uniform())
        np.testing.assert_allclose(cb.levels, [0, 0.25, 0.5, 0.75, 1], atol=1e-15)
        assert trace.iterations == 1

    def test_beta24_aeq_k8_frozen(self):
        cb, _ = run(RunConfig(K=8, scheme="aeq", max_iter=5000, threshold=1e-13,
                              record_cost=False), Density.beta(2, 4))
        np.testing.assert_allclose(cb.levels, BETA24_AEQ_K8, atol=1e-10)

    def test_beta24_aeq_concentrates_near_peak(self):
        cb, _ = run(RunConfig(K=8, scheme="aeq", max_iter=2000), Density.beta(2, 4))
        gaps = np.diff(cb.levels)
        mid = 0.5 * (cb.levels[1:] + cb.levels[:-1])
        assert gaps[np.argmin(np.abs(mid - 0.25))] < gaps[-1]

    def test_max_iter_is_not_an_error(self):
        cb, trace = run(RunConfig(K=16, max_iter=3), Density.beta(2, 4))
        assert not trace.converged and trace.iterations == 3 and trace.stop_reason == "max_iter"

    @pytest.mark.parametrize("scheme,K,expected", [("alm", 1, [0, 0.5, 1]),
                                                   ("alm", 2, [0, 0.25, 0.75, 1]),
                                                   ("aeq", 1, [0, 1]),
                                                   ("aeq", 2, [0, 0.5, 1])])
    def test_small_k(self, scheme, K, expected):
        cb, trace = run(RunConfig(K=K, scheme=scheme, max_iter=200), Density.uniform())
        np.testing.assert_allclose(cb.levels, expected, atol=1e-10)
        assert trace.converged

    def test_uniform_contraction_one_third(self, rng):
        _, trace = run(RunConfig(K=3, init=random_init(3, Scheme.ALM, rng), record_cost=False),
                       Density.uniform())
        ch = trace.changes
        ch = ch[ch > 1e-12]
        assert ch[-1] / ch[-2] == pytest.approx(1 / 3, abs=0.02)

    @pytest.mark.parametrize("spec,scheme,K", [("beta:2,4", "aeq", 8), ("truncnorm:0.5,0.3", "alm", 6),
                                               ("truncexp:3", "alm", 5)])
    def test_initialization_independent(self, rng, spec, scheme, K):
        d = Density.parse(spec)
        out = [run(RunConfig(K=K, scheme=scheme, max_iter=20_000, threshold=1e-12,
                             init=random_init(K, Scheme.parse(scheme), rng), record_cost=False),
                   d)[0].levels for _ in range(2)]
        np.testing.assert_allclose(out[0], out[1], atol=1e-7)

    def test_uniform_cost_monotone(self, rng):
        # the chord is exact for a flat density, so every step is a true coordinate descent
        for scheme in Scheme:
            _, trace = run(RunConfig(K=6, scheme=scheme, init=random_init(6, scheme, rng)),
                           Density.uniform())
            assert np.all(np.diff(trace.costs) <= 1e-10)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), K=st.integers(1, 12), scheme=st.sampled_from(list(Scheme)))
def test_theta_strictly_inside_and_ordering_kept(seed, K, scheme):
    from conftest import random_density

    rng = np.random.default_rng(seed)
    d = random_density(rng)
    _, trace = run(RunConfig(K=K, scheme=scheme, max_iter=60, init=random_init(K, scheme, rng),
                             record_cost=False), d)
    if trace.records:
        th = trace.thetas
        assert np.all((th > 0.0) & (th < 1.0))
    for levels in trace.level_history():
        assert np.all(np.diff(levels) >= 0.0)
        assert levels[0] == 0.0 and levels[-1] == 1.0


class TestBoundaries:
    def test_alm(self):
        cb = Codebook(Scheme.ALM, [0, 1 / 6, 1 / 2, 5 / 6, 1], 3)
        np.testing.assert_allclose(boundaries(cb), [0, 1 / 3, 2 / 3, 1])

    def test_aeq(self):
        np.testing.assert_array_equal(boundaries(Codebook(Scheme.AEQ, [0, 0.5, 1], 2)), [0, 0.5, 1])

    def test_alm_k1(self):
        np.testing.assert_array_equal(boundaries(Codebook(Scheme.ALM, [0, 0.4, 1], 1)), [0, 1])


class TestSerialization:
    def test_codebook_json_round_trip(self):
        cb = Codebook(Scheme.AEQ, BETA24_AEQ_K8, 8)
        rec = cb.to_dict()
        assert set(rec) == {"scheme", "K", "levels", "boundaries"}
        assert Codebook.from_json(cb.to_json()) == cb

    def test_codebook_is_immutable(self):
        cb = Codebook(Scheme.ALM, [0, 0.5, 1], 1)
        with pytest.raises(ValueError):
            cb.levels[1] = 0.3

    def test_wrong_length(self):
        with pytest.raises(InvalidInitError):
            Codebook(Scheme.ALM, [0, 0.5, 1], 2)

    def test_trace_csv_round_trip(self):
        _, trace = run(RunConfig(K=5, scheme="alm", max_iter=7), Density.beta(2, 2))
        text = trace.to_csv()
        header = text.splitlines()[0].split(",")
        assert header[:2] == ["iter", "level_0"]
        assert header[-2:] == ["cost", "linf_change"]
        assert [h for h in header if h.startswith("theta_")] == [f"theta_{i}" for i in range(1, 6)]
        back = RunTrace.read_csv(io.StringIO(text), initial=trace.initial)
        np.testing.assert_array_equal(back.level_history(), trace.level_history())
        np.testing.assert_array_equal(back.thetas, trace.thetas)
        np.testing.assert_array_equal(back.costs, trace.costs)
