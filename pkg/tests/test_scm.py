import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from rehearsal.graph import DirectedAcyclicGraph, StructuralError
from rehearsal.scm import (AufTask, LinearFunction, LinearGaussianSEM, NoiseSpec, StructuralModel,
                           ZeroFunction, box_region, dump_json, load_json, sample_interventional,
                           sample_observational, true_success)
from rehearsal.synth import AufBenchConfig, OrderBenchConfig, gen_auf_task, gen_order_task


def chain_model(w=1.0, sigma=(1.0, 1.0)):
    g = DirectedAcyclicGraph.from_edges(2, [(0, 1)])
    return StructuralModel(g, (ZeroFunction(), LinearFunction([0], [w])),
                           tuple(NoiseSpec("gaussian", (s,)) for s in sigma))


def chain_task(alterable=(0,), roles=("intermediate", "outcome")):
    M, d = box_region([-1.0], [1.0])
    return AufTask(roles, alterable, np.array([-5.0]), np.array([5.0]), M, d)


class TestObservational:
    def test_single_standard_normal(self):
        g = DirectedAcyclicGraph(1)
        m = StructuralModel(g, (ZeroFunction(),), (NoiseSpec("gaussian", (1.0,)),))
        V = sample_observational(m, 100_000, 0)
        assert abs(V.mean()) <= 0.02 and 0.97 <= V.var() <= 1.03

    def test_sum_variance(self):
        V = sample_observational(chain_model(), 100_000, 1)
        assert abs(V[:, 1].var() - 2.0) <= 0.1

    def test_zero_samples_rejected(self):
        with pytest.raises(ValueError):
            sample_observational(chain_model(), 0, 0)

    def test_bitwise_reproducible(self):
        m = gen_order_task(OrderBenchConfig(d=6, n=200), 3)
        np.testing.assert_array_equal(sample_observational(m, 50, 9), sample_observational(m, 50, 9))

    def test_function_parents_must_match_graph(self):
        g = DirectedAcyclicGraph.from_edges(2, [(0, 1)])
        with pytest.raises(StructuralError):
            StructuralModel(g, (ZeroFunction(), ZeroFunction()), (NoiseSpec("gaussian", (1.0,)),) * 2)


class TestInterventional:
    def test_post_intervention_mean(self):
        m = chain_model()
        task = chain_task()
        n = 20_000
        V = sample_interventional(m, task, [], [5.0], n, 2)
        assert np.all(V[:, 0] == 5.0)
        assert abs(V[:, 1].mean() - 5.0) <= 3 / np.sqrt(n)

    def test_sink_intervention_leaves_rest_observational(self):
        m = chain_model()
        task = chain_task(alterable=(1,), roles=("outcome", "intermediate"))
        V = sample_interventional(m, task, [], [3.0], 5000, 4)
        W = sample_observational(m, 5000, 4)
        np.testing.assert_array_equal(V[:, 0], W[:, 0])

    def test_wrong_length_decision(self):
        with pytest.raises(ValueError):
            sample_interventional(chain_model(), chain_task(), [], [1.0, 2.0], 10, 0)

    @settings(max_examples=10)
    @given(st.integers(0, 10_000))
    def test_intervention_locality(self, seed):
        cfg = AufBenchConfig(setting="linear", noise="gaussian", d=6, n=200)
        m, task = gen_auf_task(cfg, seed)
        from rehearsal.scm import descendants_of_set
        z = task.domain_hi.copy()
        moved = descendants_of_set(m.graph, list(task.alterable))
        fixed_nd = [v for v in range(m.d) if v not in moved]
        x = np.zeros(len(task.context))
        V = sample_interventional(m, task, x, z, 10_000, seed)
        W = m.simulate(m.draw_noise(10_000, seed + 1), dict(zip(task.context, x)))
        for v in fixed_nd:
            if v in task.alterable or v in task.context:
                continue
            assert stats.ttest_ind(V[:, v], W[:, v]).pvalue > 0.001


class TestTask:
    def test_context_constraint(self):
        M, d = box_region([-1.0], [1.0])
        task = AufTask(("outcome", "context"), (), np.zeros(0), np.zeros(0), M, d)
        with pytest.raises(StructuralError):
            task.validate_graph(DirectedAcyclicGraph.from_edges(2, [(0, 1)]))

    def test_alterable_must_be_intermediate(self):
        M, d = box_region([-1.0], [1.0])
        with pytest.raises(ValueError):
            AufTask(("intermediate", "outcome"), (1,), np.zeros(1), np.ones(1), M, d)

    def test_empty_domain_rejected(self):
        M, d = box_region([-1.0], [1.0])
        with pytest.raises(ValueError):
            AufTask(("intermediate", "outcome"), (0,), np.ones(1), np.zeros(1), M, d)

    def test_box_encoding(self):
        M, d = box_region([-1.0], [1.0])
        np.testing.assert_array_equal(M, [[1.0], [-1.0]])
        np.testing.assert_array_equal(d, [1.0, 1.0])

    def test_true_success_bounds(self):
        s = true_success(chain_model(), chain_task(), [], [0.0], 2000, 0)
        # V1 ~ N(0, 1): P(|V1| <= 1) ~= 0.6827
        assert abs(s - 0.6827) < 0.04


class TestNoise:
    def test_exponential_mean(self):
        x = NoiseSpec("exponential", (1.2,)).sample(np.random.default_rng(0), 100_000)
        assert abs(x.mean() - 1 / 1.2) <= 0.03 / 1.2

    def test_beta_support(self):
        x = NoiseSpec("beta", (0.8, 1.1)).sample(np.random.default_rng(0), 10_000)
        assert np.all((x > 0) & (x < 1))

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            NoiseSpec("exponential", (-1.0,))

    @pytest.mark.parametrize("spec", [NoiseSpec("gaussian", (0.8,)), NoiseSpec("exponential", (1.1,)),
                                      NoiseSpec("beta", (0.9, 1.2)), NoiseSpec("beta", (0.9, 1.2), True)])
    def test_quantile_transform_matches_law(self, spec):
        z = np.random.default_rng(1).standard_normal(20_000)
        direct = spec.sample(np.random.default_rng(2), 20_000)
        assert stats.ks_2samp(spec.from_standard_normal(z), direct).pvalue > 0.001

    def test_centering(self):
        spec = NoiseSpec("exponential", (0.9,), True)
        assert abs(spec.sample(np.random.default_rng(0), 100_000).mean()) < 0.02
        assert spec.mean == pytest.approx(0.0)


class TestSerialization:
    def test_roundtrip_preserves_outputs(self, tmp_path):
        cfg = OrderBenchConfig(d=5, r=0.5, n=100)
        m = gen_order_task(cfg, 11)
        m2, _ = load_json_roundtrip(tmp_path, m)
        noise = m.draw_noise(30, 0)
        np.testing.assert_allclose(m.simulate(noise), m2.simulate(noise), atol=1e-12)

    def test_task_roundtrip(self, tmp_path):
        m, task = gen_auf_task(AufBenchConfig(setting="nonlinear", d=6, n=100), 5)
        m2, t2 = load_json_roundtrip(tmp_path, m, task)
        assert t2.roles == task.roles and t2.alterable == task.alterable
        np.testing.assert_array_equal(t2.region_M, task.region_M)
        noise = m.draw_noise(20, 1)
        np.testing.assert_allclose(m.simulate(noise), m2.simulate(noise), atol=1e-12)


def load_json_roundtrip(tmp_path, m, task=None):
    p = tmp_path / "model.json"
    dump_json(p, m, task)
    return load_json(p)


def test_linear_gaussian_covariance_matches_samples():
    W = np.array([[0, 0.8, 0.0], [0, 0, -0.5], [0, 0, 0]])
    m = LinearGaussianSEM(W, np.array([1.0, 0.5, 0.7])).build()
    V = sample_observational(m, 200_000, 3)
    np.testing.assert_allclose(np.cov(V.T), m.covariance(), atol=0.02)
