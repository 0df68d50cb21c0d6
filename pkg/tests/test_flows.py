import json

import numpy as np
import pytest
from scipy import stats

from rehearsal.autodiff import tensor as T
from rehearsal.flows import (ConditionalFlow, FlowStack, JointSampler, StructuralConditional, TrainConfig,
                             build_joint_sampler, exact_sampler, fit_flow, fit_flow_stack)
from rehearsal.graph import Order
from rehearsal.scm import sample_interventional
from rehearsal.synth import AufBenchConfig, gen_auf_task

from oracles import grad_close, numeric_grad

SMALL = dict(n_blocks=4, width=8, depth=1, max_epochs=40, patience=10)


@pytest.fixture(scope="module")
def linear_flow():
    r = np.random.default_rng(0)
    c = r.normal(size=2000)
    y = 2.0 * c + 0.5 * r.normal(size=2000)
    return ConditionalFlow(n_blocks=6, width=16, max_epochs=150, random_state=0).fit(c[:, None], y)


@pytest.fixture(scope="module")
def root_flow():
    y = np.random.default_rng(1).exponential(size=2000)
    return ConditionalFlow(n_blocks=8, width=16, max_epochs=300, random_state=1).fit(None, y)


def test_inverse_roundtrip(linear_flow, rng):
    u = rng.standard_normal(200)
    C = rng.normal(size=(200, 1))
    v = linear_flow.forward(u, C)
    back, _ = linear_flow.inverse(v, C)
    np.testing.assert_allclose(back, u, atol=1e-8)


def test_logdet_matches_numeric_derivative(linear_flow, rng):
    y = rng.normal(size=20)
    C = rng.normal(size=(20, 1))
    _, logdet = linear_flow.inverse(y, C)
    h = 1e-5
    up, _ = linear_flow.inverse(y + h, C)
    dn, _ = linear_flow.inverse(y - h, C)
    np.testing.assert_allclose(logdet, np.log((up - dn) / (2 * h)), atol=1e-5)


def test_monotone_in_noise(linear_flow):
    u = np.linspace(-4, 4, 400)
    v = linear_flow.forward(u, np.full((400, 1), 0.5))
    assert np.all(np.diff(v) > 0)


def test_conditional_mean_tracks_parent(linear_flow):
    u = np.random.default_rng(5).standard_normal(4000)
    for c in (-1.0, 0.0, 1.0):
        m = linear_flow.forward(u, np.full((4000, 1), c)).mean()
        assert abs(m - 2 * c) < 0.15


def test_tape_gradient_wrt_condition(linear_flow, rng):
    u = rng.standard_normal(5)
    c0 = rng.normal(size=(5, 1))
    ct = T.parameter(c0)
    (g,) = T.grad(T.tsum(linear_flow.forward_tape(u, ct)), [ct])
    num = numeric_grad(lambda c: linear_flow.forward(u, c).sum(), c0)
    assert grad_close(g, num, rtol=1e-4, atol=1e-6)


def test_root_flow_fits_skewed_law(root_flow):
    # a smooth flow cannot reproduce the hard edge at zero, so bound the sup-distance instead
    s = root_flow.sample(n=3000, seed=2)
    assert stats.kstest(s, stats.expon.cdf).statistic < 0.08


def test_log_prob_integrates_to_one(root_flow):
    grid = np.linspace(-3, 12, 6001)
    p = np.exp(root_flow.log_prob(grid))
    assert abs(np.trapezoid(p, grid) - 1.0) < 0.02


def test_curves_and_best_epoch(root_flow):
    assert len(root_flow.train_curve_) == len(root_flow.val_curve_) >= 1
    assert root_flow.restarts_ == 0


def test_too_few_samples():
    with pytest.raises(ValueError):
        ConditionalFlow().fit(None, np.zeros(10))


def test_nonfinite_training_data():
    y = np.ones(100)
    y[3] = np.inf
    with pytest.raises(ValueError):
        ConditionalFlow().fit(None, y)


def test_wrong_condition_width(linear_flow):
    with pytest.raises(ValueError):
        linear_flow.forward(np.zeros(3), np.zeros((3, 2)))


def test_unfitted():
    from sklearn.exceptions import NotFittedError
    with pytest.raises(NotFittedError):
        ConditionalFlow().forward(np.zeros(3))


def test_serialization_roundtrip(linear_flow, rng):
    f2 = ConditionalFlow.from_dict(json.loads(json.dumps(linear_flow.to_dict())))
    u, C = rng.standard_normal(10), rng.normal(size=(10, 1))
    np.testing.assert_array_equal(f2.forward(u, C), linear_flow.forward(u, C))


def test_fit_is_deterministic():
    y = np.random.default_rng(3).normal(size=300)
    a = ConditionalFlow(**SMALL, random_state=4).fit(None, y)
    b = ConditionalFlow(**SMALL, random_state=4).fit(None, y)
    np.testing.assert_array_equal(a.forward(np.linspace(-2, 2, 5)), b.forward(np.linspace(-2, 2, 5)))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(train_fraction=0.5, val_fraction=0.3)
    with pytest.raises(ValueError):
        TrainConfig(blocks=0)


# --------------------------------------------------------------- stacks

@pytest.fixture(scope="module")
def task_setup():
    model, task = gen_auf_task(AufBenchConfig(setting="linear", d=5, n=600), 7)
    from rehearsal.scm import sample_observational
    X = sample_observational(model, 600, 1)
    return model, task, X


def test_stack_roundtrip_and_version(task_setup, tmp_path):
    model, task, X = task_setup
    cfg = TrainConfig(blocks=3, width=8, depth=1, max_epochs=10, patience=5)
    stack = fit_flow_stack(X, model.order, cfg, seed=0)
    p = tmp_path / "stack.json"
    stack.save(p)
    again = FlowStack.load(p)
    noise = np.random.default_rng(0).standard_normal((20, task.d))
    s1 = build_joint_sampler(stack, task).sample(noise, np.zeros(len(task.context)), task.domain_mid)
    s2 = build_joint_sampler(again, task).sample(noise, np.zeros(len(task.context)), task.domain_mid)
    np.testing.assert_array_equal(s1, s2)
    blob = stack.to_dict()
    blob["version"] = 99
    with pytest.raises(ValueError, match="version"):
        FlowStack.from_dict(blob)


def test_fit_flow_uses_predecessors(task_setup):
    model, task, X = task_setup
    order = model.order
    last = order.perm[-1]
    f = fit_flow(X, order, last, TrainConfig(blocks=2, width=4, depth=1, max_epochs=3, patience=2))
    assert f.arity_ == task.d - 1


def test_parallel_stack_matches_serial(task_setup):
    model, task, X = task_setup
    cfg = TrainConfig(blocks=2, width=4, depth=1, max_epochs=5, patience=3)
    a = fit_flow_stack(X, model.order, cfg, seed=3, jobs=1)
    b = fit_flow_stack(X, model.order, cfg, seed=3, jobs=2)
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())


# ------------------------------------------------------------- sampler

def test_exact_sampler_matches_interventional_law(task_setup):
    model, task, _ = task_setup
    s = exact_sampler(model, task)
    x = np.zeros(len(task.context))
    z = task.domain_hi
    Y = s.sample(np.random.default_rng(2).standard_normal((20_000, task.d)), x, z)
    V = sample_interventional(model, task, x, z, 20_000, 3)
    for v in range(task.d):
        if np.ptp(V[:, v]) > 0:
            assert stats.ks_2samp(Y[:, v], V[:, v]).pvalue > 1e-3
        else:
            np.testing.assert_allclose(Y[:, v], V[:, v])


def test_batched_decisions_equal_single_runs(task_setup):
    model, task, _ = task_setup
    s = exact_sampler(model, task)
    x = np.zeros(len(task.context))
    Z = np.vstack([task.domain_lo, task.domain_mid, task.domain_hi])
    noise = np.random.default_rng(4).standard_normal((3 * 50, task.d))
    batched = s.sample_y(noise, x, Z)
    for r in range(3):
        np.testing.assert_allclose(batched[50 * r:50 * (r + 1)], s.sample_y(noise[50 * r:50 * (r + 1)], x, Z[r]))


def test_cache_reproduces_full_run(task_setup):
    model, task, _ = task_setup
    s = exact_sampler(model, task)
    x = np.ones(len(task.context))
    noise = np.random.default_rng(5).standard_normal((40, task.d))
    cache = s.precompute(noise, x, s.needed_for_y)
    a = s.sample_y_tape(noise, x, task.domain_mid, cache).numpy()
    np.testing.assert_allclose(a, s.sample_y(noise, x, task.domain_mid))
    assert not (set(cache) & s.dependent)


def test_sampler_rejects_order_violation(task_setup):
    model, task, _ = task_setup
    conds = {i: StructuralConditional(model.functions[i], model.noises[i]) for i in range(model.d)}
    with pytest.raises(ValueError):
        JointSampler(Order(tuple(reversed(model.order.perm))), conds, task)


def test_sampler_shape_checks(task_setup):
    model, task, _ = task_setup
    s = exact_sampler(model, task)
    with pytest.raises(ValueError):
        s.sample(np.zeros((4, task.d + 1)), np.zeros(len(task.context)), task.domain_mid)
    with pytest.raises(ValueError):
        s.sample(np.zeros((4, task.d)), np.zeros(len(task.context)), np.zeros(len(task.alterable) + 1))


def test_independent_target_reaches_gaussian_floor():
    r = np.random.default_rng(21)
    C, y = r.normal(size=(2000, 1)), r.standard_normal(2000)
    f = ConditionalFlow(random_state=0).fit(C, y)
    Ct, yt = r.normal(size=(5000, 1)), r.standard_normal(5000)
    assert abs(-f.score(Ct, yt) - 1.4189) <= 0.05


def test_additive_target_mean_at_two():
    r = np.random.default_rng(22)
    c = r.standard_normal(2000)
    f = ConditionalFlow(random_state=0).fit(c[:, None], c + r.standard_normal(2000))
    m = f.sample(np.full((10_000, 1), 2.0), seed=1).mean()
    assert 1.8 <= m <= 2.2


def _lg_chain_task():
    from rehearsal.graph import DirectedAcyclicGraph
    from rehearsal.scm import AufTask, LinearGaussianSEM, box_region
    W = np.array([[0, 0.7, 0.0, 0.0], [0, 0, 1.5, 0.4], [0, 0, 0, -0.8], [0, 0, 0, 0]])
    model = LinearGaussianSEM(W, np.array([1.0, 0.6, 0.8, 0.5])).build()
    M, d = box_region([-1.0], [1.0])
    task = AufTask(("context", "intermediate", "intermediate", "outcome"), (1,), np.array([-2.0]),
                   np.array([2.0]), M, d)
    return W, model, task


def test_exact_sampler_matches_analytic_post_decision_covariance():
    from oracles import interventional_moments
    W, model, task = _lg_chain_task()
    x, z = np.array([0.5]), np.array([1.0])
    V = exact_sampler(model, task).sample(np.random.default_rng(0).standard_normal((10_000, 4)), x, z)
    np.testing.assert_array_equal(V[:, 1], 1.0)
    np.testing.assert_array_equal(V[:, 0], 0.5)
    _, C = interventional_moments(W, np.array([1.0, 0.6, 0.8, 0.5]), {0: 0.5, 1: 1.0})
    free = [2, 3]
    S, A = np.cov(V[:, free].T), C[np.ix_(free, free)]
    assert np.linalg.norm(S - A) <= 0.1 * np.linalg.norm(A)


def test_decision_shift_moves_outcome_by_path_weight():
    W, model, task = _lg_chain_task()
    s = exact_sampler(model, task)
    noise = np.random.default_rng(1).standard_normal((20_000, 4))
    delta = 0.5
    a = s.sample_y(noise, [0.0], [0.0]).mean()
    b = s.sample_y(noise, [0.0], [delta]).mean()
    # paths from node 1 to 3: 1 -> 3 (0.4) and 1 -> 2 -> 3 (1.5 * -0.8)
    assert b - a == pytest.approx((0.4 + 1.5 * -0.8) * delta, abs=1e-9)


def test_y_block_matches_joint_sample():
    _, model, task = _lg_chain_task()
    s = exact_sampler(model, task)
    noise = np.random.default_rng(2).standard_normal((100, 4))
    np.testing.assert_array_equal(s.sample_y(noise, [0.2], [0.3]), s.sample(noise, [0.2], [0.3])[:, [3]])
    np.testing.assert_array_equal(s.sample_y(noise, [0.2], [0.3]), s.sample_y(noise, [0.2], [0.3]))


def test_all_context_sampler_returns_x():
    from rehearsal.graph import DirectedAcyclicGraph
    from rehearsal.scm import AufTask, LinearGaussianSEM
    model = LinearGaussianSEM(np.array([[0, 1.0], [0, 0]]), np.ones(2)).build()
    task = AufTask(("context", "context"), (), np.zeros(0), np.zeros(0), np.zeros((0, 0)), np.zeros(0))
    V = exact_sampler(model, task).sample(np.zeros((5, 2)), [1.5, -2.0], np.zeros(0))
    np.testing.assert_array_equal(V, np.tile([1.5, -2.0], (5, 1)))
