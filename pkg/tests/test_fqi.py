import numpy as np
import pytest
from sklearn.base import clone

from mffqi.envs import DISCRETE_CHAIN, DiscreteChainParams, EnvSpec, collect_batch
from mffqi.exceptions import ContractViolation
from mffqi.fqi import (Batch, FqiConfig, GreedyPolicy, MeanFieldFQI, TransitionRecord, bellman_residual,
                       compute_targets, fqi_step, greedy_action, run_mffqi)
from mffqi.kernels import GAUSSIAN_MMD, LINEAR, BaseKernel, Config, EmbeddingKernel, cross_gram
from mffqi.regression import QModel, fit_krr, predict_batch

BASE = BaseKernel(1.0)
LIN = EmbeddingKernel(LINEAR)


def make_batch(rewards, gamma=0.9, r_max=1.0, actions=None, rng=None, n_agents=3):
    rng = np.random.default_rng(0) if rng is None else rng
    actions = [0] * len(rewards) if actions is None else actions
    records = [TransitionRecord(rng.normal(size=(n_agents, 1)), a, r, rng.normal(size=(n_agents, 1)))
               for a, r in zip(actions, rewards)]
    return Batch(records, r_max, gamma, n_actions=max(actions) + 1)


def two_value_model(v0, v1):
    """Linear-kernel model whose prediction at any (a, [[0.0]]) query is v_a."""
    support = [Config(0, [[0.0]]), Config(1, [[0.0]])]
    return QModel(support, [v0, v1], BASE, LIN, q_max=10.0)


# batch containers


def test_batch_validation():
    with pytest.raises(ContractViolation):
        Batch([], 1.0, 0.9)
    r3 = TransitionRecord(np.zeros((3, 1)), 0, 0.0, np.zeros((3, 1)))
    r2 = TransitionRecord(np.zeros((2, 1)), 0, 0.0, np.zeros((2, 1)))
    with pytest.raises(ContractViolation):
        Batch([r3, r2], 1.0, 0.9)
    with pytest.raises(ContractViolation):
        Batch([r3], 1.0, 1.0)
    with pytest.raises(ContractViolation):
        Batch([TransitionRecord(np.zeros((3, 1)), 0, 1.5, np.zeros((3, 1)))], 1.0, 0.9)
    with pytest.raises(ContractViolation):
        TransitionRecord(np.zeros((3, 1)), 0, 0.0, np.zeros((4, 1)))
    with pytest.raises(ContractViolation):
        Batch([r3], 1.0, 0.9, n_actions=0)
    assert Batch([r3], 2.0, 0.5).q_max == 4.0


def test_fqi_config_contracts():
    with pytest.raises(ContractViolation):
        FqiConfig(kappa=-1)
    with pytest.raises(ContractViolation):
        FqiConfig(kappa=2.5)
    with pytest.raises(ContractViolation):
        FqiConfig(lam=0.0)


# targets


def test_targets_gamma_zero_are_rewards():
    batch = make_batch([0.1, 0.7, 0.3], gamma=0.0)
    q = two_value_model(5.0, 2.0)
    np.testing.assert_array_equal(compute_targets(batch, q), batch.rewards)


def test_targets_zero_model_are_rewards():
    batch = make_batch([0.1, 0.7, 0.3])
    q = QModel.zero(batch.support_configs(), BASE, LIN, batch.q_max)
    np.testing.assert_array_equal(compute_targets(batch, q), batch.rewards)


def test_targets_hand_max():
    record = TransitionRecord([[0.0]], 0, 0.5, [[0.0]])
    batch = Batch([record], 1.0, 0.9, n_actions=2)
    q = two_value_model(1.0, 3.0)
    assert compute_targets(batch, q)[0] == pytest.approx(0.5 + 0.9 * 3.0, abs=1e-15)


def test_targets_bounded_by_q_max(rng):
    batch = make_batch(rng.uniform(0, 1, 30), rng=rng, actions=list(rng.integers(0, 2, 30)))
    q = QModel(batch.support_configs(), rng.normal(0, 50, 30), BASE, LIN, batch.q_max)
    assert np.all(compute_targets(batch, q) <= batch.r_max + batch.gamma * batch.q_max + 1e-12)


def test_targets_cache_count_checked():
    batch = make_batch([0.1, 0.2], actions=[0, 1])
    q = QModel.zero(batch.support_configs(), BASE, LIN)
    with pytest.raises(ContractViolation):
        compute_targets(batch, q, caches=[np.zeros((2, 2))])


# single step


def test_step_zero_rewards_zero_model_is_fixed_point():
    batch = make_batch([0.0, 0.0, 0.0, 0.0])
    emb = EmbeddingKernel(GAUSSIAN_MMD, 0.5)
    support = batch.support_configs()
    gram = cross_gram(support, support, BASE, emb)
    q = fqi_step(batch, QModel.zero(support, BASE, emb), FqiConfig(lam=1e-3), gram, BASE, emb)
    assert np.all(q.alpha == 0.0)


def test_step_single_record():
    emb = EmbeddingKernel(GAUSSIAN_MMD, 0.5)
    record = TransitionRecord([[0.0], [1.0]], 0, 0.4, [[2.0], [0.5]])
    batch = Batch([record], 1.0, 0.9)
    q_prev = QModel([Config(0, [[2.0]])], [1.5], BASE, emb, batch.q_max)
    support = batch.support_configs()
    gram = cross_gram(support, support, BASE, emb)
    lam = 1e-2
    q = fqi_step(batch, q_prev, FqiConfig(lam=lam), gram, BASE, emb)
    t0 = compute_targets(batch, q_prev)[0]
    assert q.alpha[0] == pytest.approx(t0 / (1.0 + lam), rel=1e-14)
    assert [c.states.tolist() for c in q.support] == [c.states.tolist() for c in support]


def test_step_from_zero_recovers_stage_rewards(reference_spec):
    batch = collect_batch(reference_spec, 60)
    support = batch.support_configs()
    base, emb = BaseKernel(1.0), EmbeddingKernel(GAUSSIAN_MMD, 0.5)
    gram = cross_gram(support, support, base, emb)
    q = fqi_step(batch, QModel.zero(support, base, emb, batch.q_max), FqiConfig(lam=1e-8), gram, base, emb)
    np.testing.assert_allclose(predict_batch(q, support), batch.rewards, atol=1e-5)


# full runs


def test_one_iteration_gamma_zero_is_krr_of_rewards(rng):
    batch = make_batch(rng.uniform(0, 1, 12), gamma=0.0, rng=rng)
    cfg = FqiConfig(kappa=1, lam=1e-3, bandwidth=1.0, tau=0.7)
    model, _, _ = run_mffqi(batch, cfg)
    support = batch.support_configs()
    gram = cross_gram(support, support, BASE, EmbeddingKernel(GAUSSIAN_MMD, 0.7))
    np.testing.assert_array_equal(model.alpha, fit_krr(gram=gram, targets=batch.rewards, lam=1e-3))


def test_constant_reward_self_loop_geometric_series():
    c, gamma, kappa = 0.5, 0.9, 10
    params = DiscreteChainParams(n_states=2, transitions=(((1.0, 0.0), (0.0, 1.0)),), reward_weights=((c, c),))
    spec = EnvSpec(DISCRETE_CHAIN, params, n_agents=4, gamma=gamma)
    batch = collect_batch(spec, 200)
    model, _, _ = run_mffqi(batch, FqiConfig(kappa=kappa, lam=1e-8, bandwidth=1.0, tau=0.5))
    expected = c * (1 - gamma**kappa) / (1 - gamma)
    pred = predict_batch(model, batch.support_configs())
    assert np.all(np.abs(pred - expected) <= 0.05 * expected)


def test_target_deltas_contract_under_query_deltas(reference_batch):
    _, _, diag = run_mffqi(reference_batch, FqiConfig(kappa=40, lam=1e-6, bandwidth=1.0))
    gamma = reference_batch.gamma
    assert len(diag.target_deltas) == len(diag.query_deltas) == 39
    for dy, dq in zip(diag.target_deltas, diag.query_deltas):
        assert dy <= gamma * dq + 1e-12


def test_diagnostics_shapes(reference_batch):
    _, _, diag = run_mffqi(reference_batch, FqiConfig(kappa=5, lam=1e-6, bandwidth=1.0), keep_history=True)
    assert len(diag.residuals) == 5 and len(diag.history) == 5
    assert {"gram_seconds", "total_seconds"} <= set(diag.timings)


def test_kappa_zero_gives_zero_model(reference_batch):
    model, _, _ = run_mffqi(reference_batch, FqiConfig(kappa=0, bandwidth=1.0))
    assert np.all(model.alpha == 0.0)
    with pytest.raises(ContractViolation):
        run_mffqi(reference_batch, FqiConfig(kappa=0, bandwidth=1.0, initial_q=1.0))


def test_constant_initial_q_enters_first_targets():
    batch = make_batch([0.0, 0.0, 0.0], gamma=0.5)
    model, _, _ = run_mffqi(batch, FqiConfig(kappa=1, lam=1e-10, bandwidth=1.0, tau=0.5, initial_q=1.0))
    np.testing.assert_allclose(predict_batch(model, batch.support_configs()), 0.5, atol=1e-6)


def test_predictions_bounded_by_q_max(reference_batch, rng):
    model, _, _ = run_mffqi(reference_batch, FqiConfig(kappa=30, lam=1e-6, bandwidth=1.0))
    queries = [Config(int(rng.integers(2)), rng.normal(1.5, 2.0, size=(4, 1))) for _ in range(200)]
    assert np.all(predict_batch(model, queries) <= reference_batch.q_max)


def test_cache_soundness_zero_ulp(reference_batch):
    cfg = FqiConfig(kappa=25, lam=1e-6, bandwidth=1.0)
    a, _, da = run_mffqi(reference_batch, cfg, use_cache=True)
    b, _, db = run_mffqi(reference_batch, cfg, use_cache=False)
    np.testing.assert_array_equal(a.alpha, b.alpha)
    assert da.residuals == db.residuals and da.target_deltas == db.target_deltas


def test_determinism(reference_spec):
    cfg = FqiConfig(kappa=10, lam=1e-6)
    a, _, da = run_mffqi(collect_batch(reference_spec, 80), cfg)
    b, _, db = run_mffqi(collect_batch(reference_spec, 80), cfg)
    np.testing.assert_array_equal(a.alpha, b.alpha)
    assert da.residuals == db.residuals and da.emb == db.emb and da.base == db.base


# greedy policy


def test_single_action_policy():
    model = QModel([Config(0, [[0.0]])], [3.0], BASE, LIN)
    assert greedy_action(GreedyPolicy(model, 1), [[0.0], [1.0]]) == 0


def test_zero_model_ties_go_to_lowest_action():
    model = QModel.zero([Config(0, [[0.0]]), Config(1, [[0.0]])], BASE, LIN)
    assert greedy_action(GreedyPolicy(model, 3), [[0.0]]) == 0


def test_greedy_picks_larger_value():
    policy = GreedyPolicy(two_value_model(0.2, 0.7), 2)
    assert greedy_action(policy, [[0.0]]) == 1
    assert policy([[0.0]]) == 1


def test_policy_permutation_invariant(reference_batch, rng):
    model, policy, _ = run_mffqi(reference_batch, FqiConfig(kappa=20, lam=1e-6, bandwidth=1.0))
    for _ in range(100):
        s = rng.normal(1.5, 2.0, size=(4, 1))
        assert greedy_action(policy, s[rng.permutation(4)]) == greedy_action(policy, s)


# Bellman residual


def test_residual_of_reward_interpolant_gamma_zero():
    rng = np.random.default_rng(3)
    records = [TransitionRecord([[3.0 * i]], i % 2, r, [[3.0 * i + 1]]) for i, r in enumerate(rng.uniform(0, 1, 8))]
    batch = Batch(records, 1.0, 0.0)
    model, _, _ = run_mffqi(batch, FqiConfig(kappa=1, lam=1e-10, bandwidth=1.0, tau=1.0))
    assert bellman_residual(model, batch) <= 1e-3


def test_residual_zero_model_zero_rewards():
    batch = make_batch([0.0, 0.0, 0.0])
    assert bellman_residual(QModel.zero(batch.support_configs(), BASE, LIN), batch) == 0.0


def test_residual_zero_model_unit_rewards():
    batch = make_batch([1.0, 1.0, 1.0])
    assert bellman_residual(QModel.zero(batch.support_configs(), BASE, LIN), batch) == 1.0


# estimator API


def test_estimator(reference_batch):
    est = MeanFieldFQI(kappa=20, lam=1e-6, bandwidth=1.0)
    assert clone(est).get_params() == est.get_params()
    est.fit(reference_batch)
    configs = reference_batch.support_configs()[:5]
    assert est.predict(configs).shape == (5,)
    actions = est.predict_action([c.states for c in configs])
    assert set(actions) <= {0, 1}
    assert est.score(reference_batch) == -bellman_residual(est.model_, reference_batch)
    with pytest.raises(ContractViolation):
        MeanFieldFQI().fit([1, 2, 3])
