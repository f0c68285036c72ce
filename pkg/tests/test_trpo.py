import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pinchcut.toy import BanditEnv
from pinchcut.trpo import (Policy, RolloutBatch, TimeBaseline, TrainConfig, TrainingError,
                           batch_from_episodes, collect_batch, conjugate_gradient, executed,
                           count_params, discounted_returns, fisher_vector_product, load_policy,
                           policy_from_bytes, policy_gradient, policy_to_bytes, save_policy,
                           surrogate_and_kl, train, trpo_update)


def random_batch(policy, n, rng, adv=None):
    obs = rng.normal(size=(n, policy.obs_dim))
    actions = rng.integers(policy.n_actions, size=n)
    advantages = rng.normal(size=n) if adv is None else adv
    old = policy.log_probs(obs)[np.arange(n), actions]
    return RolloutBatch(obs, actions, np.zeros(n), np.zeros(n), advantages, old,
                        np.arange(n), [0.0])


def fd_gradient(policy, batch, eps=1e-5):
    out = np.zeros(policy.n_params)
    for k in range(policy.n_params):
        d = np.zeros(policy.n_params)
        d[k] = eps
        hi = surrogate_and_kl(policy.with_params(policy.params + d), policy, batch)[0]
        lo = surrogate_and_kl(policy.with_params(policy.params - d), policy, batch)[0]
        out[k] = (hi - lo) / (2 * eps)
    return out


def perturbed_policy(seed, obs_dim=3, hidden=(5, 4)):
    rng = np.random.default_rng(seed)
    p = Policy(obs_dim, 4, hidden, rng=rng)
    return p.with_params(p.params + rng.normal(0, 0.5, p.n_params)), rng


def test_param_count_and_shapes():
    p = Policy(53)
    assert p.n_params == count_params(53) == 53 * 32 + 32 + 32 * 32 + 32 + 32 * 4 + 4
    assert p.sizes == (53, 32, 32, 4)


def test_probabilities_normalised():
    p, rng = perturbed_policy(0)
    probs = p.probs(rng.normal(size=(50, 3)) * 10)
    assert (probs > 0).all()
    assert np.abs(probs.sum(axis=1) - 1).max() < 1e-9


@pytest.mark.parametrize("seed", range(3))
def test_gradient_matches_finite_differences(seed):
    p, rng = perturbed_policy(seed)
    batch = random_batch(p, 10, rng)
    g = policy_gradient(p, batch)
    fd = fd_gradient(p, batch)
    assert g.shape == (p.n_params,)
    assert np.abs(g - fd).max() / np.abs(fd).max() < 1e-4


def test_zero_advantage_gives_zero_gradient_and_no_update():
    p, rng = perturbed_policy(1)
    batch = random_batch(p, 10, rng, adv=np.zeros(10))
    assert not policy_gradient(p, batch).any()
    new, info = trpo_update(p, batch, TrainConfig())
    assert np.array_equal(new.params, p.params) and not info.accepted


def test_identity_surrogate_and_kl():
    p, rng = perturbed_policy(2)
    adv = rng.normal(size=20)
    adv = (adv - adv.mean()) / adv.std()
    batch = random_batch(p, 20, rng, adv=adv)
    surr, kl = surrogate_and_kl(p, p, batch)
    assert abs(surr) < 1e-12 and kl == 0.0


def test_kl_matches_hand_computation():
    # one-layer policies with zero weights reduce to softmax(bias)
    def fixed(probs):
        p = Policy(1, 2, hidden=())
        return p.with_params(np.concatenate([[0.0, 0.0], np.log(probs)]))
    old, new = fixed([0.7, 0.3]), fixed([0.4, 0.6])
    batch = RolloutBatch(np.array([[1.0], [-1.0]]), np.array([0, 1]), np.zeros(2), np.zeros(2),
                         np.zeros(2), np.log([0.7, 0.3]), np.arange(2), [0.0])
    _, kl = surrogate_and_kl(new, old, batch)
    expected = 0.7 * np.log(0.7 / 0.4) + 0.3 * np.log(0.3 / 0.6)
    assert kl == pytest.approx(expected, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_kl_nonnegative(seed):
    a, rng = perturbed_policy(seed)
    b = a.with_params(a.params + rng.normal(0, 0.3, a.n_params))
    batch = random_batch(a, 8, rng)
    assert surrogate_and_kl(b, a, batch)[1] >= 0


def test_fisher_product_matches_kl_hessian():
    p, rng = perturbed_policy(3, hidden=(4,))
    obs = rng.normal(size=(6, 3))
    batch = random_batch(p, 6, rng)
    batch.observations[:] = obs
    v = rng.normal(size=p.n_params)
    eps = 1e-4
    kl = lambda t: surrogate_and_kl(p.with_params(p.params + t * v), p, batch)[1]
    second = (kl(eps) - 2 * kl(0) + kl(-eps)) / eps ** 2
    assert v @ fisher_vector_product(p, obs, v) == pytest.approx(second, rel=1e-4)


def test_conjugate_gradient_solves_spd_system():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(6, 6))
    A = A @ A.T + 6 * np.eye(6)
    b = rng.normal(size=6)
    x = conjugate_gradient(lambda v: A @ v, b, iterations=50)
    assert np.allclose(A @ x, b, atol=1e-8)


def test_discounted_returns():
    assert np.array_equal(discounted_returns([0, 0, -5], 1.0), [-5, -5, -5])
    assert np.allclose(discounted_returns([1, 1], 0.5), [1.5, 1.0])


class FixedLengthEnv:
    def __init__(self, length=30, obs_dim=2):
        self.length, self.obs_dim, self.n_actions = length, obs_dim, 4
        self.active_segment = 0

    def reset(self):
        self.t = 0
        return np.zeros(self.obs_dim)

    def step(self, action):
        self.t += 1
        done = self.t == self.length
        return np.full(self.obs_dim, self.t / self.length), -float(action), done

    def result(self):
        return None


def test_whole_episodes_fill_the_batch():
    p = Policy(2, 4, (8,))
    batch = collect_batch(lambda s: FixedLengthEnv(), p, TrainConfig(batch_size=50),
                          np.random.default_rng(0))
    assert len(batch) == 60
    n = len(batch)
    for arr in (batch.observations, batch.actions, batch.rewards, batch.returns,
                batch.advantages, batch.old_log_probs):
        assert len(arr) == n
    assert abs(batch.advantages.mean()) < 1e-9
    assert abs(batch.advantages.var() - 1) < 1e-6


def test_time_baseline_is_a_running_mean():
    b = TimeBaseline()
    b.update(np.array([0, 1]), np.array([2.0, 4.0]))
    b.update(np.array([0]), np.array([4.0]))
    assert np.allclose(b(np.array([0, 1, 2])), [3.0, 4.0, 0.0])


def test_batch_normalisation_handles_constant_returns():
    p = Policy(1, 2, (4,))
    eps = [[(np.ones(1), 0, 1.0)], [(np.ones(1), 1, 1.0)]]
    batch = batch_from_episodes(p, eps, 1.0)
    assert not batch.advantages.any()


def test_bandit_learns_best_arm_within_trust_region():
    cfg = TrainConfig()
    result = train(lambda s: BanditEnv(), cfg)
    assert len(result.mean_returns) == 20
    assert result.policy.probs(np.ones(1))[0, 0] > 0.9
    for u in result.updates:
        if u.accepted:
            assert u.kl <= cfg.max_kl
            assert u.surrogate_after > u.surrogate_before
    tail = result.mean_returns[-5:]
    assert all(b >= a - 0.05 for a, b in zip(tail, tail[1:]))


def test_training_is_seeded():
    cfg = TrainConfig(iterations=3, batch_size=50)
    a = train(lambda s: BanditEnv(), cfg).policy
    b = train(lambda s: BanditEnv(), cfg).policy
    c = train(lambda s: BanditEnv(), TrainConfig(iterations=3, batch_size=50, seed=1)).policy
    assert np.array_equal(a.params, b.params)
    assert not np.array_equal(a.params, c.params)


def test_non_finite_batch_aborts():
    p, rng = perturbed_policy(4)
    batch = random_batch(p, 5, rng, adv=np.array([1.0, np.nan, 0, 0, 0]))
    with pytest.raises(TrainingError):
        trpo_update(p, batch, TrainConfig())


def test_serialisation_round_trip(tmp_path):
    p, _ = perturbed_policy(5)
    data = policy_to_bytes(p)
    assert data[:8] == b"PCPOLICY"
    q = policy_from_bytes(data)
    assert q.sizes == p.sizes and np.array_equal(q.params, p.params)
    save_policy(p, tmp_path / "p.policy")
    assert np.array_equal(load_policy(tmp_path / "p.policy").params, p.params)
    with pytest.raises(ValueError):
        policy_from_bytes(b"NOTAPOLICY" + data[8:])
    with pytest.raises(ValueError):
        policy_from_bytes(data + b"\0")


def test_greedy_policy_takes_most_likely_action():
    p, rng = perturbed_policy(6)
    g = executed(p)
    obs = rng.normal(size=(20, 3))
    for o in obs:
        assert g.act(o, rng) == int(np.argmax(p.probs(o)[0]))
    assert executed({0: p, 1: None}, greedy=False) == {0: p, 1: None}
    assert executed(None) is None
