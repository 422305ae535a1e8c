import numpy as np
import pytest
import torch

from latgrid.ppo import (ActorCritic, PPOConfig, RolloutBuffer, compute_advantages,
                         ppo_update)


def brute_force_gae(rewards, values, dones, last_value, gamma, lam):
    """O(T^2) reference: adv_t = sum_l (gamma*lam)^l * delta_{t+l} within episode."""
    T = len(rewards)
    deltas = np.zeros(T)
    for t in range(T):
        nxt = last_value if t == T - 1 else values[t + 1]
        deltas[t] = rewards[t] + gamma * nxt * (0.0 if dones[t] else 1.0) - values[t]
    adv = np.zeros(T)
    for t in range(T):
        acc = 0.0
        coef = 1.0
        for l in range(t, T):
            acc += coef * deltas[l]
            if dones[l]:
                break
            coef *= gamma * lam
        adv[t] = acc
    return adv


def test_gae_matches_brute_force_random_buffers():
    rng = np.random.default_rng(0)
    for _ in range(25):
        T = int(rng.integers(3, 40))
        rewards = rng.normal(size=T)
        values = rng.normal(size=T)
        dones = rng.random(T) < 0.2
        last_value = float(rng.normal())
        gamma, lam = 0.99, 0.95
        adv, ret = compute_advantages(rewards, values, dones, last_value, gamma, lam)
        want = brute_force_gae(rewards, values, dones, last_value, gamma, lam)
        np.testing.assert_allclose(adv, want, rtol=1e-10)
        np.testing.assert_allclose(ret, want + values, rtol=1e-10)


def test_gae_lambda_one_telescopes_to_discounted_return():
    rng = np.random.default_rng(1)
    T = 12
    rewards = rng.normal(size=T)
    values = rng.normal(size=T)
    dones = np.zeros(T, dtype=bool)
    dones[-1] = True  # single full episode
    adv, _ = compute_advantages(rewards, values, dones, 0.0, 0.99, 1.0)
    returns = np.zeros(T)
    acc = 0.0
    for t in reversed(range(T)):
        acc = rewards[t] + 0.99 * acc
        returns[t] = acc
    np.testing.assert_allclose(adv, returns - values, rtol=1e-10)


def test_gae_lambda_zero_is_td_error():
    rewards = np.array([1.0, 0.0, 2.0])
    values = np.array([0.5, 0.25, -0.5])
    dones = np.array([False, False, True])
    adv, _ = compute_advantages(rewards, values, dones, 9.0, 0.9, 0.0)
    np.testing.assert_allclose(adv, [1.0 + 0.9 * 0.25 - 0.5, 0.0 + 0.9 * -0.5 - 0.25,
                                     2.0 - -0.5])


def _full_buffer(nets, horizon=64, feature_dim=4, seed=0, reward_fn=None):
    rng = np.random.default_rng(seed)
    buf = RolloutBuffer(horizon, feature_dim)
    feats = np.ones(feature_dim, dtype=np.float32)
    for _ in range(horizon):
        a, logp, v = nets.act(feats, rng)
        r = reward_fn(a) if reward_fn else rng.normal()
        buf.add(feats, a, logp, r, True, v)
    buf.advantages, buf.returns = compute_advantages(
        buf.rewards, buf.values, buf.dones, 0.0, 0.99, 0.95)
    return buf


def test_ratio_is_one_before_any_update():
    torch.manual_seed(0)
    nets = ActorCritic(4, 2)
    buf = _full_buffer(nets)
    cfg = PPOConfig(epochs=1, minibatch_size=64, horizon=64)
    opt = torch.optim.Adam(nets.parameters(), lr=cfg.lr)
    stats = ppo_update(nets, buf, cfg, opt, np.random.default_rng(0))
    assert stats["ratio"] == pytest.approx(1.0, abs=1e-6)


def test_zero_advantages_leave_policy_unchanged():
    torch.manual_seed(1)
    nets = ActorCritic(4, 3)
    buf = _full_buffer(nets)
    buf.advantages = np.zeros_like(buf.advantages)
    cfg = PPOConfig(epochs=3, minibatch_size=32, horizon=64, normalize_advantages=False)
    opt = torch.optim.Adam(nets.parameters(), lr=cfg.lr)
    before = [p.clone() for p in nets.policy.parameters()]
    v_before = [p.clone() for p in nets.value.parameters()]
    ppo_update(nets, buf, cfg, opt, np.random.default_rng(0))
    for p, q in zip(before, nets.policy.parameters()):
        assert torch.equal(p, q)
    assert any(not torch.equal(p, q) for p, q in zip(v_before, nets.value.parameters()))


def test_clipped_objective_never_exceeds_unclipped():
    rng = np.random.default_rng(2)
    for _ in range(200):
        ratio = rng.uniform(0.2, 3.0)
        adv = rng.normal()
        eps = 0.2
        clipped = min(ratio * adv, np.clip(ratio, 1 - eps, 1 + eps) * adv)
        assert clipped <= ratio * adv + 1e-12


def test_advantage_normalization_stats():
    torch.manual_seed(3)
    nets = ActorCritic(4, 2)
    buf = _full_buffer(nets)
    adv = torch.as_tensor(buf.advantages)
    norm = (adv - adv.mean()) / (adv.std() + 1e-8)
    assert float(norm.mean()) == pytest.approx(0.0, abs=1e-6)
    assert float(norm.std()) == pytest.approx(1.0, abs=1e-3)


def test_two_armed_bandit_concentrates():
    torch.manual_seed(4)
    nets = ActorCritic(4, 2)
    cfg = PPOConfig(epochs=5, minibatch_size=64, horizon=64)
    opt = torch.optim.Adam(nets.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(4)
    feats = np.ones(4, dtype=np.float32)
    for update in range(200):
        buf = _full_buffer(nets, seed=update, reward_fn=lambda a: 1.0 if a == 0 else 0.0)
        ppo_update(nets, buf, cfg, opt, rng)
        with torch.no_grad():
            probs = torch.softmax(nets.logits_values(
                torch.as_tensor(feats)[None])[0], -1)[0]
        if probs[0] >= 0.99:
            break
    assert probs[0] >= 0.99, f"bandit failed to concentrate: {probs.tolist()}"


def test_ppo_clip_gradient_matches_finite_differences():
    """Acceptance: analytic clip-objective gradient vs central differences on a
    tiny double-precision policy, checked away from clip/min kinks."""
    torch.manual_seed(5)
    policy = torch.nn.Sequential(torch.nn.Linear(3, 8), torch.nn.Tanh(),
                                 torch.nn.Linear(8, 2)).double()
    feats = torch.randn(16, 3, dtype=torch.float64)
    actions = torch.randint(0, 2, (16,))
    old_logp = torch.log_softmax(policy(feats), -1).gather(
        1, actions[:, None])[:, 0].detach() + 0.05
    adv = torch.randn(16, dtype=torch.float64)
    eps = 0.2

    def loss_fn():
        logp = torch.log_softmax(policy(feats), -1).gather(1, actions[:, None])[:, 0]
        ratio = torch.exp(logp - old_logp)
        # keep every sample strictly away from the clip boundary kinks
        assert ((ratio - (1 - eps)).abs() > 1e-3).all()
        assert ((ratio - (1 + eps)).abs() > 1e-3).all()
        return -torch.minimum(ratio * adv,
                              torch.clamp(ratio, 1 - eps, 1 + eps) * adv).mean()

    loss = loss_fn()
    grads = torch.autograd.grad(loss, list(policy.parameters()))
    rng = np.random.default_rng(0)
    h = 1e-6
    checked = 0
    for p, g in zip(policy.parameters(), grads):
        flat = p.data.view(-1)
        for _ in range(5):
            i = int(rng.integers(flat.numel()))
            orig = float(flat[i])
            flat[i] = orig + h
            lp = float(loss_fn())
            flat[i] = orig - h
            lm = float(loss_fn())
            flat[i] = orig
            fd = (lp - lm) / (2 * h)
            analytic = float(g.view(-1)[i])
            denom = max(abs(fd), abs(analytic), 1e-8)
            assert abs(fd - analytic) / denom < 1e-4, (fd, analytic)
            checked += 1
    assert checked >= 20


def test_buffer_guards():
    buf = RolloutBuffer(4, 2)
    nets = ActorCritic(2, 2)
    cfg = PPOConfig(horizon=4)
    opt = torch.optim.Adam(nets.parameters(), lr=1e-3)
    with pytest.raises(RuntimeError):
        ppo_update(nets, buf, cfg, opt, np.random.default_rng(0))
    for _ in range(4):
        buf.add(np.zeros(2, np.float32), 0, 0.0, 0.0, False, 0.0)
    with pytest.raises(RuntimeError):
        buf.add(np.zeros(2, np.float32), 0, 0.0, 0.0, False, 0.0)
    with pytest.raises(RuntimeError):
        ppo_update(nets, buf, cfg, opt, np.random.default_rng(0))  # no advantages


def test_invalid_config_rejected():
    with pytest.raises(ValueError):
        PPOConfig(clip_eps=0.0)
    with pytest.raises(ValueError):
        PPOConfig(epochs=0)
