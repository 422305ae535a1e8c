import numpy as np
import pytest
import torch

from latgrid.quantizer import VectorQuantizer, nearest_indices, one_hot_to_indices, quantize


def brute_force_indices(z, e):
    """Exhaustive nearest-neighbor scan, lowest index on ties."""
    out = np.empty(z.shape[:-1], dtype=np.int64)
    flat = z.reshape(-1, z.shape[-1])
    res = []
    for row in flat:
        d = np.sqrt(((row[None, :] - e) ** 2).sum(axis=1))
        best = np.flatnonzero(d <= d.min() + 0.0)[0]
        res.append(best)
    return np.array(res).reshape(out.shape)


def test_quantize_matches_brute_force_random():
    rng = np.random.default_rng(0)
    for trial in range(1000):
        l, d = int(rng.integers(1, 17)), int(rng.integers(1, 6))
        z = rng.normal(size=(int(rng.integers(1, 5)), d))
        e = rng.normal(size=(l, d))
        got = quantize(z, e)
        want = brute_force_indices(z, e)
        np.testing.assert_array_equal(got.indices, want)


def test_exact_match_and_tie_cases():
    e = np.array([[-1.0, 0.0], [1.0, 0.0], [1.0, 0.0], [0.0, 3.0]])
    # exact match with a duplicate embedding: lowest of the duplicates
    out = quantize(np.array([[1.0, 0.0]]), e)
    assert out.indices.tolist() == [1]
    np.testing.assert_array_equal(out.quantized[0], e[1])
    # perfectly equidistant between embeddings 0 and 1: lowest index wins
    out = quantize(np.array([[0.0, 0.0]]), e)
    assert out.indices.tolist() == [0]


def test_one_hot_structure():
    rng = np.random.default_rng(1)
    z = rng.normal(size=(3, 4, 2))
    e = rng.normal(size=(6, 2))
    lat = quantize(z, e)
    assert lat.one_hot.shape == (3, 4, 6)
    np.testing.assert_array_equal(lat.one_hot.sum(-1), np.ones((3, 4)))
    recovered = lat.one_hot.argmax(-1)
    np.testing.assert_array_equal(recovered, lat.indices)
    np.testing.assert_array_equal(lat.quantized, e[lat.indices].astype(np.float32))


def test_idempotence():
    rng = np.random.default_rng(2)
    z = rng.normal(size=(10, 3))
    e = rng.normal(size=(7, 3))
    first = quantize(z, e)
    second = quantize(first.quantized, e)
    np.testing.assert_array_equal(first.indices, second.indices)


def test_empty_table_rejected():
    with pytest.raises(ValueError):
        nearest_indices(torch.randn(2, 3), torch.empty(0, 3))


def test_dim_mismatch_rejected():
    with pytest.raises(ValueError):
        quantize(np.zeros((2, 3)), np.zeros((4, 5)))


def test_straight_through_first_order_agreement():
    """Acceptance: the surrogate gradient equals the finite-difference gradient
    of the downstream loss taken with respect to the quantized input."""
    torch.manual_seed(0)
    vq = VectorQuantizer(8, 5).double()
    head = torch.nn.Sequential(torch.nn.Linear(5, 7), torch.nn.Tanh(),
                               torch.nn.Linear(7, 1)).double()

    z = torch.randn(4, 5, dtype=torch.float64, requires_grad=True)
    q, idx, _ = vq(z)
    loss = head(q).pow(2).sum()
    loss.backward()
    surrogate = z.grad.clone()

    with torch.no_grad():
        q0 = vq.embeddings[idx]
    eps = 1e-4
    rng = np.random.default_rng(3)
    for _ in range(20):
        u = torch.tensor(rng.normal(size=q0.shape), dtype=torch.float64)
        u /= u.norm()
        with torch.no_grad():
            lp = head(q0 + eps * u).pow(2).sum()
            lm = head(q0 - eps * u).pow(2).sum()
        fd = (lp - lm) / (2 * eps)
        analytic = (surrogate * u).sum()
        assert abs(fd - analytic) / max(abs(fd), 1e-12) < 1e-3


def test_commitment_value_and_gradient_scaling():
    # l=2, d=1 toy instance: hand-computed commitment and per-side gradients.
    vq = VectorQuantizer(2, 1).double()
    with torch.no_grad():
        vq.embeddings.copy_(torch.tensor([[0.0], [1.0]], dtype=torch.float64))
    z = torch.tensor([[[0.2], [0.9]]], dtype=torch.float64, requires_grad=True)
    _, idx, commitment = vq(z)
    assert idx.tolist() == [[0, 1]]
    # per-element mean of (0.2-0)^2 and (0.9-1)^2
    assert commitment.item() == pytest.approx((0.04 + 0.01) / 2, rel=1e-12)
    commitment.backward()
    np.testing.assert_allclose(z.grad.squeeze().numpy(), [0.2, -0.1])
    egrad = vq.embeddings.grad.squeeze().numpy()
    np.testing.assert_allclose(egrad, [0.25 * (-0.2), 0.25 * 0.1])


def test_usage_fraction():
    vq = VectorQuantizer(4, 2)
    assert vq.usage_fraction(torch.tensor([0, 0, 1])) == pytest.approx(0.5)


def test_one_hot_to_indices():
    oh = torch.eye(4)[torch.tensor([2, 0, 3])]
    np.testing.assert_array_equal(one_hot_to_indices(oh).numpy(), [2, 0, 3])
