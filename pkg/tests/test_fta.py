import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from latgrid.fta import FTA, fta_expand


def fta_reference(z, lower, upper, n_tiles):
    """Independent scalar-by-scalar evaluation of the stated closed form."""
    delta = (upper - lower) / n_tiles
    eta = delta
    out = []
    for scalar in z:
        scalar = min(max(scalar, lower), upper)
        for i in range(n_tiles):
            c = lower + i * delta
            x = max(c - scalar, 0.0) + max(scalar - c - delta, 0.0)
            ind = x / eta if x < eta else 1.0
            out.append(1.0 - ind)
    return np.array(out)


def test_matches_closed_form_on_dense_grid():
    grid = np.linspace(-3.0, 3.0, 601)
    for n_tiles in (2, 4, 16):
        got = fta_expand(torch.tensor(grid, dtype=torch.float64), -2.0, 2.0, n_tiles)
        want = fta_reference(grid, -2.0, 2.0, n_tiles)
        np.testing.assert_allclose(got.numpy(), want, atol=1e-12)


def test_lower_bound_expansion_example():
    out = fta_expand(torch.tensor([-2.0]), -2.0, 2.0, 4)
    np.testing.assert_allclose(out.numpy(), [1.0, 0.0, 0.0, 0.0])


def test_tile_boundary_two_nonzeros():
    # Exactly on an interior anchor both adjacent tiles respond fully/partially.
    out = fta_expand(torch.tensor([-1.0]), -2.0, 2.0, 4).numpy()
    assert (out > 0).sum() == 2
    ref = fta_reference([-1.0], -2.0, 2.0, 4)
    np.testing.assert_allclose(out, ref, atol=1e-7)


def test_clipping_above_upper():
    hi = fta_expand(torch.tensor([5.0]), -2.0, 2.0, 8)
    at = fta_expand(torch.tensor([2.0]), -2.0, 2.0, 8)
    assert torch.equal(hi, at)


@settings(max_examples=200, deadline=None)
@given(st.floats(-10, 10, allow_nan=False), st.sampled_from([2, 4, 8, 16, 32]))
def test_range_and_sparsity_properties(z, n_tiles):
    out = fta_expand(torch.tensor([z], dtype=torch.float64), -2.0, 2.0, n_tiles).numpy()
    assert out.shape == (n_tiles,)
    assert (out >= 0).all() and (out <= 1).all()
    # With eta == delta the containing tile responds fully and at most the two
    # adjacent tiles respond partially; the nonzero support is contiguous.
    nz = np.flatnonzero(out > 0)
    assert len(nz) <= 3
    if len(nz):
        assert nz[-1] - nz[0] == len(nz) - 1


def test_anchor_points_have_two_full_activations():
    # On an interior tile boundary exactly two tiles respond, both fully.
    out = fta_expand(torch.tensor([0.0], dtype=torch.float64), -2.0, 2.0, 4).numpy()
    np.testing.assert_allclose(out, [0.0, 1.0, 1.0, 0.0])


def test_interior_partials_sum_to_one():
    # Strictly inside a tile: full activation plus two partials that sum to 1.
    out = fta_expand(torch.tensor([0.4], dtype=torch.float64), -2.0, 2.0, 4).numpy()
    nz = np.flatnonzero(out > 0)
    assert len(nz) == 3
    partials = sorted(out[nz])[:2]
    assert sum(partials) == pytest.approx(1.0)


def test_expansion_shape_batched():
    z = torch.randn(5, 7)
    out = fta_expand(z, -2.0, 2.0, 4)
    assert out.shape == (5, 28)
    single = fta_expand(z[2], -2.0, 2.0, 4)
    assert torch.equal(out[2], single)


def test_invalid_inputs():
    with pytest.raises(ValueError):
        fta_expand(torch.tensor([0.0]), 2.0, -2.0, 4)
    with pytest.raises(ValueError):
        fta_expand(torch.tensor([0.0]), -2.0, 2.0, 1)
    with pytest.raises(ValueError):
        fta_expand(torch.tensor([float("nan")]), -2.0, 2.0, 4)


def test_module_wrapper():
    m = FTA(-2.0, 2.0, 8)
    z = torch.randn(3, 4)
    assert torch.equal(m(z), fta_expand(z, -2.0, 2.0, 8))
