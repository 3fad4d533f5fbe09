import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from vstgnn.errors import ShapeError, ValidationError
from vstgnn.temporal import Time2Vec, concat_embeddings, time2vec


def test_zero_parameters_give_zero_vector():
    out = time2vec(3.7, torch.zeros(64), torch.zeros(64))
    assert out.shape == (64,) and torch.all(out == 0)


def test_linear_component():
    omega = torch.zeros(4, dtype=torch.float64)
    omega[0] = 1.0
    assert time2vec(5.0, omega, torch.zeros(4, dtype=torch.float64))[0].item() == 5.0


def test_manual_values():
    omega = torch.tensor([2.0, 0.5, 1.0], dtype=torch.float64)
    phi = torch.tensor([1.0, 0.25, -1.0], dtype=torch.float64)
    out = time2vec(3.0, omega, phi)
    expected = [7.0, math.sin(1.75), math.sin(2.0)]
    assert out.tolist() == pytest.approx(expected, abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.floats(-50, 50), st.lists(st.floats(0.05, 5.0), min_size=2, max_size=8),
       st.floats(0, 6.28))
def test_periodicity(t, omegas, phase):
    omega = torch.tensor(omegas, dtype=torch.float64)
    phi = torch.full_like(omega, phase)
    base = time2vec(t, omega, phi)
    for i in range(1, len(omegas)):
        shifted = time2vec(t + 2 * math.pi / omegas[i], omega, phi)
        assert abs(shifted[i].item() - base[i].item()) < 1e-9


def test_empty_k():
    with pytest.raises(ValidationError):
        time2vec(1.0, torch.zeros(0), torch.zeros(0))
    with pytest.raises(ValidationError):
        Time2Vec(0)


def test_batched_time_shape():
    t2v = Time2Vec(16)
    assert t2v(torch.zeros(4, 8)).shape == (4, 8, 16)
    assert torch.all((t2v.omega >= 0) & (t2v.omega < 1))


def test_concat_full_scale_widths():
    z = concat_embeddings(torch.zeros(67, 8, 256), torch.zeros(8, 64))
    assert z.shape == (67, 8, 320)


def test_concat_manual():
    z = concat_embeddings(torch.tensor([[[1.0, 2.0]]]), torch.tensor([[9.0]]))
    assert z.tolist() == [[[1.0, 2.0, 9.0]]]


def test_concat_empty_nodes():
    assert concat_embeddings(torch.zeros(0, 3, 4), torch.zeros(3, 2)).shape == (0, 3, 6)


def test_concat_step_mismatch():
    with pytest.raises(ShapeError):
        concat_embeddings(torch.zeros(2, 3, 4), torch.zeros(4, 2))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 4), st.integers(1, 5), st.integers(1, 6), st.integers(1, 4), st.integers(0, 10_000))
def test_concat_slices_recover_parts(batch, V, P, K, seed):
    g = torch.Generator().manual_seed(seed)
    S = 3
    v = torch.randn(batch, V, S, P, generator=g)
    tau = torch.randn(batch, S, K, generator=g)
    z = concat_embeddings(v, tau)
    assert torch.equal(z[..., :P], v)
    for n in range(V):
        assert torch.equal(z[:, n, :, P:], tau)
