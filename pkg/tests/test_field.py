import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from mirrorfield.field import FieldSpec, PositionalEncodingSpec, positional_encode, query_field
from mirrorfield.hypernet import standard_init

from oracles import mlp_forward


def spec(feature_dim=4, width=8):
    return FieldSpec(PositionalEncodingSpec(2, True), PositionalEncodingSpec(1, True), feature_dim, width, 3)


def random_theta(s, seed=0, scale=1.0):
    g = torch.Generator().manual_seed(seed)
    return standard_init(s.layout(), g).double() * scale + 0.1 * torch.randn(s.layout().size, generator=g, dtype=torch.float64)


def test_encoding_of_zero():
    s = PositionalEncodingSpec(3, False)
    out = positional_encode(torch.zeros(2), s)
    assert out.shape == (12,)
    # per band: two sines then two cosines
    assert out.view(3, 2, 2)[:, 0].abs().sum() == 0
    assert torch.all(out.view(3, 2, 2)[:, 1] == 1)


def test_encoding_dimensions_and_values():
    s = PositionalEncodingSpec(6, True)
    assert s.dim(3) == 39
    v = torch.tensor([0.25], dtype=torch.float64)
    out = positional_encode(v, PositionalEncodingSpec(2, True))
    expected = [0.25, math.sin(math.pi / 4), math.cos(math.pi / 4), math.sin(math.pi / 2), math.cos(math.pi / 2)]
    np.testing.assert_allclose(out.numpy(), expected, atol=1e-15)
    assert PositionalEncodingSpec(0, False).dim(3) == 0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_lowest_band_is_injective(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(-1, 1, size=(2, 3))
    s = PositionalEncodingSpec(1, False)
    ea = positional_encode(torch.as_tensor(a), s)
    eb = positional_encode(torch.as_tensor(b), s)
    assert not torch.allclose(ea, eb, atol=1e-12, rtol=0)


def test_output_ranges_over_random_inputs():
    s = spec()
    theta = random_theta(s, scale=3.0)
    g = torch.Generator().manual_seed(1)
    X = torch.randn(1000, 3, generator=g, dtype=torch.float64) * 2
    d = torch.nn.functional.normalize(torch.randn(1000, 3, generator=g, dtype=torch.float64), dim=-1)
    F = torch.randn(1000, 4, generator=g, dtype=torch.float64) * 5
    rgb, sigma = query_field(theta, s, X, d, F)
    assert rgb.shape == (1000, 3) and sigma.shape == (1000,)
    assert torch.isfinite(rgb).all() and torch.isfinite(sigma).all()
    assert (sigma >= 0).all() and (rgb >= 0).all() and (rgb <= 1).all()


def test_matches_layerwise_oracle(rng):
    s = spec()
    theta = random_theta(s)
    X = rng.normal(size=(7, 3))
    d = rng.normal(size=(7, 3))
    F = rng.normal(size=(7, 4))
    rgb, sigma = query_field(theta, s, torch.as_tensor(X), torch.as_tensor(d), torch.as_tensor(F))
    enc = lambda v, L: np.concatenate([v] + [f(2 ** j * np.pi * v) for j in range(L) for f in (np.sin, np.cos)], -1)
    h = np.concatenate([enc(X, 2), enc(d, 1), F], -1)
    o_rgb, o_sigma = mlp_forward(theta.numpy(), s.layout().to_record(), h, s.depth)
    np.testing.assert_allclose(rgb.numpy(), o_rgb, atol=1e-12)
    np.testing.assert_allclose(sigma.numpy(), o_sigma, atol=1e-12)


def test_features_are_wired_in(rng):
    s = spec()
    theta = random_theta(s)
    X = torch.as_tensor(rng.normal(size=(5, 3)))
    d = torch.as_tensor(rng.normal(size=(5, 3)))
    a = query_field(theta, s, X, d, torch.zeros(5, 4, dtype=torch.float64))
    b = query_field(theta, s, X, d, torch.as_tensor(rng.normal(size=(5, 4))))
    assert not torch.allclose(a[0], b[0]) and not torch.allclose(a[1], b[1])


def test_shared_theta_equals_repeated_theta(rng):
    s = spec()
    theta = random_theta(s)
    X = torch.as_tensor(rng.normal(size=(3, 6, 3)))
    d = torch.as_tensor(rng.normal(size=(3, 6, 3)))
    F = torch.as_tensor(rng.normal(size=(3, 6, 4)))
    shared = query_field(theta, s, X, d, F)
    batched = query_field(theta.expand(3, -1), s, X, d, F)
    torch.testing.assert_close(shared, batched, atol=1e-12, rtol=0)


def test_density_gradient_matches_finite_differences(rng):
    s = spec()
    theta = random_theta(s, seed=3)
    X = torch.as_tensor(rng.normal(size=(4, 3)), dtype=torch.float64).requires_grad_()
    d = torch.as_tensor(rng.normal(size=(4, 3)))
    F = torch.as_tensor(rng.normal(size=(4, 4)))
    query_field(theta, s, X, d, F)[1].sum().backward()
    eps = 1e-5
    for i in range(4):
        for j in range(3):
            e = torch.zeros_like(X)
            e[i, j] = eps
            with torch.no_grad():
                fd = (query_field(theta, s, X + e, d, F)[1].sum() - query_field(theta, s, X - e, d, F)[1].sum()) / (2 * eps)
            g = X.grad[i, j]
            assert abs(g - fd) <= 1e-3 * max(abs(fd), 1e-6)


def test_layout_input_width():
    s = FieldSpec(PositionalEncodingSpec(6), PositionalEncodingSpec(4), 128, 128, 4)
    assert s.input_dim == 39 + 27 + 128
    assert s.layout()["trunk0"].fan_in == 194
    assert [l.name for l in s.layout().layers] == ["trunk0", "trunk1", "trunk2", "trunk3", "density", "color0", "color1"]


def test_shape_errors():
    s = spec()
    theta = random_theta(s)
    X = torch.zeros(2, 3, dtype=torch.float64)
    with pytest.raises(ValueError):
        query_field(theta[:-1], s, X, X, torch.zeros(2, 4, dtype=torch.float64))
    with pytest.raises(ValueError):
        query_field(theta, s, X, X, torch.zeros(2, 5, dtype=torch.float64))
    with pytest.raises(ValueError):
        query_field(theta, s, X, X, None)
    with pytest.raises(ValueError):
        query_field(theta.expand(2, -1), s, X[None].expand(3, -1, -1), X[None].expand(3, -1, -1),
                    torch.zeros(3, 2, 4, dtype=torch.float64))
