import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from graph_deblur.graphs import SpectralDecomposition, build_random_sensor_graph, spectral_decompose
from graph_deblur.lifting import (
    apply_graph_filter,
    build_lifted_operator,
    diffuse_and_measure,
    unvec,
    vandermonde,
    vec,
)


def diag_sd(lam):
    lam = np.asarray(lam, dtype=float)
    eye = np.eye(lam.size)
    return SpectralDecomposition(eigenvalues=lam, V=eye, U=eye, operator=np.diag(lam))


def test_identity_filter(sd10, rng):
    x = rng.standard_normal(10)
    np.testing.assert_allclose(apply_graph_filter(sd10, [1.0], x), x)


def test_shift_filter(sd10, rng):
    x = rng.standard_normal(10)
    np.testing.assert_allclose(apply_graph_filter(sd10, [0.0, 1.0], x), sd10.operator @ x)


def test_filter_hand_expanded_path2(path2):
    sd = spectral_decompose(path2, normalize=False)
    # S x = [0, 1], S^2 x = [1, 0]
    y = apply_graph_filter(sd, [1.0, 0.8, 0.3], [1.0, 0.0])
    np.testing.assert_allclose(y, [1.3, 0.8], atol=1e-15)


def test_filter_matches_spectral(sd10, rng):
    for L in range(1, 6):
        h = rng.standard_normal(L)
        x = rng.standard_normal(10)
        Psi = vandermonde(sd10.eigenvalues, L)
        spectral = sd10.V @ ((Psi @ h) * (sd10.U @ x))
        assert np.linalg.norm(apply_graph_filter(sd10, h, x) - spectral) < 1e-9


def test_filter_dimension_mismatch(sd10):
    with pytest.raises(ValueError):
        apply_graph_filter(sd10, [1.0], np.ones(3))


def test_vandermonde_examples():
    np.testing.assert_array_equal(vandermonde([-1.0, 1.0], 3), [[1, -1, 1], [1, 1, 1]])
    np.testing.assert_array_equal(vandermonde([0.3, -2.0, 7.0], 1), np.ones((3, 1)))
    np.testing.assert_array_equal(vandermonde([0.5], 4), [[1, 0.5, 0.25, 0.125]])
    with pytest.raises(ValueError):
        vandermonde([1.0], 0)


def test_lifted_L1_is_transform(rng):
    g = build_random_sensor_graph(5, k=2, seed=0)
    sd = spectral_decompose(g)
    op = build_lifted_operator(sd, 1)
    x = rng.standard_normal(5)
    np.testing.assert_allclose(op.M @ vec(x[:, None]), sd.U @ x, atol=1e-14)


def test_lifted_hand_khatri_rao():
    op = build_lifted_operator(diag_sd([1.0, 2.0, 3.0]), 2)
    expected = np.array([
        [1, 0, 0, 1, 0, 0],
        [0, 1, 0, 0, 2, 0],
        [0, 0, 1, 0, 0, 3],
    ], dtype=float)
    np.testing.assert_array_equal(op.M, expected)


def test_lifting_identity_n4_L3(rng):
    g = build_random_sensor_graph(4, k=2, seed=1)
    sd = spectral_decompose(g)
    op = build_lifted_operator(sd, 3)
    for _ in range(100):
        x, h = rng.standard_normal(4), rng.standard_normal(3)
        rhs = (op.Psi @ h) * (sd.U @ x)
        assert np.linalg.norm(op.M @ vec(np.outer(x, h)) - rhs) < 1e-12


def test_lifted_svd_cache(sd10):
    op = build_lifted_operator(sd10, 3)
    recon = (op.svd_u * op.svd_s) @ op.svd_vt
    np.testing.assert_allclose(recon, op.M, atol=1e-12)
    assert not op.M.flags.writeable


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 10), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_lifting_identity_property(n, L, seed):
    rng = np.random.default_rng(seed)
    g = build_random_sensor_graph(n, k=min(n - 1, 3), seed=seed)
    sd = spectral_decompose(g)
    op = build_lifted_operator(sd, L)
    x, h = rng.standard_normal(n), rng.standard_normal(L)
    rhs = (op.Psi @ h) * (sd.U @ x)
    lhs = op.forward(np.outer(x, h))
    assert np.linalg.norm(lhs - rhs) <= 1e-10 * max(np.linalg.norm(rhs), 1e-300)


@given(arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 5)),
              elements=st.floats(-1e6, 1e6)))
def test_vec_unvec_roundtrip(Z):
    v = vec(Z)
    # column-major: the first n entries are the first column
    np.testing.assert_array_equal(v[: Z.shape[0]], Z[:, 0])
    np.testing.assert_array_equal(unvec(v, *Z.shape), Z)


def test_measure_noiseless(sd10, rng):
    x = rng.standard_normal(10)
    h = [1.0, 0.8, 0.3]
    m = diffuse_and_measure(sd10, h, x, 0.0)
    Psi = vandermonde(sd10.eigenvalues, 3)
    assert np.linalg.norm(m.y_hat - (Psi @ h) * (sd10.U @ x)) < 1e-9
    np.testing.assert_allclose(m.y_hat, sd10.U @ m.y, atol=1e-12)


def test_measure_reproducible(sd10):
    x = np.eye(10)[0]
    a = diffuse_and_measure(sd10, [1.0], x, 0.3, seed=4)
    b = diffuse_and_measure(sd10, [1.0], x, 0.3, seed=4)
    assert a.y.tobytes() == b.y.tobytes()
    with pytest.raises(ValueError):
        diffuse_and_measure(sd10, [1.0], x, -1.0)


def test_measure_noise_power():
    g = build_random_sensor_graph(64, k=6, seed=1)
    sd = spectral_decompose(g)
    x = np.zeros(64)
    clean = apply_graph_filter(sd, [1.0, 0.8, 0.3], x)
    power = [
        np.sum((diffuse_and_measure(sd, [1.0, 0.8, 0.3], x, 0.1, seed=s).y - clean) ** 2) / 64
        for s in range(1000)
    ]
    assert abs(np.mean(power) - 0.01) < 0.001
