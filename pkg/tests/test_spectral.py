import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgnet.errors import ConfigError, NumericError, ShapeError
from sgnet.sggraph import build_signature_graph, partition
from sgnet.spectral import (
    COMBINATORIAL, adjacency_matrix, connected_components, degree_matrix, eigendecompose,
    grid_spectrum, incidence_matrix, laplacian, scale_embeddings, signature_vector,
)
from sgnet.verify import check_spectral_graph, random_graph


def path_spectrum(n):
    """Closed form for the normalised Laplacian of a path on n >= 2 nodes."""
    return 1 - np.cos(np.pi * np.arange(n) / (n - 1))


def test_path3_matrices():
    g = (3, [(0, 1), (1, 2)])
    np.testing.assert_array_equal(adjacency_matrix(g), [[0, 1, 0], [1, 0, 1], [0, 1, 0]])
    np.testing.assert_array_equal(degree_matrix(g), np.diag([1, 2, 1]))
    np.testing.assert_array_equal(incidence_matrix(g), [[1, -1, 0], [0, 1, -1]])
    s = 1 / np.sqrt(2)
    np.testing.assert_allclose(laplacian(g), [[1, -s, 0], [-s, 1, -s], [0, -s, 1]])
    np.testing.assert_allclose(eigendecompose(laplacian(g)).eigenvalues, [0, 1, 2], atol=1e-12)


@pytest.mark.parametrize("n", [2, 3, 5, 9, 16])
def test_path_spectrum_closed_form(n):
    g = (n, [(i, i + 1) for i in range(n - 1)])
    np.testing.assert_allclose(eigendecompose(laplacian(g)).eigenvalues, path_spectrum(n), atol=1e-12)


def test_mnist_tap_grid_spectrum():
    # 28x28 map, patch 6: 5 independent 5-node chains
    dec = grid_spectrum(partition(28, 28, 6), "horizontal")
    np.testing.assert_allclose(dec.eigenvalues, np.repeat(path_spectrum(5), 5), atol=1e-12)
    assert grid_spectrum(partition(28, 28, 6), "horizontal") is dec  # cached


def test_isolated_nodes_are_zero_rows():
    lap = laplacian((3, [(0, 1)]))
    np.testing.assert_array_equal(lap[2], 0)
    assert np.sum(np.abs(eigendecompose(lap).eigenvalues) < 1e-12) == 2
    assert connected_components((3, [(0, 1)])) == 2


def test_combinatorial_rows_sum_to_zero(rng):
    g = random_graph(rng, 8)
    assert np.all(laplacian(g, COMBINATORIAL).sum(axis=1) == 0)
    with pytest.raises(ConfigError):
        laplacian(g, "random-walk")


def test_eigendecompose_against_lapack(rng):
    a = rng.standard_normal((15, 15))
    a = a + a.T
    dec = eigendecompose(a)
    np.testing.assert_allclose(dec.eigenvalues, np.linalg.eigvalsh(a), atol=1e-10)
    np.testing.assert_allclose(dec.eigenvectors @ np.diag(dec.eigenvalues) @ dec.eigenvectors.T, a, atol=1e-10)
    for k in range(15):
        col = dec.eigenvectors[:, k]
        assert col[np.flatnonzero(np.abs(col) > 1e-12)[0]] > 0


def test_eigendecompose_errors(rng):
    with pytest.raises(ConfigError):
        eigendecompose(rng.standard_normal((3, 3)) + np.triu(np.ones((3, 3)), 1))
    with pytest.raises(ShapeError):
        eigendecompose(np.zeros((2, 3)))
    a = rng.standard_normal((12, 12))
    with pytest.raises(NumericError):
        eigendecompose(a + a.T, max_sweeps=1)


def test_zero_matrix_converges():
    dec = eigendecompose(np.zeros((4, 4)))
    np.testing.assert_array_equal(dec.eigenvalues, 0)


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 10**6), link=st.booleans())
def test_spectral_identities_random_graphs(seed, link):
    r = np.random.default_rng(seed)
    res = check_spectral_graph(random_graph(r, 12, link_chains=link), r)
    assert res["mtm"] and res["in_range"] and res["zero_mult_ok"]
    assert res["rayleigh_err"] < 1e-9


@pytest.mark.parametrize("rows,cols", [(1, 1), (3, 4), (4, 3), (7, 7)])
def test_zero_multiplicity_counts_chains(rows, cols):
    grid = partition(rows * 2, cols * 2, 2)
    for mode, chains in (("horizontal", rows), ("vertical", cols)):
        lam = grid_spectrum(grid, mode).eigenvalues
        assert np.sum(np.abs(lam) < 1e-9) == chains


def test_scaled_embedding_is_eigenvalue_times_row(rng):
    g = build_signature_graph(rng.standard_normal((9, 9)), 3)
    dec = eigendecompose(laplacian(g))
    x = scale_embeddings(g, dec, eig_offset=0.5)
    np.testing.assert_allclose(x, (dec.eigenvalues + 0.5)[:, None] * g.attributes)
    assert signature_vector(g).shape == (9 * 3,)


def test_single_node_embedding_is_zero():
    g = build_signature_graph(np.ones((3, 3)), 3)
    np.testing.assert_array_equal(signature_vector(g), 0)
