import numpy as np
import pytest

from sgnet.oracles import numeric_grad, rel_error
from sgnet.sggraph import build_signature_graph
from sgnet.sglayer import SignatureTap
from sgnet.spectral import eigendecompose, laplacian, scale_embeddings


@pytest.mark.parametrize("extremum", ["maxima", "minima"])
@pytest.mark.parametrize("mode", ["horizontal", "vertical"])
@pytest.mark.parametrize("aggregate", ["mean", "max"])
def test_batched_tap_matches_per_graph_path(rng, extremum, mode, aggregate):
    act = rng.standard_normal((4, 13, 11, 3))
    tap = SignatureTap(1, 13, 11, 3, 4, extremum, mode, aggregate)
    scaled, attrs, _ = tap.forward(act)
    for b in range(4):
        g = build_signature_graph(act[b], 4, extremum, mode, aggregate)
        ref = scale_embeddings(g, eigendecompose(laplacian(g)))
        np.testing.assert_array_equal(attrs[b], g.attributes)
        np.testing.assert_allclose(scaled[b], ref, atol=1e-12)


def test_zero_eigenvalues_are_snapped_exactly():
    tap = SignatureTap(1, 28, 28, 16, 6)
    assert np.sum(tap.eigenvalues == 0.0) == 5
    assert tap.width == 150


def test_eig_offset_shifts_every_eigenvalue():
    a = SignatureTap(1, 12, 12, 1, 6)
    b = SignatureTap(1, 12, 12, 1, 6, eig_offset=0.25)
    np.testing.assert_allclose(b.eigenvalues, a.eigenvalues + 0.25)


@pytest.mark.parametrize("aggregate", ["mean", "max", 1])
def test_tap_backward_fd(rng, aggregate):
    act = rng.standard_normal((2, 7, 9, 3))
    tap = SignatureTap(1, 7, 9, 3, 3, aggregate=aggregate)
    scaled, attrs, cache = tap.forward(act)
    r1, r2 = rng.standard_normal(scaled.shape), rng.standard_normal(attrs.shape)
    g = tap.backward(r1, r2, cache)

    def loss():
        s, a, _ = tap.forward(act)
        return float(np.sum(s * r1) + np.sum(a * r2))

    # continuous random data: node choices are stable under a 1e-6 nudge
    assert rel_error(g, numeric_grad(loss, act, 1e-6)) < 1e-6


def test_patch_means_and_backward(rng):
    act = rng.standard_normal((2, 7, 5, 2))
    tap = SignatureTap(1, 7, 5, 2, 3)
    means = tap.patch_means(act)
    assert means.shape == (2, 6, 2)
    # bottom-right patch holds only rows 6 and columns 3..4
    np.testing.assert_allclose(means[:, 5], act[:, 6:7, 3:5].mean(axis=(1, 2)))
    r = rng.standard_normal(means.shape)
    g = tap.patch_means_backward(r, act.shape)
    assert rel_error(g, numeric_grad(lambda: float(np.sum(tap.patch_means(act) * r)), act, 1e-6)) < 1e-6
