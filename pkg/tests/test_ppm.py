import numpy as np
import pytest

from sgnet.ppm import _line, ppm_bytes, render_graph, to_gray, write_ppm
from sgnet.sggraph import build_signature_graph


def test_header_and_size(tmp_path):
    m = np.arange(144.0).reshape(12, 12)
    img = render_graph(m, build_signature_graph(m, 6), scale=4)
    assert img.shape == (48, 48, 3) and img.dtype == np.uint8
    write_ppm(tmp_path / "g.ppm", img)
    data = (tmp_path / "g.ppm").read_bytes()
    assert data.startswith(b"P6\n48 48\n255\n")
    assert len(data) == len(b"P6\n48 48\n255\n") + 48 * 48 * 3


def test_nodes_red_edges_green():
    m = np.zeros((12, 12))
    m[5, 5] = m[5, 11] = 1.0  # nodes of the top row of patches
    g = build_signature_graph(m, 6)
    img = render_graph(m, g, scale=4)
    assert tuple(img[5 * 4 + 2, 5 * 4 + 2]) == (255, 0, 0)
    mid = (5 * 4 + 2, (5 * 4 + 11 * 4) // 2 + 2)
    assert tuple(img[mid]) == (0, 255, 0)


def test_gray_scaling():
    np.testing.assert_array_equal(to_gray(np.array([[0.0, 1.0]])), [[0, 255]])
    np.testing.assert_array_equal(to_gray(np.ones((2, 2))), 0)


def test_line_endpoints_and_connectivity():
    pts = _line(0, 0, 3, 7)
    assert pts[0] == (0, 0) and pts[-1] == (3, 7)
    assert all(max(abs(a[0] - b[0]), abs(a[1] - b[1])) == 1 for a, b in zip(pts, pts[1:]))


def test_ppm_bytes_rejects_bad_arrays():
    with pytest.raises(ValueError):
        ppm_bytes(np.zeros((2, 2), np.uint8))
