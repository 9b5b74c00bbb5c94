"""Randomised invariant and oracle checks behind ``sgn verify``.

Each property takes a numpy Generator and returns ``(passed, detail)``.
The seed changes the random cases; a correct build passes for every seed.
"""
from __future__ import annotations

import json
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import kernels, nn
from .attention import MhaConfig, init_mha_params, mha_backward, mha_forward
from .data import load_idx_images, load_idx_labels, write_idx_images, write_idx_labels
from .model import SgnConfig, SgnModel
from .oracles import brute_force_conv, brute_force_maxpool, brute_force_nodes, numeric_grad, rel_error
from .serialize import model_bytes, model_from_bytes
from .sggraph import build_signature_graph
from .spectral import (
    COMBINATORIAL, NORMALIZED, adjacency_matrix, connected_components, degree_matrix,
    eigendecompose, incidence_matrix, laplacian,
)

GRAD_TOL = 1e-3
SPECTRAL_TOL = 1e-9


def random_graph(rng, max_grid: int = 16, link_chains: bool = False):
    """Signature graph over a random map whose patch grid is 1..max_grid per side."""
    rows, cols = rng.integers(1, max_grid + 1, size=2)
    p = int(rng.integers(2, 5))
    h = int(rows * p - rng.integers(0, p))
    w = int(cols * p - rng.integers(0, p))
    fmap = rng.standard_normal((h, w))
    mode = "horizontal" if rng.random() < 0.5 else "vertical"
    ext = "maxima" if rng.random() < 0.5 else "minima"
    return build_signature_graph(fmap, p, ext, mode, link_chains=link_chains)


def check_spectral_graph(graph, rng) -> dict:
    """All spectral identities for one graph; returns the measured errors."""
    m = incidence_matrix(graph)
    combo = degree_matrix(graph) - adjacency_matrix(graph)
    mtm_ok = bool(np.array_equal(m.T @ m, combo)) and np.array_equal(combo, laplacian(graph, COMBINATORIAL))
    lap = laplacian(graph, NORMALIZED)
    dec = eigendecompose(lap)
    lam = dec.eigenvalues
    in_range = bool(lam.min() >= -SPECTRAL_TOL and lam.max() <= 2 + SPECTRAL_TOL)
    zeros = int(np.sum(np.abs(lam) < SPECTRAL_TOL))
    components = connected_components(graph)
    # Rayleigh quotient of each eigenvector, and the edge-sum form of x'Lx
    v = dec.eigenvectors
    rq_err = float(np.max(np.abs(np.einsum("ik,ij,jk->k", v, lap, v) - lam))) if len(lam) else 0.0
    x = rng.standard_normal(graph.node_count)
    deg = adjacency_matrix(graph).sum(axis=1).astype(np.float64)
    y = np.where(deg > 0, x / np.sqrt(np.maximum(deg, 1)), 0.0)
    edge_sum = sum((y[i] - y[j]) ** 2 for i, j in graph.edges)
    form_err = abs(float(x @ lap @ x) - edge_sum) / max(1.0, edge_sum)
    return {
        "mtm": mtm_ok,
        "in_range": in_range,
        "zero_mult_ok": zeros == components,
        "rayleigh_err": max(rq_err, form_err),
    }


# -- properties ------------------------------------------------------------

def prop_laplacian_mtm_identity(rng):
    bad = 0
    for _ in range(100):
        graph = random_graph(rng)
        m = incidence_matrix(graph)
        bad += not np.array_equal(m.T @ m, degree_matrix(graph) - adjacency_matrix(graph))
    return bad == 0, {"graphs": 100, "failures": bad}


def prop_normalized_spectrum(rng):
    worst, failures = 0.0, 0
    for _ in range(60):
        r = check_spectral_graph(random_graph(rng, max_grid=10), rng)
        worst = max(worst, r["rayleigh_err"])
        failures += not (r["in_range"] and r["zero_mult_ok"] and r["rayleigh_err"] < SPECTRAL_TOL)
    return failures == 0, {"graphs": 60, "failures": failures, "max_rayleigh_err": worst}


def prop_eigen_reconstruction(rng):
    n = int(rng.integers(2, 25))
    a = rng.standard_normal((n, n))
    a = a + a.T
    dec = eigendecompose(a)
    err = float(np.abs(dec.eigenvectors @ np.diag(dec.eigenvalues) @ dec.eigenvectors.T - a).max())
    orth = float(np.abs(dec.eigenvectors.T @ dec.eigenvectors - np.eye(n)).max())
    ref = np.linalg.eigvalsh(a)
    eig_err = float(np.abs(dec.eigenvalues - ref).max())
    ok = err < 1e-9 and orth < 1e-9 and eig_err < 1e-9 and bool(np.all(np.diff(dec.eigenvalues) >= 0))
    return ok, {"n": n, "recon_err": err, "orth_err": orth, "eig_err": eig_err}


def prop_node_selection_oracle(rng):
    mismatches = 0
    for _ in range(200):
        p = int(rng.integers(2, 7))
        h, w = (int(v) for v in rng.integers(1, 20, size=2))
        # integer-valued maps exercise tie breaking
        fmap = rng.integers(-3, 4, size=(h, w)).astype(np.float64) if rng.random() < 0.3 else rng.standard_normal((h, w))
        for ext in ("maxima", "minima"):
            g = build_signature_graph(fmap, p, ext, "horizontal")
            nodes, attrs = brute_force_nodes(fmap.tolist(), p, ext)
            if list(g.nodes) != nodes or not np.array_equal(g.attributes, attrs):
                mismatches += 1
    return mismatches == 0, {"maps": 200, "mismatches": mismatches}


def prop_maxpool_oracle(rng):
    x = rng.standard_normal((2, 7, 9, 3))
    out, _ = nn.maxpool_forward(x, 2)
    ok = np.array_equal(out, brute_force_maxpool(x, 2, 2))
    return bool(ok), {}


def prop_conv_oracle(rng):
    x = rng.standard_normal((2, 6, 5, 3))
    f = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    out, _ = nn.conv2d_forward(x, f, b, stride, pad)
    err = rel_error(out, brute_force_conv(x, f, b, stride, pad))
    return err < 1e-12, {"rel_err": err}


def prop_kernel_backends_agree(rng):
    names = kernels.backends()
    if len(names) < 2:
        return True, {"backends": [m.BACKEND for m in names], "note": "single backend"}
    x = rng.standard_normal((2, 10, 11, 3))
    maps = rng.standard_normal((3, 12, 12))
    a = rng.standard_normal((12, 12))
    a = a + a.T
    ok = True
    for impl in names[1:]:
        ok &= np.array_equal(kernels.im2col(x, 3, 3, 1, impl=names[0]), kernels.im2col(x, 3, 3, 1, impl=impl))
        ok &= all(np.array_equal(u, v) for u, v in zip(kernels.maxpool_forward(x, 2, 2, impl=names[0]),
                                                      kernels.maxpool_forward(x, 2, 2, impl=impl)))
        for minimize in (False, True):
            ok &= all(np.array_equal(u, v) for u, v in zip(kernels.patch_extrema(maps, 4, minimize, 11, 10, impl=names[0]),
                                                          kernels.patch_extrema(maps, 4, minimize, 11, 10, impl=impl)))
        w0 = kernels.jacobi_eigh(a, 1e-12, 100, impl=names[0])[0]
        w1 = kernels.jacobi_eigh(a, 1e-12, 100, impl=impl)[0]
        ok &= bool(np.allclose(np.sort(w0), np.sort(w1), atol=1e-10))
    return bool(ok), {"backends": [m.BACKEND for m in names]}


def _grad_check(f, arrays: dict, analytic: dict, eps=1e-6):
    return {k: rel_error(analytic[k], numeric_grad(f, arrays[k], eps)) for k in arrays}


def prop_grad_conv(rng):
    x = rng.standard_normal((2, 5, 5, 2))
    f = rng.standard_normal((3, 3, 3, 2))
    b = rng.standard_normal(3)
    r = rng.standard_normal((2, 5, 5, 3))
    out, cache = nn.conv2d_forward(x, f, b, 1, 1)
    dx, df, db = nn.conv2d_backward(r, cache, f)
    errs = _grad_check(lambda: float(np.sum(nn.conv2d_forward(x, f, b, 1, 1)[0] * r)),
                       {"x": x, "filters": f, "bias": b}, {"x": dx, "filters": df, "bias": db})
    return max(errs.values()) < GRAD_TOL, errs


def prop_grad_batchnorm(rng):
    x = rng.standard_normal((4, 3, 3, 2))
    gamma, beta = rng.standard_normal(2), rng.standard_normal(2)
    r = rng.standard_normal(x.shape)

    def f():
        return float(np.sum(nn.batchnorm_forward(x, gamma, beta, np.zeros(2), np.ones(2), update_stats=False)[0] * r))

    _, cache = nn.batchnorm_forward(x, gamma, beta, np.zeros(2), np.ones(2), update_stats=False)
    dx, dg, db = nn.batchnorm_backward(r, cache)
    errs = _grad_check(f, {"x": x, "gamma": gamma, "beta": beta}, {"x": dx, "gamma": dg, "beta": db})
    return max(errs.values()) < GRAD_TOL, errs


def prop_grad_fc_cross_entropy(rng):
    x = rng.standard_normal((5, 7))
    w = rng.standard_normal((4, 7))
    b = rng.standard_normal(4)
    labels = rng.integers(0, 4, size=5)
    loss, g = nn.cross_entropy(nn.fc_forward(x, w, b), labels)
    dx, dw, db = nn.fc_backward(g, x, w)
    errs = _grad_check(lambda: nn.cross_entropy(nn.fc_forward(x, w, b), labels)[0],
                       {"x": x, "weights": w, "bias": b}, {"x": dx, "weights": dw, "bias": db})
    return max(errs.values()) < GRAD_TOL, errs


def prop_grad_mha(rng):
    cfg = MhaConfig(2, 4, 6)
    keys = rng.standard_normal((2, 5, 3))
    feats = rng.standard_normal((2, 5, 4))
    params = init_mha_params(cfg, 3, 4, rng, np.float64)
    r = rng.standard_normal((2, 5, 6))
    out, cache = mha_forward(keys, feats, params, cfg)
    gk, gf, gp = mha_backward(r, cache)

    def f():
        return float(np.sum(mha_forward(keys, feats, params, cfg)[0] * r))

    errs = _grad_check(f, {"keys": keys, "feats": feats, **params}, {"keys": gk, "feats": gf, **gp})
    return max(errs.values()) < GRAD_TOL, errs


def prop_attention_row_stochastic(rng):
    cfg = MhaConfig(int(rng.choice([1, 2, 4])), 8, 8)
    keys = rng.standard_normal((3, 9, 5)).astype(np.float32) * 10
    feats = rng.standard_normal((3, 9, 6)).astype(np.float32)
    out, cache = mha_forward(keys, feats, init_mha_params(cfg, 5, 6, rng), cfg)
    err = float(np.abs(cache.attn.sum(axis=-1) - 1).max())
    ok = err < 1e-9 and out.shape == (3, 9, 8) and bool(np.all(cache.attn >= 0))
    return ok, {"row_sum_err": err}


def toy_config(**kw) -> SgnConfig:
    base = dict(input_shape=(8, 8, 1), blocks=((3, 3, 2), (4, 3, 2)), sg_layers=(1,), patch_size=4,
                skip_connection=True, mha=MhaConfig(2, 4, 4), class_count=3)
    base.update(kw)
    return SgnConfig(**base)


def discrete_state(cache) -> tuple:
    """Every piecewise choice a forward pass made: ReLU masks, pool and node argmaxes."""
    parts = []
    for conv_cache, bn_cache, y, argmax, _ in cache.block_caches:
        parts += [(y > 0).tobytes(), argmax.tobytes()]
    for k in sorted(cache.tap_caches):
        parts.append(cache.tap_caches[k].ys.tobytes())
    return tuple(parts)


def model_grad_check(model: SgnModel, images, labels, coords_per_param: int, rng, eps=1e-5,
                     floor=1e-6) -> tuple[dict, int]:
    """FD check of every parameter on a float64 model, skipping coordinates whose
    perturbation changes any discrete choice (argmax-stability guard).

    ``floor`` bounds the error scale from below: a conv bias ahead of a
    train-mode batch norm has an exactly zero gradient, leaving only noise.
    Returns per-parameter errors and the number of coordinates checked.
    """

    def run():
        logits, cache = model.forward(images, "train", update_stats=False)
        return nn.cross_entropy(logits, labels)[0], cache

    logits, cache = model.forward(images, "train", update_stats=False)
    base = discrete_state(cache)
    grads = model.backward(cache, nn.cross_entropy(logits, labels)[1])
    out, checked = {}, 0
    for name, arr in model.named_parameters():
        flat = arr.reshape(-1)
        picks = rng.choice(flat.size, size=min(coords_per_param, flat.size), replace=False)
        num, ana = [], []
        for idx in picks:
            old = flat[idx]
            flat[idx] = old + eps
            lp, cp = run()
            flat[idx] = old - eps
            lm, cm = run()
            flat[idx] = old
            if discrete_state(cp) != base or discrete_state(cm) != base:
                continue
            num.append((lp - lm) / (2 * eps))
            ana.append(grads[name].reshape(-1)[idx])
        out[name] = rel_error(ana, num, floor) if num else 0.0
        checked += len(num)
    return out, checked


def prop_grad_full_model(rng):
    model = SgnModel(toy_config(seed=int(rng.integers(1 << 30))), dtype=np.float64)
    images = rng.standard_normal((4, 8, 8, 1))
    labels = rng.integers(0, 3, size=4)
    errs, checked = model_grad_check(model, images, labels, 6, rng)
    return max(errs.values()) < GRAD_TOL and checked > 0, {"max_rel_err": max(errs.values()), "checked": checked}


def prop_idx_roundtrip(rng):
    imgs = rng.integers(0, 256, size=(5, 4, 3), dtype=np.uint8)
    labels = rng.integers(0, 10, size=5).tolist()
    with tempfile.TemporaryDirectory() as d:
        write_idx_images(Path(d, "i"), imgs)
        write_idx_labels(Path(d, "l"), labels)
        back = np.rint(load_idx_images(Path(d, "i"))[..., 0] * 255).astype(np.uint8)
        ok = np.array_equal(back, imgs) and load_idx_labels(Path(d, "l")) == labels
    return bool(ok), {}


def prop_model_roundtrip(rng):
    model = SgnModel(toy_config(seed=int(rng.integers(1 << 30))))
    images = rng.standard_normal((3, 8, 8, 1)).astype(np.float32)
    clone = model_from_bytes(model_bytes(model))
    ok = np.array_equal(model.forward(images)[0], clone.forward(images)[0])
    ok &= model_bytes(clone) == model_bytes(model)
    return bool(ok), {}


PROPERTIES = {
    "laplacian_MtM_identity": prop_laplacian_mtm_identity,
    "normalized_spectrum": prop_normalized_spectrum,
    "eigen_reconstruction": prop_eigen_reconstruction,
    "node_selection_oracle": prop_node_selection_oracle,
    "maxpool_oracle": prop_maxpool_oracle,
    "conv_oracle": prop_conv_oracle,
    "kernel_backends_agree": prop_kernel_backends_agree,
    "grad_conv": prop_grad_conv,
    "grad_batchnorm": prop_grad_batchnorm,
    "grad_fc_cross_entropy": prop_grad_fc_cross_entropy,
    "grad_mha": prop_grad_mha,
    "grad_full_model": prop_grad_full_model,
    "attention_row_stochastic": prop_attention_row_stochastic,
    "idx_roundtrip": prop_idx_roundtrip,
    "model_roundtrip": prop_model_roundtrip,
}


def run_properties(seed: int = 0, force_fail=(), only=None, out=sys.stdout) -> bool:
    """Print one JSON line per property; True iff all pass."""
    all_ok = True
    for i, (name, fn) in enumerate(PROPERTIES.items()):
        if only and name not in only:
            continue
        rng = np.random.default_rng([seed, i])
        t0 = time.perf_counter()
        try:
            ok, detail = fn(rng)
        except Exception as exc:  # a crash is a failed property, not a crashed suite
            ok, detail = False, {"error": f"{type(exc).__name__}: {exc}"}
        if name in force_fail:
            ok, detail = False, {**detail, "forced": True}
        all_ok &= bool(ok)
        rec = {"property": name, "result": "pass" if ok else "fail", "seconds": round(time.perf_counter() - t0, 3)}
        rec.update({k: _jsonable(v) for k, v in detail.items()})
        out.write(json.dumps(rec) + "\n")
    return all_ok


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    return v
