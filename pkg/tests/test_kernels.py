import numpy as np
import pytest

from tpdm_ct import _fallback, kernels

compiled = pytest.importorskip("tpdm_ct._ckernels") if kernels.BACKEND == "cython" else None
needs_compiled = pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled extension not built")


def _fp_args(rng):
    vol = rng.random((10, 9, 8))
    return (vol, -2.25, -2.0, -1.75, 0.5, np.linspace(0, 2 * np.pi, 6, endpoint=False),
            50.0, 100.0, 12, 11, 0.9, 0.25)


def _bp_args(rng):
    q = rng.standard_normal((6, 12, 11))
    return (q, -2.25, -2.0, -1.75, 0.5, 10, 9, 8, np.linspace(0, 2 * np.pi, 6, endpoint=False), 50.0, 0.45)


@needs_compiled
def test_forward_project_matches_fallback(rng):
    args = _fp_args(rng)
    a = compiled.forward_project(*args, 1)
    b = _fallback.forward_project(*args)
    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)


@needs_compiled
def test_backproject_matches_fallback(rng):
    args = _bp_args(rng)
    np.testing.assert_allclose(compiled.backproject(*args, 1), _fallback.backproject(*args), rtol=1e-10, atol=1e-12)


@needs_compiled
@pytest.mark.parametrize("name", ["sq_distances", "pairwise_dot", "weighted_sum"])
def test_dense_kernels_match_fallback(rng, name):
    X = rng.standard_normal((13, 37))
    D = rng.standard_normal((21, 37))
    if name == "weighted_sum":
        X = rng.random((13, 21))
    a = getattr(compiled, name)(X, D, 1)
    b = getattr(_fallback, name)(X, D)
    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-10)


@needs_compiled
def test_thread_count_does_not_change_bits(rng):
    fp = _fp_args(rng)
    bp = _bp_args(rng)
    X = rng.standard_normal((19, 50))
    D = rng.standard_normal((23, 50))
    W = rng.random((19, 23))
    for n in (2, 3, 5):
        assert compiled.forward_project(*fp, 1).tobytes() == compiled.forward_project(*fp, n).tobytes()
        assert compiled.backproject(*bp, 1).tobytes() == compiled.backproject(*bp, n).tobytes()
        assert compiled.sq_distances(X, D, 1).tobytes() == compiled.sq_distances(X, D, n).tobytes()
        assert compiled.weighted_sum(W, D, 1).tobytes() == compiled.weighted_sum(W, D, n).tobytes()


@needs_compiled
def test_batch_split_does_not_change_bits(rng):
    X = rng.standard_normal((17, 40))
    D = rng.standard_normal((9, 40))
    W = rng.random((17, 9))
    full_d = compiled.sq_distances(X, D, 1)
    full_w = compiled.weighted_sum(W, D, 1)
    full_p = compiled.pairwise_dot(X, D, 1)
    for b in (0, 5, 16):
        assert compiled.sq_distances(X[b:b + 1], D, 1).tobytes() == full_d[b:b + 1].tobytes()
        assert compiled.weighted_sum(W[b:b + 1], D, 1).tobytes() == full_w[b:b + 1].tobytes()
        assert compiled.pairwise_dot(X[b:b + 1], D, 1).tobytes() == full_p[b:b + 1].tobytes()


def test_sq_distances_oracle(rng):
    X = rng.standard_normal((4, 6))
    D = rng.standard_normal((5, 6))
    brute = ((X[:, None, :] - D[None]) ** 2).sum(-1)
    np.testing.assert_allclose(kernels.sq_distances(X, D), brute, rtol=1e-12, atol=1e-12)
    assert np.all(kernels.sq_distances(D, D).diagonal() == 0)


def test_thread_setter():
    old = kernels.get_num_threads()
    kernels.set_num_threads(2)
    assert kernels.get_num_threads() == 2
    kernels.set_num_threads(old)
    with pytest.raises(ValueError):
        kernels.set_num_threads(0)


def test_backend_selection_env(monkeypatch):
    import importlib

    monkeypatch.setenv("TPDM_CT_PURE_PYTHON", "1")
    mod = importlib.reload(kernels)
    try:
        assert mod.BACKEND == "python"
    finally:
        monkeypatch.delenv("TPDM_CT_PURE_PYTHON")
        importlib.reload(kernels)
