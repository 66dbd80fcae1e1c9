"""Backend parity: the numba and numpy kernels must agree."""
import numpy as np
import pytest

from ctbkit import _accel, kernels

pytestmark = pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba not installed")


def _both(fn, *args):
    with _accel.backend("numba"):
        a = fn(*args)
    with _accel.backend("numpy"):
        b = fn(*args)
    return a, b


@pytest.mark.parametrize("seed", range(20))
def test_raster_backends_bit_identical(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(3, 12))
    verts = rng.uniform(0, 64, size=(k, 2))
    a, b = _both(kernels.raster_polygon, verts, 64, 48)
    assert np.array_equal(a, b)


def test_raster_square_cell_count():
    verts = np.array([[2.0, 2.0], [10.0, 2.0], [10.0, 6.0], [2.0, 6.0]])
    for be in ("numba", "numpy"):
        with _accel.backend(be):
            mask = kernels.raster_polygon(verts, 16, 16)
        assert mask.sum() == 8 * 4
        assert mask[2:6, 2:10].all()


@pytest.mark.parametrize("seed", range(10))
def test_roi_backends_agree(seed):
    rng = np.random.default_rng(seed)
    fm = rng.normal(size=(3, 9, 11))
    x1, y1 = rng.uniform(-2, 8, size=2)
    box = (x1, y1, x1 + rng.uniform(0, 6), y1 + rng.uniform(0, 6))
    a, b = _both(kernels.roi_align_kernel, fm, box, 4, 2)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_mean_shift_backends_agree(seed):
    rng = np.random.default_rng(seed)
    pts = np.concatenate([rng.normal(0, 3, size=(8, 2)), rng.normal(60, 3, size=(8, 2))])
    (ma, ia, ca), (mb, ib, cb) = _both(kernels.mean_shift_kernel, pts, 10.0, 1e-6, 200)
    assert ca and cb and ia == ib
    np.testing.assert_allclose(ma, mb, atol=1e-9)


@pytest.mark.parametrize("seed", range(20))
def test_components_backends_identical(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 60))
    m = int(rng.integers(0, n + 1))
    src = rng.integers(0, n, size=m)
    dst = rng.integers(0, n, size=m)
    a, b = _both(kernels.connected_components, n, src, dst)
    assert np.array_equal(a, b)
    # canonical label is the component minimum
    for v, lab in enumerate(a):
        assert lab <= v


def test_env_flag_parsing(monkeypatch):
    monkeypatch.setenv(_accel.ENV_FLAG, "1")
    assert _accel._env_disabled()
    monkeypatch.setenv(_accel.ENV_FLAG, "0")
    assert not _accel._env_disabled()
    with pytest.raises(ValueError):
        _accel.set_backend("cuda")


def test_benchmark_smoke(capsys):
    import importlib.util
    from pathlib import Path

    path = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_kernels.py"
    spec = importlib.util.spec_from_file_location("bench_kernels", path)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    mod.main(["--repeat", "1", "--json"])
    assert "roi_align" in capsys.readouterr().out
