import numpy as np
import pytest

from pixood.noise import gen_gaussian_noise, gen_perlin_noise, perlin2d
from pixood.tensor import OOD_ID


def mean_adjacent_diff(img):
    return np.abs(np.diff(img, axis=1)).mean()


def test_gaussian_deterministic_and_labelled():
    a, la = gen_gaussian_noise(32, 48, 3, seed=7)
    b, _ = gen_gaussian_noise(32, 48, 3, seed=7)
    c, _ = gen_gaussian_noise(32, 48, 3, seed=8)
    assert a.tobytes() == b.tobytes() and a.tobytes() != c.tobytes()
    assert a.dtype == np.float32 and a.shape == (32, 48, 3)
    assert (la == OOD_ID).all() and la.dtype == np.uint16
    assert a.min() >= 0 and a.max() <= 1


def test_gaussian_mean_full_resolution():
    img, _ = gen_gaussian_noise(1024, 2048, 3, seed=0)
    assert abs(img.mean() - 0.5) < 0.02


def test_perlin_deterministic_range_labels():
    a, la = gen_perlin_noise(64, 96, cell=16, channels=3, seed=7)
    b, _ = gen_perlin_noise(64, 96, cell=16, channels=3, seed=7)
    assert a.tobytes() == b.tobytes()
    assert a.min() >= 0 and a.max() <= 1
    assert (la == OOD_ID).all()
    # channels use independent permutation tables
    assert not np.array_equal(a[..., 0], a[..., 1])


def test_perlin_smoother_than_gaussian():
    p, _ = gen_perlin_noise(256, 256, cell=32, channels=3, seed=1)
    g, _ = gen_gaussian_noise(256, 256, 3, seed=1)
    assert mean_adjacent_diff(p) < mean_adjacent_diff(g)


def test_perlin_continuous_across_cells():
    n = perlin2d(64, 64, 8, np.random.default_rng(0).permutation(256))
    # no jumps at lattice lines: neighbour differences stay small everywhere
    assert np.abs(np.diff(n, axis=0)).max() < 0.3
    assert np.abs(np.diff(n, axis=1)).max() < 0.3
    assert np.abs(n).max() <= np.sqrt(0.5) + 1e-12


def test_perlin_cell_precondition():
    with pytest.raises(ValueError):
        gen_perlin_noise(8, 8, cell=1)
