import numpy as np
import pytest
from pytest import raises

from hgc import preprocess
from hgc.hsi_io import HsiCube


def random_cube(rng, width=6, height=5, bands=4):
    pixels = rng.normal(size=(width * height, bands)) @ rng.normal(size=(bands, bands))
    return HsiCube.from_pixels(pixels, width, height)


@pytest.mark.parametrize("size", [1, 2, 5, 9])
def test_jacobi_eigh_matches_reconstruction(size):
    rng = np.random.default_rng(size)
    base = rng.normal(size=(size, size))
    matrix = base + base.T
    values, vectors = preprocess.jacobi_eigh(matrix)
    assert np.allclose(vectors.T @ vectors, np.eye(size), atol=1e-9)
    assert np.allclose(vectors @ np.diag(values) @ vectors.T, matrix, atol=1e-8)
    assert np.allclose(np.sort(values), np.linalg.eigvalsh(matrix), atol=1e-8)


def test_jacobi_eigh_rejects_asymmetric():
    with raises(ValueError):
        preprocess.jacobi_eigh(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_fit_pca_orders_components():
    rng = np.random.default_rng(0)
    cube = random_cube(rng)
    model = preprocess.fit_pca(cube, 3)
    assert model.components.shape == (3, 4)
    assert model.dim == 3 and model.bands == 4
    assert np.all(np.diff(model.explained_variance) <= 1e-12)
    assert np.allclose(model.components @ model.components.T, np.eye(3), atol=1e-9)
    for row in model.components:
        assert row[np.argmax(np.abs(row))] > 0

    # Population covariance: variance of the scores equals the eigenvalues.
    reduced = preprocess.transform(cube, model)
    scores = reduced.pixels()
    assert np.allclose(scores.mean(axis=0), 0.0, atol=1e-10)
    assert np.allclose(scores.var(axis=0), model.explained_variance, atol=1e-9)


def test_full_rank_pca_inverts():
    rng = np.random.default_rng(1)
    cube = random_cube(rng)
    model = preprocess.fit_pca(cube, cube.bands)
    restored = preprocess.inverse_transform(preprocess.transform(cube, model), model)
    assert np.allclose(restored.data, cube.data, atol=1e-9)


def test_fit_pca_errors():
    rng = np.random.default_rng(2)
    cube = random_cube(rng)
    with raises(ValueError):
        preprocess.fit_pca(cube, 0)
    with raises(ValueError):
        preprocess.fit_pca(cube, 5)
    with raises(ValueError, match="Degenerate"):
        preprocess.fit_pca(HsiCube(3, 3, 2, np.ones((2, 3, 3))), 1)
    with raises(ValueError, match="pixels"):
        preprocess.fit_pca(HsiCube(1, 2, 4, np.ones((4, 2, 1))), 3)

    model = preprocess.fit_pca(cube, 2)
    with raises(ValueError):
        preprocess.transform(HsiCube(2, 2, 3, np.zeros((3, 2, 2))), model)


def test_save_load_pca_model(fs):
    rng = np.random.default_rng(3)
    model = preprocess.fit_pca(random_cube(rng), 2)
    preprocess.save_pca_model(model, "/home/pca.json")
    loaded = preprocess.load_pca_model("/home/pca.json")
    assert np.array_equal(loaded.mean, model.mean)
    assert np.array_equal(loaded.components, model.components)
    assert np.array_equal(loaded.explained_variance, model.explained_variance)
