import numpy as np
import pytest
from pytest import raises

from hgc import superpixel, utils
from hgc.hsi_io import DatasetSplit, HsiCube, LabelMap
from hgc.superpixel import NodeLabels, SuperpixelMap

from .test_constants import *


@pytest.fixture
def two_region_cube():
    width, height = 12, 8
    rng = np.random.default_rng(0)
    pixels = np.zeros((width * height, 2))
    cols = np.tile(np.arange(width), height)
    pixels[cols >= 6] = 10.0
    pixels += rng.normal(0.0, 0.01, size=pixels.shape)
    return HsiCube.from_pixels(pixels, width, height)


@pytest.fixture
def grid_map():
    return SuperpixelMap(width=3, height=4, assignment=assignment_grid.copy())


def test_segment_respects_regions(two_region_cube):
    smap = superpixel.segment(two_region_cube, 8, compactness=1.0, iters=10)
    assert smap.assignment.shape == (8, 12)
    assert superpixel.check_connectivity(smap)
    assert smap.sizes.sum() == 96
    # No superpixel straddles the spectral edge between columns 5 and 6.
    for lab in range(smap.p):
        cols = np.nonzero(smap.assignment == lab)[1]
        assert cols.max() < 6 or cols.min() >= 6


def test_segment_constant_image_is_a_regular_grid():
    flat = HsiCube.from_pixels(np.full((144, 3), 0.5), 12, 12)
    smap = superpixel.segment(flat, 4)
    assert smap.p == 4
    assert smap.sizes.tolist() == [36, 36, 36, 36]
    assert smap.assignment[:6, :6].tolist() == [[0] * 6] * 6
    assert smap.assignment[6:, 6:].tolist() == [[3] * 6] * 6


def test_segment_single_superpixel():
    rng = np.random.default_rng(2)
    cube = HsiCube.from_pixels(rng.normal(size=(144, 3)), 12, 12)
    smap = superpixel.segment(cube, 1)
    assert smap.p == 1
    assert smap.sizes.tolist() == [144]


def test_segment_two_halves():
    width, height = 16, 8
    cols = np.tile(np.arange(width), height)
    pixels = np.where(cols[:, None] >= 8, 10.0, 0.0) * np.ones((1, 2))
    smap = superpixel.segment(HsiCube.from_pixels(pixels, width, height), 2)
    assert smap.p == 2
    # The boundary lies on the interface between columns 7 and 8.
    assert np.all(smap.assignment[:, :8] == 0)
    assert np.all(smap.assignment[:, 8:] == 1)


def test_segment_is_deterministic(two_region_cube):
    first = superpixel.segment(two_region_cube, 8, seed=0)
    second = superpixel.segment(two_region_cube, 8, seed=5)
    assert np.array_equal(first.assignment, second.assignment)


def test_segment_raster_order(two_region_cube):
    smap = superpixel.segment(two_region_cube, 8)
    flat = smap.flat()
    _, first = np.unique(flat, return_index=True)
    assert np.all(np.diff(first) > 0)
    assert flat[0] == 0


@pytest.mark.parametrize("p_target, iters", [(0, 10), (97, 10), (4, 0)])
def test_segment_rejects_parameters(two_region_cube, p_target, iters):
    with raises(ValueError):
        superpixel.segment(two_region_cube, p_target, iters=iters)


def test_check_connectivity(grid_map):
    assert superpixel.check_connectivity(grid_map)
    split = SuperpixelMap(
        width=3, height=2, assignment=np.array([[0, 1, 0], [0, 1, 0]])
    )
    assert not superpixel.check_connectivity(split)


def test_compute_attributes_group_mean(grid_map):
    pixels = np.arange(12, dtype=np.float64)[:, None] * np.array([[1.0, 2.0]])
    reduced = HsiCube.from_pixels(pixels, 3, 4)
    attributes = superpixel.compute_attributes(grid_map, reduced)
    assert attributes.shape == (3, 2)
    assert np.allclose(attributes[0], [2.0, 4.0])
    assert np.allclose(attributes[1], [6.5, 13.0])
    assert np.allclose(attributes[2], [8.0, 16.0])


def test_compute_attributes_matches_group_by_oracle():
    rng = np.random.default_rng(7)
    for _ in range(200):
        width, height = int(rng.integers(2, 7)), int(rng.integers(2, 7))
        p = int(rng.integers(1, width * height + 1))
        flat = np.concatenate([np.arange(p), rng.integers(0, p, width * height - p)])
        rng.shuffle(flat)
        smap = SuperpixelMap(width, height, flat.reshape(height, width))
        pixels = rng.normal(size=(width * height, 3))
        attributes = superpixel.compute_attributes(
            smap, HsiCube.from_pixels(pixels, width, height)
        )

        groups = {}
        for index, lab in enumerate(flat):
            groups.setdefault(int(lab), []).append(pixels[index])
        for lab in range(p):
            expected = np.mean(groups[lab], axis=0)
            assert np.allclose(attributes[lab], expected, rtol=1e-12, atol=1e-12)


def test_compute_attributes_errors(grid_map):
    with raises(ValueError):
        superpixel.compute_attributes(grid_map, HsiCube(4, 3, 1, np.zeros((1, 3, 4))))
    gap = SuperpixelMap(2, 1, np.array([[0, 2]]))
    with raises(ValueError, match="Empty"):
        superpixel.compute_attributes(gap, HsiCube(2, 1, 1, np.zeros((1, 1, 2))))


def test_aggregate_labels(grid_map):
    labels = LabelMap(
        3,
        4,
        np.array([[1, 1, 2], [1, 2, 2], [0, 0, 2], [1, 1, 0]]),
    )
    split = DatasetSplit(
        train_pixels={1: np.array([0, 3]), 2: np.array([2, 4])},
        val_pixels={1: np.array([9]), 2: np.array([5])},
        test_pixels=np.array([1, 8, 10]),
        seed=0,
    )
    node_labels = superpixel.aggregate_labels(grid_map, split, labels)
    assert node_labels.train.tolist() == [1, 2, 0]
    assert node_labels.val.tolist() == [0, 2, 1]
    assert node_labels.test.tolist() == [1, 2, 1]
    assert node_labels.impure.tolist() == [True, False, False]
    assert node_labels.num_nodes == 3


def test_aggregate_labels_tie_goes_to_smallest_class(grid_map):
    labels = LabelMap(3, 4, np.array([[2, 1, 0], [0, 0, 0], [0, 0, 0], [0, 0, 0]]))
    split = DatasetSplit(
        train_pixels={1: np.array([1]), 2: np.array([0])},
        val_pixels={},
        test_pixels=np.zeros(0, dtype=np.int64),
        seed=0,
    )
    node_labels = superpixel.aggregate_labels(grid_map, split, labels)
    assert node_labels.train.tolist() == [1, 0, 0]
    assert node_labels.impure.tolist() == [True, False, False]


def test_node_labels_role_and_subset():
    node_labels = NodeLabels(
        train=np.array([1, 0, 2]),
        val=np.array([0, 1, 0]),
        test=np.array([0, 0, 0]),
        impure=np.array([False, False, True]),
    )
    assert node_labels.role("val").tolist() == [0, 1, 0]
    with raises(ValueError):
        node_labels.role("impure")
    subset = node_labels.subset(np.array([2, 0]))
    assert subset.train.tolist() == [2, 1]
    assert subset.impure.tolist() == [True, False]


def test_artifacts(tmp_path, grid_map):
    path = str(tmp_path / "segmentation.npz")
    superpixel.save_segmentation(grid_map, path)
    loaded = superpixel.load_segmentation(path)
    assert np.array_equal(loaded.assignment, grid_map.assignment)
    assert (loaded.width, loaded.height) == (3, 4)

    node_labels = NodeLabels(
        train=np.array([1, 0, 2]),
        val=np.array([0, 1, 0]),
        test=np.array([2, 0, 0]),
        impure=np.array([False, True, False]),
    )
    labels_path = str(tmp_path / "node_labels.npz")
    superpixel.save_node_labels(node_labels, labels_path)
    loaded_labels = superpixel.load_node_labels(labels_path)
    assert loaded_labels.train.tolist() == [1, 0, 2]
    assert loaded_labels.impure.tolist() == [False, True, False]

    grid_path = str(tmp_path / "grid.txt")
    superpixel.save_assignment_grid(grid_map, grid_path)
    with open(grid_path, "r") as reader:
        assert reader.readline() == "0 0 1\n"

    overlay_path = str(tmp_path / "overlay.ppm")
    reduced = HsiCube.from_pixels(np.arange(12.0)[:, None], 3, 4)
    superpixel.save_boundary_overlay(grid_map, reduced, overlay_path)
    rgb = utils.read_ppm(overlay_path)
    assert rgb.shape == (4, 3, 3)
    # (0, 1) borders superpixel 1 on its right; (3, 0) is interior to 2.
    assert tuple(rgb[0, 1]) == (255, 0, 0)
    assert tuple(rgb[3, 0]) != (255, 0, 0)
