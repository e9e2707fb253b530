import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bcseg.morphology import StructuringElement, boundary_from_labels, distance_transform, erode, trimap_band

import oracles


def test_erode_full_cube_keeps_center():
    out = erode(np.ones((3, 3, 3), bool))
    assert out.sum() == 1 and out[1, 1, 1]


def test_erode_empty():
    assert not erode(np.zeros((4, 4, 4), bool)).any()


@pytest.mark.parametrize("conn", [6, 26])
@pytest.mark.parametrize("radius", [1, 2])
def test_erode_matches_neighbor_scan(conn, radius):
    rng = np.random.default_rng(conn + radius)
    for _ in range(5):
        mask = rng.random((5, 5, 5)) < 0.8
        se = StructuringElement(conn, radius)
        np.testing.assert_array_equal(erode(mask, se), oracles.erode(mask, conn, radius))


def test_structuring_element_validation():
    with pytest.raises(ValueError):
        StructuringElement(18)
    with pytest.raises(ValueError):
        StructuringElement(26, 0)


def test_boundary_of_uniform_volume_is_empty():
    assert not boundary_from_labels(np.zeros((5, 5, 5), int)).any()
    assert not boundary_from_labels(np.ones((5, 5, 5), int) * 0).any()


def test_boundary_of_cube_is_shell():
    labels = np.zeros((5, 5, 5), int)
    labels[1:4, 1:4, 1:4] = 2
    b = boundary_from_labels(labels)
    assert b.sum() == 26
    assert not b[2, 2, 2]
    assert b[1:4, 1:4, 1:4].sum() == 26


def test_boundary_of_adjacent_organs():
    labels = np.zeros((6, 6, 6), int)
    labels[:, :, :3] = 1
    labels[:, :, 3:] = 2
    np.testing.assert_array_equal(boundary_from_labels(labels), oracles.boundary(labels))
    # both organs get a contour at their shared face
    b = boundary_from_labels(labels)
    assert b[2, 2, 2] and b[2, 2, 3]


def test_boundary_inside_foreground():
    labels = oracles.random_labels(np.random.default_rng(0))
    assert not (boundary_from_labels(labels) & (labels == 0)).any()


def test_distance_transform_basics():
    m = np.zeros((4, 5, 1), bool)
    m[0, 0, 0] = True
    d = distance_transform(m)
    assert d[0, 0, 0] == 0
    assert d[3, 4, 0] == pytest.approx(5.0)


def test_distance_transform_empty_is_infinite():
    assert np.isinf(distance_transform(np.zeros((3, 3, 3), bool))).all()


def test_distance_transform_matches_all_pairs():
    rng = np.random.default_rng(1)
    for _ in range(3):
        m = rng.random((6, 6, 6)) < 0.05
        m[0, 0, 0] = True
        np.testing.assert_allclose(distance_transform(m), oracles.distance_map(m), rtol=0, atol=1e-12)


def test_distance_transform_spacing():
    m = np.zeros((3, 1, 1), bool)
    m[0] = True
    np.testing.assert_allclose(distance_transform(m, spacing=(2.0, 1.0, 1.0))[:, 0, 0], [0, 2, 4])


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_distance_transform_property(seed):
    rng = np.random.default_rng(seed)
    shape = tuple(int(v) for v in rng.integers(1, 9, size=3))
    m = rng.random(shape) < rng.uniform(0.01, 0.3)
    m.flat[rng.integers(m.size)] = True
    np.testing.assert_allclose(distance_transform(m), oracles.distance_map(m), rtol=0, atol=1e-12)


def test_trimap_width_one_is_boundary():
    labels = np.zeros((7, 7, 7), int)
    labels[2:5, 2:5, 2:5] = 1
    np.testing.assert_array_equal(trimap_band(labels, 1), boundary_from_labels(labels))


def test_trimap_empty_boundary():
    assert not trimap_band(np.zeros((5, 5, 5), int), 5).any()


def test_trimap_rejects_narrow_width():
    with pytest.raises(ValueError):
        trimap_band(np.zeros((3, 3, 3), int), 0.5)


def test_trimap_matches_distance_oracle():
    labels = np.zeros((7, 7, 7), int)
    labels[2:5, 2:5, 2:5] = 1
    np.testing.assert_array_equal(trimap_band(labels, 5), oracles.band(labels, 5))
    # band straddles the contour: inside and outside voxels alike
    band = trimap_band(labels, 5)
    assert band[3, 3, 3] and band[0, 3, 3]


def test_trimap_monotone_in_width():
    labels = oracles.random_labels(np.random.default_rng(2))
    prev = None
    for w in (1, 2, 3, 5, 7, 9):
        band = trimap_band(labels, w)
        if prev is not None:
            assert not (prev & ~band).any()
        prev = band


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_erosion_is_subset(seed):
    m = np.random.default_rng(seed).random((6, 6, 6)) < 0.7
    assert not (erode(m) & ~m).any()
