import math

import numpy as np
import pytest
from scipy import ndimage

from rlf_spotter.const import KeypointKind
from rlf_spotter.imageio import GrayImage
from rlf_spotter.keypoints import (
    DetectorParams,
    Keypoint,
    derivative_kernels,
    detect_all,
    doh_blobs,
    edge_points,
    harris_corners,
    keypoints_to_arrays,
    kind_from_code,
    saddle_points,
)
from rlf_spotter.utilities import InvalidInputError, InvalidParameterError

from .helpers import gaussian_spot, square_image


def _half_plane(size: int = 40) -> GrayImage:
    pixels = np.ones((size, size))
    pixels[:, : size // 2] = 0.0

    return GrayImage(pixels)


def _nearest(keypoints: list[Keypoint], x: float, y: float) -> float:
    return min(math.hypot(kp.x - x, kp.y - y) for kp in keypoints)


def test_derivative_kernels_are_moment_normalized():
    # Act
    smooth, first, second = derivative_kernels(1.5)

    # Assert
    offsets = np.arange(len(smooth)) - len(smooth) // 2
    assert pytest.approx(1.0) == smooth.sum()
    assert pytest.approx(1.0) == np.sum(offsets * first)
    assert pytest.approx(2.0) == np.sum(offsets**2 * second)
    assert abs(second.sum()) < 1e-12


def test_harris_finds_square_corners():
    # Arrange
    img = square_image()
    params = DetectorParams(sigma_d=1.0, sigma_i=1.5, nms_radius=3.0, max_per_character=None)
    expected = [(9.5, 9.5), (29.5, 9.5), (9.5, 29.5), (29.5, 29.5)]

    # Act
    result = harris_corners(img, params)

    # Assert
    assert len(result) >= 4
    for x, y in expected:
        assert _nearest(result, x, y) <= 3.0
    for kp in result:
        assert min(math.hypot(kp.x - x, kp.y - y) for x, y in expected) <= 3.5
        assert KeypointKind.CORNER == kp.kind


def test_doh_finds_single_blob_at_spot_center():
    # Arrange
    params = DetectorParams(sigma_d=3.0, sigma_i=4.5, nms_radius=2.0)

    # Act
    result = doh_blobs(gaussian_spot(), params)

    # Assert
    assert 1 == len(result)
    assert abs(result[0].x - 20.0) <= 0.5
    assert abs(result[0].y - 20.0) <= 0.5


def test_doh_responds_equally_to_dark_and_bright_blobs():
    # Arrange
    dark = gaussian_spot()
    bright = GrayImage(1.0 - dark.pixels)
    params = DetectorParams(sigma_d=3.0, sigma_i=4.5, nms_radius=2.0)

    # Act
    dark_result = doh_blobs(dark, params)
    bright_result = doh_blobs(bright, params)

    # Assert
    assert 1 == len(bright_result)
    assert pytest.approx(dark_result[0].response, rel=1e-9) == bright_result[0].response


def test_blob_does_not_produce_saddles():
    # Arrange
    params = DetectorParams(sigma_d=3.0, sigma_i=4.5, nms_radius=2.0)

    # Act
    result = saddle_points(gaussian_spot(), params)

    # Assert
    assert [] == result


def test_saddle_found_at_hyperbolic_point():
    # Arrange
    ys, xs = np.mgrid[0:41, 0:41]
    img = GrayImage(((xs - 20.0) ** 2 - (ys - 20.0) ** 2) / 400.0 + 0.5)
    params = DetectorParams(sigma_d=1.5, sigma_i=3.0, nms_radius=2.0)

    # Act
    result = saddle_points(img, params)

    # Assert
    assert 1 == len(result)
    assert abs(result[0].x - 20.0) <= 0.5
    assert abs(result[0].y - 20.0) <= 0.5


def test_edges_follow_the_step_and_make_no_corners():
    # Arrange
    params = DetectorParams(sigma_d=1.0, sigma_i=1.5, max_per_character=None)

    # Act
    result = detect_all(_half_plane(), params)

    # Assert
    edges = [kp for kp in result if kp.kind == KeypointKind.EDGE]
    assert len(edges) > 0
    assert all(abs(kp.x - 19.5) <= 1.0 for kp in edges)
    assert all(kp.kind == KeypointKind.EDGE for kp in result)


def test_edge_points_are_capped_by_density_limit():
    # Arrange
    params = DetectorParams(sigma_d=1.0, sigma_i=1.5, max_per_character=0.1)

    # Act
    result = edge_points(_half_plane(), params)

    # Assert
    assert 0 < len(result) <= 2


def test_detect_all_is_sorted_by_position_then_kind():
    # Arrange
    params = DetectorParams(sigma_d=1.0, sigma_i=1.5, nms_radius=2.0, max_per_character=None)

    # Act
    result = detect_all(square_image(), params)

    # Assert
    keys = [kp.sort_key for kp in result]
    assert sorted(keys) == keys


def test_detect_all_is_deterministic():
    # Arrange
    params = DetectorParams(sigma_d=1.0, sigma_i=1.5, nms_radius=2.0)

    # Act
    first = detect_all(square_image(), params)
    second = detect_all(square_image(), params)

    # Assert
    assert first == second


def test_blank_image_has_no_keypoints():
    # Arrange
    params = DetectorParams(sigma_d=1.0, sigma_i=2.0)

    # Act
    result = detect_all(GrayImage(np.ones((30, 30))), params)

    # Assert
    assert [] == result


def test_detector_params_reject_small_integration_scale():
    # Act/Assert
    with pytest.raises(InvalidParameterError):
        DetectorParams(sigma_d=2.0, sigma_i=1.0)


def test_detector_params_reject_sub_pixel_suppression_radius():
    # Act/Assert
    with pytest.raises(InvalidParameterError):
        DetectorParams(sigma_d=1.0, sigma_i=2.0, nms_radius=0.5)


def test_for_core_height_derives_scales():
    # Act
    result = DetectorParams.for_core_height(20.0)

    # Assert
    assert pytest.approx(2.0) == result.sigma_d
    assert pytest.approx(4.0) == result.sigma_i
    assert pytest.approx(4.0) == result.nms_radius


def test_keypoints_to_arrays_of_empty_list():
    # Act
    positions, kinds = keypoints_to_arrays([])

    # Assert
    assert (0, 2) == positions.shape
    assert (0,) == kinds.shape


def test_kind_from_code_round_trips_every_kind():
    # Arrange
    keypoints = [Keypoint(1.0, 2.0, kind, 1.0) for kind in KeypointKind]

    # Act
    _, kinds = keypoints_to_arrays(keypoints)

    # Assert
    assert list(KeypointKind) == [kind_from_code(int(code)) for code in kinds]


def test_kind_from_code_rejects_unknown_code():
    # Act/Assert
    with pytest.raises(InvalidInputError):
        kind_from_code(9)


def _smooth_texture(seed: int, shape: tuple[int, int] = (80, 80)) -> np.ndarray:
    rng = np.random.default_rng(seed)
    pixels = ndimage.gaussian_filter(rng.random(shape), 2.0)

    return (pixels - pixels.min()) / (pixels.max() - pixels.min())


def _by_kind(keypoints: list[Keypoint]) -> dict[KeypointKind, list[Keypoint]]:
    return {kind: [kp for kp in keypoints if kp.kind == kind] for kind in KeypointKind}


def test_saddle_found_at_crossing_strokes():
    # Arrange
    pixels = np.ones((61, 61))
    pixels[27:34, 5:56] = 0.0
    pixels[5:56, 27:34] = 0.0
    params = DetectorParams(sigma_d=1.5, sigma_i=3.0, nms_radius=2.0, stationarity=4.0, max_per_character=None)

    # Act
    result = saddle_points(GrayImage(pixels), params)

    # Assert
    assert _nearest(result, 30.0, 30.0) <= 6.0


def test_detectors_ignore_additive_offset():
    # Arrange
    pixels = _smooth_texture(3)
    params = DetectorParams(sigma_d=1.5, sigma_i=3.0, nms_radius=2.0)

    # Act
    result = detect_all(GrayImage(pixels + 0.25), params)

    # Assert
    expected = detect_all(GrayImage(pixels), params)
    assert [kp.kind for kp in expected] == [kp.kind for kp in result]
    np.testing.assert_allclose([(kp.x, kp.y) for kp in result], [(kp.x, kp.y) for kp in expected], atol=1e-6)


@pytest.mark.parametrize("contrast", [0.5, 3.0])
def test_contrast_scaling_keeps_response_order(contrast):
    # Arrange
    pixels = _smooth_texture(4)
    params = DetectorParams(
        sigma_d=1.5,
        sigma_i=3.0,
        nms_radius=2.0,
        thresholds={kind: 0.0 for kind in KeypointKind},
        max_per_character=None,
    )

    # Act
    result = _by_kind(detect_all(GrayImage(contrast * pixels), params))

    # Assert
    expected = _by_kind(detect_all(GrayImage(pixels), params))
    for kind in KeypointKind:
        strongest = sorted(expected[kind], key=lambda kp: -kp.response)[:10]
        scaled = sorted(result[kind], key=lambda kp: -kp.response)[: len(strongest)]
        np.testing.assert_allclose([(kp.x, kp.y) for kp in scaled], [(kp.x, kp.y) for kp in strongest], atol=1e-6)


def test_suppression_keeps_same_kind_keypoints_apart():
    # Arrange
    params = DetectorParams(sigma_d=1.5, sigma_i=3.0, nms_radius=4.0, max_per_character=None)

    # Act
    result = _by_kind(detect_all(GrayImage(_smooth_texture(5)), params))

    # Assert
    for keypoints in result.values():
        for i, first in enumerate(keypoints):
            for second in keypoints[i + 1 :]:
                assert math.hypot(first.x - second.x, first.y - second.y) > 4.0 - 1e-9


def test_keypoints_follow_image_translation():
    # Arrange
    texture = _smooth_texture(6, (160, 160))
    params = DetectorParams(sigma_d=1.5, sigma_i=3.0, nms_radius=2.0, max_per_character=None)
    dx, dy = 7, 4

    # Act
    original = detect_all(GrayImage(texture[:140, :140]), params)
    shifted = detect_all(GrayImage(texture[dy : dy + 140, dx : dx + 140]), params)

    # Assert
    interior = [kp for kp in original if 45.0 <= kp.x <= 95.0 and 45.0 <= kp.y <= 95.0]
    assert len(interior) > 0
    for kp in interior:
        partners = [other for other in shifted if other.kind == kp.kind]
        assert _nearest(partners, kp.x - dx, kp.y - dy) <= 0.5
