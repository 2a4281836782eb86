import logging

import cv2
import numpy as np
import pytest

from pidtwin.linedetect import (
    BinaryImage,
    HoughParams,
    binarize,
    detect_lines,
    extend_segments,
    hough_segments,
    mask_symbols,
    merge_segments,
    otsu_threshold,
    segments_from_json,
    segments_to_json,
)
from pidtwin.plancore import BoundingBox, Point, plan_from_array
from tests.helpers import blank_plan, seg


def draw(lines, size=400):
    canvas = np.full((size, size), 255, np.uint8)
    for (x1, y1), (x2, y2) in lines:
        cv2.line(canvas, (x1, y1), (x2, y2), 0, 1, cv2.LINE_8)
    return plan_from_array(canvas, "lines")


def endpoints_close(s, a, b, tol):
    fwd = s.p1.distance(Point(*a)) <= tol and s.p2.distance(Point(*b)) <= tol
    rev = s.p1.distance(Point(*b)) <= tol and s.p2.distance(Point(*a)) <= tol
    return fwd or rev


def test_segment_geometry():
    s = seg("L", 0, 0, 10, 10)
    assert s.length == pytest.approx(2 ** 0.5 * 10)
    assert s.angle_deg == pytest.approx(45.0)
    assert seg("L", 10, 0, 0, 0).angle_deg == 0.0
    assert s.point_at(s.length).distance(Point(10, 10)) < 1e-9
    with pytest.raises(ValueError):
        seg("L", 1, 1, 1, 1)


def test_otsu_two_level_splits_halfway():
    pixels = np.full((10, 10), 220, np.uint8)
    pixels[:, :3] = 40
    assert otsu_threshold(pixels) == 129


def test_uniform_plan_is_blank(caplog):
    with caplog.at_level(logging.WARNING, logger="pidtwin.linedetect"):
        image = binarize(blank_plan())
    assert image.threshold is None and image.foreground == 0
    assert "uniform histogram" in caplog.text
    assert hough_segments(image) == []


def test_mask_symbols_clears_inflated_box_inclusive():
    bits = np.ones((30, 30), bool)
    masked = mask_symbols(BinaryImage(30, 30, bits, 128), [BoundingBox(10, 10, 20, 20)], inflate=2)
    assert not masked.bits[8:23, 8:23].any()
    assert masked.bits[7, 8] and masked.bits[23, 23]
    assert bits.all()  # input untouched


def test_hough_single_line():
    segs = hough_segments(binarize(draw([((20, 50), (220, 50))])))
    merged = merge_segments(segs)
    assert len(merged) == 1
    assert merged[0].id == "Line-1"
    assert endpoints_close(merged[0], (20, 50), (220, 50), 1.0)


def test_hough_params_validation():
    with pytest.raises(ValueError):
        hough_segments(binarize(draw([((20, 50), (220, 50))])), HoughParams(votes=0))
    assert HoughParams.from_config({"hough": {"votes": 40}}) == HoughParams(votes=40)


def test_merge_collinear_fragments():
    merged = merge_segments([seg("a", 0, 0, 40, 0), seg("b", 45, 0.5, 90, 0.5), seg("c", 95, 0, 130, 0)])
    assert len(merged) == 1
    assert merged[0].p1.x == pytest.approx(0, abs=0.05)
    assert merged[0].p2.x == pytest.approx(130, abs=0.05)
    assert abs(merged[0].p1.y) < 0.5


@pytest.mark.parametrize("other", [
    seg("b", 60, 0, 100, 0),     # gap 20
    seg("b", 45, 5, 90, 5),      # offset 5
    seg("b", 45, 0, 90, 8),      # ~10 degrees
])
def test_merge_keeps_distinct_segments(other):
    assert len(merge_segments([seg("a", 0, 0, 40, 0), other])) == 2


def test_merge_is_stable_and_numbered():
    segs = [seg("x", 0, 100, 50, 100), seg("y", 0, 0, 0, 80), seg("z", 55, 100, 120, 100)]
    merged = merge_segments(segs)
    assert [s.id for s in merged] == ["Line-1", "Line-2"]
    assert merge_segments(list(reversed(segs))) == merged


def test_sample_lines(sample, cfg):
    segs = detect_lines(sample.image, [s.bbox for s in sample.truth_symbols], cfg)
    assert len(segs) == 3
    expected = [((100, 75), (100, 245)), ((100, 275), (100, 345)), ((100, 160), (245, 160))]
    for a, b in expected:
        assert sum(endpoints_close(s, a, b, 2.0) for s in segs) == 1, (a, b)
    assert segments_from_json(segments_to_json(segs)) == segs


def _random_lines(rng, k, size=400, margin=20):
    """k lines at 0/45/90/135 degrees, parallel lines of one family at least 5 px apart."""
    used: dict[str, list[int]] = {"h": [], "v": [], "d": [], "a": []}
    lines = []
    while len(lines) < k:
        kind = str(rng.choice(["h", "v", "d", "a"]))
        length = int(rng.integers(80, 161))
        if kind in ("h", "v"):
            fixed = int(rng.integers(margin, size - margin))
            start = int(rng.integers(margin, size - margin - length))
            offset = fixed
            a, b = ((start, fixed), (start + length, fixed)) if kind == "h" else ((fixed, start), (fixed, start + length))
        else:
            run = int(length / 2 ** 0.5)
            x0 = int(rng.integers(margin, size - margin - run))
            y0 = int(rng.integers(margin, size - margin - run))
            if kind == "d":
                a, b, offset = (x0, y0), (x0 + run, y0 + run), y0 - x0
            else:
                a, b, offset = (x0 + run, y0), (x0, y0 + run), x0 + run + y0
        # perpendicular spacing: offsets of diagonal families are scaled by sqrt(2)
        gap = 6 if kind in ("h", "v") else 9
        if any(abs(offset - o) < gap for o in used[kind]):
            continue
        used[kind].append(offset)
        lines.append((a, b))
    return lines


def test_hough_recovers_random_line_sets(cfg):
    for seed in range(100):
        rng = np.random.default_rng(seed)
        lines = _random_lines(rng, int(rng.integers(1, 11)))
        segs = detect_lines(draw(lines), [], cfg)
        assert len(segs) == len(lines), f"seed {seed}: {len(segs)} segments for {len(lines)} lines"
        for a, b in lines:
            assert any(endpoints_close(s, a, b, 3.0) for s in segs), f"seed {seed}: line {a}-{b} not recovered"


def test_extend_follows_the_stroke_to_its_ends():
    bits = np.zeros((100, 300), bool)
    bits[50, 20:221] = True
    (s,) = extend_segments(BinaryImage(300, 100, bits, 128), [seg("Line-1", 60, 50, 150, 50)])
    assert (s.id, s.p1, s.p2) == ("Line-1", Point(20, 50), Point(220, 50))


def test_extend_bridges_single_pixel_breaks_only():
    bits = np.zeros((60, 200), bool)
    bits[30, 20:100] = True
    bits[30, 101:130] = True  # 1 px break at x=100
    bits[30, 133:180] = True  # 3 px break
    (s,) = extend_segments(BinaryImage(200, 60, bits, 128), [seg("L", 40, 30, 90, 30)])
    assert s.p1 == Point(20, 30) and s.p2 == Point(129, 30)
    with pytest.raises(ValueError):
        extend_segments(BinaryImage(200, 60, bits, 128), [], max_gap=-1)


def test_extend_stops_on_the_stroke_it_meets():
    bits = np.zeros((100, 100), bool)
    bits[10:90, 50] = True
    bits[40, 51:90] = True
    bits[43, 20:49] = True  # parallel stroke beyond the tee
    (s,) = extend_segments(BinaryImage(100, 100, bits, 128), [seg("L", 60, 40, 80, 40)])
    assert s.p1 == Point(50, 40) and s.p2 == Point(89, 40)


def test_extend_restores_sample_stroke_ends(sample, cfg):
    image = mask_symbols(binarize(sample.image), [s.bbox for s in sample.truth_symbols],
                         cfg["binarize"]["mask_inflate"])
    short = [seg("Line-1", 100, 80, 100, 240), seg("Line-2", 100, 278, 100, 334), seg("Line-3", 101, 160, 245, 160)]
    assert [(s.p1.as_list(), s.p2.as_list()) for s in extend_segments(image, short)] == [
        ([100, 75], [100, 245]), ([100, 275], [100, 345]), ([100, 160], [245, 160])]


def test_otsu_matches_opencv_partition():
    rng = np.random.default_rng(3)
    pixels = np.clip(np.where(rng.random((80, 80)) < 0.2, rng.normal(40, 12, (80, 80)),
                              rng.normal(210, 12, (80, 80))), 0, 255).astype(np.uint8)
    level, _ = cv2.threshold(pixels, 0, 255, cv2.THRESH_BINARY | cv2.THRESH_OTSU)
    assert np.array_equal(pixels <= otsu_threshold(pixels), pixels <= level)


def test_binarize_partition_survives_intensity_shift():
    rng = np.random.default_rng(11)
    ink = rng.random((120, 160)) < 0.15
    pixels = np.where(ink, rng.integers(20, 60, ink.shape), rng.integers(180, 215, ink.shape)).astype(np.int16)
    base = binarize(plan_from_array(pixels.astype(np.uint8), "p"))
    assert np.array_equal(base.bits, ink)
    for shift in (-20, -7, 5, 18, 40):
        shifted = binarize(plan_from_array((pixels + shift).astype(np.uint8), "p"))
        assert np.array_equal(shifted.bits, base.bits), shift
        assert shifted.threshold == base.threshold + shift


def test_merge_ignores_input_order():
    rng = np.random.default_rng(5)
    segs = [seg(f"s{i}", x, y, x + 40, y) for i, (x, y) in enumerate([(0, 10), (45, 10.5), (90, 10), (0, 60),
                                                                      (60, 60), (200, 0)])]
    segs += [seg("d1", 10, 100, 50, 140), seg("d2", 54, 144, 90, 180), seg("v", 150, 20, 150.5, 120)]
    expected = merge_segments(segs)
    assert merge_segments(expected) == expected
    for _ in range(50):
        order = rng.permutation(len(segs))
        assert merge_segments([segs[i] for i in order]) == expected
