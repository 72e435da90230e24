import numpy as np
import pytest

from logokit.detection import (
    Detection,
    GroundTruthBox,
    average_precision,
    count_negative_detections,
    end_to_end_map,
    froc_curve,
    match_detections,
    recall,
)
from logokit.geometry import Box


def det(x0, y0, x1, y1, score, image_id="img", cls=None):
    return Detection(image_id, Box(x0, y0, x1, y1), score, class_label=cls)


def gt(x0, y0, x1, y1, image_id="img", cls=None):
    return GroundTruthBox(image_id, Box(x0, y0, x1, y1), class_label=cls)


class TestMatchDetections:
    def test_identical_box_is_tp(self):
        m = match_detections([det(0, 0, 10, 10, 0.9)], [gt(0, 0, 10, 10)])
        assert m.tp == [True]
        assert m.num_tp == 1 and m.num_fp == 0

    def test_iou_exactly_half_is_fp(self):
        # [0,0,2,1] vs [0,0,1,1]: intersection 1, union 2
        m = match_detections([det(0, 0, 2, 1, 0.9)], [gt(0, 0, 1, 1)], iou_threshold=0.5)
        assert m.tp == [False]

    def test_just_over_half_is_tp(self):
        m = match_detections([det(0, 0, 2.01, 1, 0.9)], [gt(0, 0, 1, 1)], iou_threshold=0.5)
        # iou = 1 / 2.01 < 0.5: still FP; use a genuinely closer box
        assert m.tp == [False]
        m2 = match_detections([det(0, 0, 1.1, 1, 0.9)], [gt(0, 0, 1, 1)], iou_threshold=0.5)
        assert m2.tp == [True]

    def test_higher_score_claims_the_gt(self):
        dets = [det(0, 0, 10, 10, 0.8), det(1, 1, 11, 11, 0.9)]
        m = match_detections(dets, [gt(1, 1, 11, 11)])
        assert m.tp == [False, True]

    def test_greedy_picks_highest_iou_gt(self):
        gts = [gt(0, 0, 10, 10), gt(2, 2, 12, 12)]
        m = match_detections([det(2, 2, 12, 12, 0.9)], gts)
        assert m.matched_gt[0] == 1
        assert m.gt_matched == [False, True]

    def test_each_gt_matched_once(self):
        dets = [det(0, 0, 10, 10, 0.9), det(0.5, 0, 10.5, 10, 0.8)]
        m = match_detections(dets, [gt(0, 0, 10, 10)])
        assert m.tp == [True, False]

    def test_cross_image_never_matches(self):
        m = match_detections([det(0, 0, 10, 10, 0.9, image_id="a")], [gt(0, 0, 10, 10, image_id="b")])
        assert m.tp == [False]

    def test_tp_plus_fp_is_detection_count(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            dets, gts = _random_scene(rng)
            m = match_detections(dets, gts)
            assert m.num_tp + m.num_fp == len(dets)

    def test_lower_threshold_never_loses_matches(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            dets, gts = _random_scene(rng)
            if not gts:
                continue
            strict = match_detections(dets, gts, iou_threshold=0.7)
            loose = match_detections(dets, gts, iou_threshold=0.3)
            assert loose.num_tp >= strict.num_tp

    def test_threshold_validated(self):
        with pytest.raises(ValueError):
            match_detections([], [], iou_threshold=0.0)


def _random_scene(rng, images=3, cls=None):
    dets, gts = [], []
    for img in range(images):
        for _ in range(int(rng.integers(0, 5))):
            w, h = rng.uniform(5, 30, 2)
            x0, y0 = rng.uniform(0, 60, 2)
            gts.append(gt(x0, y0, x0 + w, y0 + h, image_id=f"i{img}", cls=cls))
        for _ in range(int(rng.integers(0, 6))):
            w, h = rng.uniform(5, 30, 2)
            x0, y0 = rng.uniform(0, 60, 2)
            dets.append(
                det(x0, y0, x0 + w, y0 + h, float(rng.random()), image_id=f"i{img}", cls=cls)
            )
    return dets, gts


class TestRecall:
    def test_all_matched(self):
        m = match_detections([det(0, 0, 10, 10, 0.9)], [gt(0, 0, 10, 10)])
        assert recall(m) == 1.0

    def test_no_detections(self):
        m = match_detections([], [gt(0, 0, 10, 10)])
        assert recall(m) == 0.0

    def test_half(self):
        m = match_detections(
            [det(0, 0, 10, 10, 0.9)], [gt(0, 0, 10, 10), gt(50, 50, 60, 60)]
        )
        assert recall(m) == 0.5

    def test_zero_gt_rejected(self):
        m = match_detections([det(0, 0, 10, 10, 0.9)], [])
        with pytest.raises(ValueError):
            recall(m)


class TestAveragePrecision:
    def test_tp_fp_tp_is_five_sixths(self):
        flagged = [(0.9, True), (0.8, False), (0.7, True)]
        assert average_precision(flagged, total_gt=2) == pytest.approx(5 / 6)

    def test_perfect_ranking(self):
        flagged = [(0.9, True), (0.8, True)]
        assert average_precision(flagged, total_gt=2) == 1.0

    def test_no_tp(self):
        assert average_precision([(0.9, False)], total_gt=3) == 0.0

    def test_empty_detections(self):
        assert average_precision([], total_gt=2) == 0.0

    def test_zero_gt_rejected(self):
        with pytest.raises(ValueError):
            average_precision([(0.5, True)], total_gt=0)

    def test_score_order_not_input_order(self):
        shuffled = [(0.7, True), (0.9, True), (0.8, False)]
        assert average_precision(shuffled, total_gt=2) == pytest.approx(5 / 6)

    def test_monotone_score_transform_invariant(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            n = int(rng.integers(1, 15))
            scores = rng.random(n)
            flags = rng.integers(2, size=n).astype(bool)
            total = max(1, int(flags.sum()))
            base = average_precision(list(zip(scores, flags)), total)
            squashed = average_precision(list(zip(scores**3 + 1.0, flags)), total)
            assert base == pytest.approx(squashed)


class TestFrocCurve:
    def test_threshold_above_all_scores(self):
        points = froc_curve(
            [det(0, 0, 10, 10, 0.5)], [gt(0, 0, 10, 10)], thresholds=[0.9]
        )
        assert points[0].avg_false_positives_per_image == 0.0
        assert points[0].recall == 0.0

    def test_two_point_hand_curve(self):
        dets = [
            det(0, 0, 10, 10, 0.9, image_id="i0"),
            det(30, 30, 40, 40, 0.4, image_id="i0"),
        ]
        gts = [gt(0, 0, 10, 10, image_id="i0"), gt(0, 0, 10, 10, image_id="i1")]
        points = froc_curve(dets, gts, thresholds=[0.8, 0.3])
        assert points[0].recall == 0.5
        assert points[0].avg_false_positives_per_image == 0.0
        assert points[1].recall == 0.5
        assert points[1].avg_false_positives_per_image == 0.5

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            dets, gts = _random_scene(rng)
            if not gts:
                continue
            thresholds = sorted({d.score for d in dets}, reverse=True) or [0.5]
            points = froc_curve(dets, gts, thresholds)
            recalls = [p.recall for p in points]
            fps = [p.avg_false_positives_per_image for p in points]
            assert recalls == sorted(recalls)
            assert fps == sorted(fps)

    def test_empty_thresholds_rejected(self):
        with pytest.raises(ValueError):
            froc_curve([], [gt(0, 0, 1, 1)], thresholds=[])

    def test_no_gt_rejected(self):
        with pytest.raises(ValueError):
            froc_curve([det(0, 0, 1, 1, 0.5)], [], thresholds=[0.5])


class TestNegativeCounts:
    def test_counting(self):
        dets = [
            det(0, 0, 1, 1, 0.9, image_id="neg1"),
            det(0, 0, 1, 1, 0.2, image_id="neg1"),
            det(0, 0, 1, 1, 0.8, image_id="pos1"),
        ]
        assert count_negative_detections(dets, {"neg1"}, threshold=0.5) == 1
        assert count_negative_detections(dets, {"neg1"}, threshold=0.0) == 2
        assert count_negative_detections(dets, set(), threshold=0.0) == 0


class TestEndToEndMap:
    def test_single_class_perfect(self):
        dets = [det(0, 0, 10, 10, 0.9, cls="shoe")]
        gts = [gt(0, 0, 10, 10, cls="shoe")]
        per_class, mean_ap = end_to_end_map(dets, gts)
        assert per_class == {"shoe": 1.0}
        assert mean_ap == 1.0

    def test_wrong_labels_zero(self):
        dets = [det(0, 0, 10, 10, 0.9, cls="soda")]
        gts = [gt(0, 0, 10, 10, cls="shoe")]
        _, mean_ap = end_to_end_map(dets, gts)
        assert mean_ap == 0.0

    def test_single_class_equals_plain_ap(self):
        rng = np.random.default_rng(6)
        dets, gts = _random_scene(rng, cls="only")
        if not gts:
            gts = [gt(0, 0, 10, 10, cls="only")]
        per_class, mean_ap = end_to_end_map(dets, gts)
        m = match_detections(dets, gts)
        flagged = [(d.score, hit) for d, hit in zip(dets, m.tp)]
        assert per_class["only"] == pytest.approx(average_precision(flagged, len(gts)))
        assert mean_ap == pytest.approx(per_class["only"])

    def test_two_class_hand_composition(self):
        dets = [
            det(0, 0, 10, 10, 0.9, cls="a"),
            det(50, 50, 60, 60, 0.8, cls="b"),
            det(70, 70, 80, 80, 0.7, cls="b"),
        ]
        gts = [gt(0, 0, 10, 10, cls="a"), gt(50, 50, 60, 60, cls="b")]
        per_class, mean_ap = end_to_end_map(dets, gts)
        assert per_class["a"] == 1.0
        assert per_class["b"] == 1.0  # TP first, then FP: AP unaffected
        assert mean_ap == 1.0

    def test_mean_is_unweighted(self):
        dets = [det(0, 0, 10, 10, 0.9, cls="a")]
        gts = [
            gt(0, 0, 10, 10, cls="a"),
            gt(30, 30, 40, 40, cls="b"),
            gt(50, 50, 60, 60, cls="b"),
            gt(70, 70, 80, 80, cls="b"),
        ]
        per_class, mean_ap = end_to_end_map(dets, gts)
        assert per_class == {"a": 1.0, "b": 0.0}
        assert mean_ap == 0.5

    def test_score_threshold_filters(self):
        dets = [
            det(0, 0, 10, 10, 0.9, cls="a"),
            det(0, 0, 10, 10, 0.1, cls="b"),
        ]
        gts = [gt(0, 0, 10, 10, cls="a"), gt(0, 0, 10, 10, image_id="other", cls="b")]
        _, with_all = end_to_end_map(dets, gts)
        _, filtered = end_to_end_map(dets, gts, score_threshold=0.5)
        assert with_all == filtered == 0.5  # the b det was wrong-image anyway

    def test_missing_class_labels_rejected(self):
        with pytest.raises(ValueError):
            end_to_end_map([det(0, 0, 1, 1, 0.5)], [gt(0, 0, 1, 1, cls="a")])
        with pytest.raises(ValueError):
            end_to_end_map([det(0, 0, 1, 1, 0.5, cls="a")], [gt(0, 0, 1, 1)])

    def test_no_gt_rejected(self):
        with pytest.raises(ValueError):
            end_to_end_map([det(0, 0, 1, 1, 0.5, cls="a")], [])


class TestDetectionTypes:
    def test_score_must_be_finite(self):
        with pytest.raises(ValueError):
            Detection("i", Box(0, 0, 1, 1), float("nan"))
