import numpy as np
import pytest
from oracles import ap_brute_force

from freebies.core import BBox, DomainError
from freebies.evaluate import (COCO_THRESHOLDS, DetectionRecord, EvalConfig, GroundTruthRecord,
                               average_precision, coco_map, match_detections, mean_ap, per_class_delta,
                               rank_order)

GT = GroundTruthRecord("img", BBox(0, 0, 10, 10), 0)


def det(x0, score, cls=0, image="img"):
    return DetectionRecord(image, BBox(x0, 0, x0 + 10, 10), cls, score)


def test_single_match():
    # shift 2.5 gives IoU 7.5 / 12.5 = 0.6
    (m,) = match_detections([det(2.5, 0.7)], [GT])
    assert m.tp and m.gt_index == 0


def test_greedy_one_to_one():
    ms = match_detections([det(1, 0.6), det(0, 0.9)], [GT])
    assert [(m.detection.score, m.tp) for m in ms] == [(0.9, True), (0.6, False)]


def test_class_mismatch_is_fp():
    (m,) = match_detections([det(0, 0.9, cls=1)], [GT])
    assert not m.tp


def test_other_image_is_fp():
    (m,) = match_detections([det(0, 0.9, image="other")], [GT])
    assert not m.tp


def test_difficult_never_counts():
    hard = GroundTruthRecord("img", BBox(0, 0, 10, 10), 0, difficult=True)
    (m,) = match_detections([det(0, 0.9)], [hard])
    assert not m.tp
    # the difficult object adds no positive, so one hit on the easy one is perfect recall
    far_hard = GroundTruthRecord("img", BBox(50, 50, 60, 60), 0, difficult=True)
    assert mean_ap([det(0, 0.9)], [far_hard, GT]) == (1.0, {0: 1.0})
    assert mean_ap([], [hard]) == (0.0, {})


def test_tp_plus_fp_is_detections():
    rng = np.random.default_rng(0)
    gts = [GroundTruthRecord(i % 3, BBox(x, x, x + 8, x + 8), i % 2) for i, x in enumerate(rng.integers(0, 30, 12))]
    dets = [DetectionRecord(i % 3, BBox(x, x, x + 8, x + 8), i % 2, float(s))
            for i, (x, s) in enumerate(zip(rng.integers(0, 30, 20), rng.random(20)))]
    ms = match_detections(dets, gts)
    assert len(ms) == len(dets)
    assert len({m.gt_index for m in ms if m.tp}) == sum(m.tp for m in ms)


@pytest.mark.parametrize("mode", ["voc07_11point", "voc_all_points"])
def test_ap_fixtures(mode):
    assert average_precision([True, False], [0.9, 0.8], 1, mode) == 1.0
    assert average_precision([False, True], [0.9, 0.8], 1, mode) == 0.5
    assert average_precision([], [], 1, mode) == 0.0


def test_ap_matches_oracle():
    rng = np.random.default_rng(1)
    for _ in range(2000):
        n = int(rng.integers(0, 6))
        num_gt = int(rng.integers(1, 4))
        flags = [bool(f) for f in rng.random(n) < 0.5]
        while sum(flags) > num_gt:
            flags[flags.index(True)] = False
        scores = [float(s) for s in rng.integers(0, 4, n) / 4]
        order = rank_order(scores)
        ranked = [flags[i] for i in order]
        for mode in ("voc07_11point", "voc_all_points"):
            assert average_precision(flags, scores, num_gt, mode) == ap_brute_force(ranked, num_gt, mode)


def test_ap_validation():
    with pytest.raises(DomainError):
        average_precision([True], [0.5], 1, "bogus")
    with pytest.raises(DomainError):
        average_precision([True], [0.5, 0.4], 1)


def _random_scene(rng, n_img=4, n_cls=3):
    gts, dets = [], []
    for img in range(n_img):
        for _ in range(int(rng.integers(1, 4))):
            x, y = rng.uniform(0, 80, 2)
            box = BBox(x, y, x + rng.uniform(5, 20), y + rng.uniform(5, 20))
            c = int(rng.integers(0, n_cls))
            gts.append(GroundTruthRecord(img, box, c, difficult=bool(rng.random() < 0.1)))
            if rng.random() < 0.8:
                j = rng.normal(0, 2, 4)
                dets.append(DetectionRecord(img, BBox(box.xmin + j[0], box.ymin + j[1],
                                                      box.xmax + abs(j[2]) + 1, box.ymax + abs(j[3]) + 1),
                                            c, float(rng.random())))
        for _ in range(int(rng.integers(0, 3))):
            x, y = rng.uniform(0, 80, 2)
            dets.append(DetectionRecord(img, BBox(x, y, x + 10, y + 10), int(rng.integers(0, n_cls)),
                                        float(rng.random())))
    return dets, gts


def test_single_class_map_is_class_ap():
    dets = [det(0, 0.9), det(50, 0.5)]
    total, table = mean_ap(dets, [GT], EvalConfig(), num_classes=1)
    assert total == table[0] == 1.0


def test_perfect_detector():
    rng = np.random.default_rng(2)
    _, gts = _random_scene(rng)
    gts = [g for g in gts if not g.difficult]
    dets = [DetectionRecord(g.image_id, g.bbox, g.class_id, 1.0) for g in gts]
    for mode in ("voc07_11point", "voc_all_points"):
        assert mean_ap(dets, gts, EvalConfig(0.5, mode))[0] == 1.0


@pytest.mark.parametrize("seed", range(20))
def test_map_invariant_under_monotone_rescaling(seed):
    rng = np.random.default_rng(seed)
    dets, gts = _random_scene(rng)
    for f in (np.sqrt, lambda s: s ** 3, lambda s: 0.5 * s + 0.25):
        moved = [DetectionRecord(d.image_id, d.bbox, d.class_id, float(f(d.score))) for d in dets]
        for mode in ("voc07_11point", "voc_all_points"):
            cfg = EvalConfig(0.5, mode)
            assert mean_ap(moved, gts, cfg) == mean_ap(dets, gts, cfg)


def test_vocabulary_check():
    with pytest.raises(DomainError):
        mean_ap([det(0, 0.5, cls=7)], [GT], num_classes=3)


def test_coco_thresholds():
    assert COCO_THRESHOLDS == (0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95)
    # IoU 0.6 counts at 0.50..0.60 only
    total, per_t = coco_map([det(2.5, 0.9)], [GT])
    assert [per_t[t] for t in COCO_THRESHOLDS] == [1.0] * 3 + [0.0] * 7
    assert total == pytest.approx(0.3)


def test_delta():
    a = {0: 0.5, 1: 0.7, 2: 0.2}
    assert [d for _, d in per_class_delta(a, a)] == [0.0] * 3
    b = {c: v + 0.01 for c, v in a.items()}
    rows = per_class_delta(a, b)
    assert sorted(c for c, _ in rows) == [0, 1, 2]
    assert all(d == pytest.approx(0.01, abs=1e-12) for _, d in rows)
    rows = per_class_delta(a, {0: 0.9, 1: 0.7, 2: 0.1})
    assert rows == [(0, pytest.approx(0.4)), (1, 0.0), (2, pytest.approx(-0.1))]
    with pytest.raises(DomainError):
        per_class_delta(a, {0: 1.0})
