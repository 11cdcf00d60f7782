import numpy as np
import pytest

from bgtal.evaluation import (
    average_precision,
    map_at,
    predictions_by_class,
    tiou,
)
from oracles import ap_exhaustive_oracle

# Three hand-built fixtures: (preds per class, gts per class).
# Predictions are (video_id, start, end, score); gts are (video_id, start, end).
FIXTURE_PERFECT = (
    {1: [("a", 0.0, 10.0, 0.9), ("b", 5.0, 9.0, 0.8)]},
    {1: [("a", 0.0, 10.0), ("b", 5.0, 9.0)]},
)
FIXTURE_MIXED = (
    {
        1: [("a", 0.0, 4.0, 0.95),      # FP at 0.5 (tIoU 0.43 with (0,7))
            ("a", 0.5, 7.0, 0.90),      # TP
            ("a", 20.0, 30.0, 0.85),    # TP
            ("a", 21.0, 29.0, 0.10)],   # duplicate on a matched gt -> FP
        2: [("b", 2.0, 6.0, 0.70),      # TP
            ("b", 50.0, 60.0, 0.60)],   # FP, no gt there
    },
    {
        1: [("a", 0.0, 7.0), ("a", 20.0, 30.0)],
        2: [("b", 2.0, 6.0), ("b", 30.0, 40.0)],
    },
)
FIXTURE_UNPREDICTED = (
    {2: [("c", 1.0, 2.0, 0.5)]},
    {1: [("c", 4.0, 8.0)], 2: [("c", 1.0, 2.0)]},
)
FIXTURES = (FIXTURE_PERFECT, FIXTURE_MIXED, FIXTURE_UNPREDICTED)


class TestTiou:
    def test_identical(self):
        assert tiou((3.0, 9.0), (3.0, 9.0)) == 1.0

    def test_disjoint(self):
        assert tiou((0.0, 5.0), (5.0, 9.0)) == 0.0

    def test_worked_example(self):
        assert tiou((0.0, 10.0), (5.0, 15.0)) == 5.0 / 15.0
        assert tiou((0.0, 10.0), (5.0, 15.0)) == pytest.approx(1 / 3)

    def test_degenerate_rejected(self):
        with pytest.raises(ValueError):
            tiou((5.0, 5.0), (0.0, 1.0))


class TestAveragePrecision:
    def test_perfect_single(self):
        res = average_precision([("a", 0.0, 10.0, 0.9)], [("a", 0.0, 10.0)], 0.5)
        assert res.ap == 1.0

    def test_fp_then_tp(self):
        preds = [("a", 50.0, 60.0, 0.9), ("a", 0.0, 10.0, 0.8)]
        res = average_precision(preds, [("a", 0.0, 10.0)], 0.5)
        assert res.ap == 0.5

    def test_duplicate_becomes_fp(self):
        preds = [("a", 0.0, 10.0, 0.9), ("a", 0.0, 10.0, 0.8)]
        res = average_precision(preds, [("a", 0.0, 10.0)], 0.5)
        assert res.ap == 1.0  # the FP after the last TP adds no area

    def test_no_gt_no_preds_flagged(self):
        res = average_precision([], [], 0.5)
        assert res.ap == 0.0 and not res.defined

    def test_no_preds_with_gt(self):
        res = average_precision([], [("a", 0.0, 1.0)], 0.5)
        assert res.ap == 0.0 and res.defined

    def test_matching_respects_video_id(self):
        preds = [("b", 0.0, 10.0, 0.9)]
        res = average_precision(preds, [("a", 0.0, 10.0)], 0.5)
        assert res.ap == 0.0

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            gts, preds = [], []
            for v in ("a", "b"):
                for _ in range(3):
                    s = float(rng.uniform(0, 40))
                    gts.append((v, s, s + float(rng.uniform(2, 8))))
                for _ in range(4):
                    s = float(rng.uniform(0, 40))
                    preds.append((v, s, s + float(rng.uniform(2, 8)),
                                  float(rng.uniform())))
            aps = [average_precision(preds, gts, t).ap
                   for t in (0.1, 0.3, 0.5, 0.7, 0.9)]
            assert all(a >= b - 1e-12 for a, b in zip(aps, aps[1:]))

    def test_rank_invariance_under_monotone_rescale(self):
        rng = np.random.default_rng(1)
        preds = [("a", float(s), float(s + 4), float(sc))
                 for s, sc in zip(rng.uniform(0, 40, 8), rng.uniform(0.1, 1, 8))]
        gts = [("a", float(s), float(s + 4)) for s in rng.uniform(0, 40, 4)]
        base = average_precision(preds, gts, 0.4).ap
        squashed = [(v, s, e, np.tanh(3 * sc)) for v, s, e, sc in preds]
        assert average_precision(squashed, gts, 0.4).ap == base

    def test_matches_exhaustive_oracle_on_fixtures(self):
        for preds_by_cls, gts_by_cls in FIXTURES:
            for c in gts_by_cls:
                for thr in (0.3, 0.5, 0.7):
                    mine = average_precision(preds_by_cls.get(c, []),
                                             gts_by_cls[c], thr).ap
                    ref = ap_exhaustive_oracle(preds_by_cls.get(c, []),
                                               gts_by_cls[c], thr)
                    assert mine == ref

    def test_matches_oracle_on_random_cases(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            n_pred, n_gt = int(rng.integers(0, 5)), int(rng.integers(1, 4))
            preds = []
            for _ in range(n_pred):
                s = float(rng.uniform(0, 20))
                preds.append(("a", s, s + float(rng.uniform(1, 6)),
                              float(rng.uniform())))
            gts = []
            for _ in range(n_gt):
                s = float(rng.uniform(0, 20))
                gts.append(("a", s, s + float(rng.uniform(1, 6))))
            for thr in (0.3, 0.5):
                assert average_precision(preds, gts, thr).ap == \
                    ap_exhaustive_oracle(preds, gts, thr)


class TestMapAt:
    def test_perfect_everywhere(self):
        preds, gts = FIXTURE_PERFECT
        table = map_at(preds, gts, (0.3, 0.5, 0.7))
        assert all(v == 1.0 for v in table.map_at.values())
        assert table.avg_map == 1.0

    def test_empty_predictions(self):
        _, gts = FIXTURE_PERFECT
        table = map_at({}, gts, (0.5,))
        assert table.map_at[0.5] == 0.0

    def test_class_without_gt_excluded(self):
        preds = {1: [("a", 0.0, 10.0, 0.9)], 5: [("a", 0.0, 3.0, 0.9)]}
        gts = {1: [("a", 0.0, 10.0)], 5: []}
        table = map_at(preds, gts, (0.5,))
        assert table.class_ids == (1,)
        assert table.map_at[0.5] == 1.0

    def test_mean_is_classcount_weighted_union(self):
        # mAP over two disjoint class sets equals the weighted combination
        preds, gts = FIXTURE_MIXED
        full = map_at(preds, gts, (0.5,))
        part1 = map_at({1: preds[1]}, {1: gts[1]}, (0.5,))
        part2 = map_at({2: preds[2]}, {2: gts[2]}, (0.5,))
        assert full.map_at[0.5] == pytest.approx(
            (part1.map_at[0.5] + part2.map_at[0.5]) / 2, abs=1e-15)

    def test_fixture_values_match_oracle(self):
        for preds_by_cls, gts_by_cls in FIXTURES:
            table = map_at(preds_by_cls, gts_by_cls, (0.3, 0.5, 0.7))
            for thr in (0.3, 0.5, 0.7):
                refs = [ap_exhaustive_oracle(preds_by_cls.get(c, []),
                                             gts_by_cls[c], thr)
                        for c in table.class_ids]
                assert table.map_at[thr] == float(np.mean(refs))

    def test_csv_layout(self):
        preds, gts = FIXTURE_MIXED
        table = map_at(preds, gts, (0.3, 0.5))
        csv = table.to_csv(["jump", "throw"]).splitlines()
        assert csv[0] == "tiou,jump,throw,mean"
        assert len(csv) == 4
        assert csv[-1].startswith("avg,")


def test_predictions_by_class():
    preds = [
        {"video_id": "a", "t_start": 0.0, "t_end": 1.0, "class": 2, "score": 0.5},
        {"video_id": "a", "t_start": 2.0, "t_end": 3.0, "class": 1, "score": 0.25},
    ]
    grouped = predictions_by_class(preds)
    assert set(grouped) == {1, 2}
    assert grouped[2] == [("a", 0.0, 1.0, 0.5)]
