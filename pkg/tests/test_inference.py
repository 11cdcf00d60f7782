import numpy as np
import pytest
import torch

from bgtal.inference import (
    DetectedInstance,
    candidate_segments,
    localize,
    min_max_normalize,
    oic_score,
    temporal_nms,
    threshold_runs,
    tiou_frames,
)
from bgtal.network import CASNet
from oracles import greedy_nms_subset_oracle


class TestOicScore:
    def test_constant_row_scores_zero(self):
        row = np.full(20, 0.7)
        assert oic_score(row, 5, 10) == pytest.approx(0.0, abs=1e-12)

    def test_box_on_zero_background(self):
        row = np.zeros(20)
        row[8:12] = 1.0
        assert oic_score(row, 8, 12, inflation=0.25) == pytest.approx(1.0)

    def test_whole_sequence_has_no_outer(self):
        rng = np.random.default_rng(0)
        row = rng.uniform(size=16)
        assert oic_score(row, 0, 16) == pytest.approx(float(row.mean()))

    def test_flank_clipping(self):
        row = np.zeros(10)
        row[0:4] = 1.0
        # left flank is clipped away entirely; right flank frame 4 is 0
        assert oic_score(row, 0, 4, inflation=0.25) == pytest.approx(1.0)

    def test_rejects_bad_span(self):
        with pytest.raises(ValueError):
            oic_score(np.zeros(5), 3, 3)
        with pytest.raises(ValueError):
            oic_score(np.zeros(5), 0, 6)


class TestThresholding:
    def test_single_run(self):
        row = np.array([0, 0, 1, 1, 1, 0, 0], dtype=float)
        assert threshold_runs(row, 0.5) == [(2, 5)]

    def test_run_touching_end(self):
        row = np.array([0.9, 0, 0, 0.9, 0.9], dtype=float)
        assert threshold_runs(row, 0.5) == [(0, 1), (3, 5)]

    def test_all_below_gives_nothing(self):
        assert threshold_runs(np.zeros(6), 0.5) == []

    def test_strictly_above(self):
        row = np.array([0.5, 0.6], dtype=float)
        assert threshold_runs(row, 0.5) == [(1, 2)]

    def test_min_max_normalize(self):
        row = np.array([2.0, 4.0, 6.0])
        assert np.allclose(min_max_normalize(row), [0, 0.5, 1.0])
        assert np.array_equal(min_max_normalize(np.full(4, 3.3)), np.zeros(4))


class TestTemporalNms:
    def test_disjoint_all_kept(self):
        cands = [(0, 5, 0.9), (10, 15, 0.8), (20, 25, 0.7)]
        assert temporal_nms(cands, 0.5) == cands

    def test_identical_keeps_one(self):
        cands = [(3, 9, 0.5), (3, 9, 0.5), (3, 9, 0.5)]
        assert temporal_nms(cands, 0.5) == [(3, 9, 0.5)]

    def test_matches_subset_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            n = int(rng.integers(1, 6))
            cands = []
            for _ in range(n):
                s = int(rng.integers(0, 40))
                e = s + int(rng.integers(2, 15))
                cands.append((s, e, float(rng.uniform())))
            for thr in (0.3, 0.5, 0.7):
                assert temporal_nms(cands, thr) == \
                    greedy_nms_subset_oracle(cands, thr)

    def test_tie_prefers_earlier_start(self):
        cands = [(10, 20, 0.5), (0, 10, 0.5)]
        kept = temporal_nms(cands, 0.5)
        assert kept == [(0, 10, 0.5), (10, 20, 0.5)]


class TestCandidates:
    def test_worked_example(self):
        row = np.array([0, 0, 1, 1, 1, 0, 0], dtype=float)
        cands = candidate_segments(row, [0.5])
        assert [(s, e) for s, e, _ in cands] == [(2, 5)]

    def test_spans_pooled_across_thresholds(self):
        row = np.array([0.0, 0.4, 1.0, 1.0, 0.4, 0.0])
        cands = candidate_segments(row, [0.3, 0.6])
        assert {(s, e) for s, e, _ in cands} == {(1, 5), (2, 4)}

    def test_affine_rescaling_keeps_spans(self):
        rng = np.random.default_rng(2)
        for trial in range(20):
            row = rng.standard_normal(40)
            base = candidate_segments(row, [0.1, 0.3, 0.5])
            scaled = candidate_segments(3.5 * row + 11.0, [0.1, 0.3, 0.5])
            assert [(s, e) for s, e, _ in base] == [(s, e) for s, e, _ in scaled]


@pytest.fixture()
def net():
    return CASNet(6, 3, d_emb=4, h=3, hidden=(8, 8),
                  rng=np.random.default_rng(3))


class TestLocalize:
    def test_empty_when_no_class_passes(self, net):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((6, 32))
        dets = localize(net, x, duration_sec=16.0, k=4, tau_cls=1.1)
        assert dets == []

    def test_frames_map_to_seconds(self, net):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((6, 32))
        dets = localize(net, x, duration_sec=16.0, k=4, tau_cls=0.0)
        for d in dets:
            assert 0.0 <= d.t_start_sec < d.t_end_sec <= 16.0
            # spans sit on the half-second frame grid
            assert (d.t_start_sec * 2) == int(d.t_start_sec * 2)
            assert 1 <= d.class_id <= 3

    def test_nms_bound_holds(self, net):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((6, 64))
        dets = localize(net, x, duration_sec=32.0, k=8, tau_cls=0.0,
                        nms_tiou=0.4)
        by_class = {}
        for d in dets:
            by_class.setdefault(d.class_id, []).append(d)
        for group in by_class.values():
            for i, a in enumerate(group):
                for b in group[i + 1:]:
                    inter = max(0.0, min(a.t_end_sec, b.t_end_sec) -
                                max(a.t_start_sec, b.t_start_sec))
                    union = (a.t_end_sec - a.t_start_sec) + \
                            (b.t_end_sec - b.t_start_sec) - inter
                    assert inter / union < 0.4

    def test_every_span_was_above_some_threshold(self, net):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((6, 64))
        thresholds = (0.2, 0.4, 0.6)
        with torch.no_grad():
            res = net.forward(torch.from_numpy(x))
        s = res.s_supp.numpy()
        dets = localize(net, x, duration_sec=32.0, k=8, tau_cls=0.0,
                        seg_thresholds=thresholds)
        for d in dets:
            fs = int(d.t_start_sec * 2)
            fe = int(d.t_end_sec * 2)
            norm = min_max_normalize(s[d.class_id])
            assert any((norm[fs:fe] > th).all() for th in thresholds)

    def test_branch_selection(self, net):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((6, 32))
        supp = localize(net, x, 16.0, k=4, tau_cls=0.0, branch="suppressed")
        base = localize(net, x, 16.0, k=4, tau_cls=0.0, branch="base")
        assert supp != base  # different streams, different activations
        with pytest.raises(ValueError):
            localize(net, x, 16.0, k=4, branch="middle")


def test_detected_instance_validation():
    with pytest.raises(ValueError):
        DetectedInstance(5.0, 5.0, 1, 0.5)
    with pytest.raises(ValueError):
        DetectedInstance(1.0, 2.0, 0, 0.5)


def test_tiou_frames():
    assert tiou_frames((0, 10), (5, 15)) == pytest.approx(1 / 3)
    assert tiou_frames((0, 5), (5, 9)) == 0.0
