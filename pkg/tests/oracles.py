"""Independent brute-force reference implementations used by the tests.

Everything here is deliberately written as plain loops over numpy floats so
it shares no code path with the package.
"""

from __future__ import annotations

import itertools

import numpy as np


def conv_triple_loop(weight, bias, x, mask=None):
    """Naive temporal convolution: loops over output channel, position, tap."""
    weight = np.asarray(weight, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    h, d_in, d_out = weight.shape
    t = x.shape[1]
    pad = h // 2
    out = np.zeros((d_out, t))
    for m in range(d_out):
        for s in range(t):
            acc = bias[m]
            for i in range(h):
                src = s - pad + i
                if not 0 <= src < t:
                    continue
                col = x[:, src]
                if mask is not None:
                    col = col * mask[i, s]
                acc += float(np.dot(weight[i, :, m], col))
            out[m, s] = acc
    return out


def cosine_pair(u, v, eps=1e-8):
    nu = max(float(np.linalg.norm(u)), eps)
    nv = max(float(np.linalg.norm(v)), eps)
    return float(np.dot(u, v)) / (nu * nv)


def affinity_double_loop(e, h, eps=1e-8):
    """Per-entry cosine affinity between each frame and its h neighbors."""
    e = np.asarray(e, dtype=np.float64)
    t = e.shape[1]
    pad = h // 2
    out = np.zeros((h, t))
    for i in range(h):
        for s in range(t):
            src = s - pad + i
            if 0 <= src < t:
                out[i, s] = cosine_pair(e[:, s], e[:, src], eps)
    return out


def topk_mean_sorted(row, k):
    """Sort-based top-k mean with lowest-index tie preference."""
    order = sorted(range(len(row)), key=lambda i: (-row[i], i))[:k]
    return float(np.mean([row[i] for i in order])), sorted(order)


def segment_tiou(a, b):
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union if union > 0 else 0.0


def greedy_nms_subset_oracle(candidates, thr):
    """The kept set of greedy NMS, found by exhaustive subset search: the
    unique conflict-free subset where every dropped candidate conflicts with
    a kept one of higher priority. Priority: higher score, then earlier
    start, then earlier end."""
    order = sorted(range(len(candidates)),
                   key=lambda i: (-candidates[i][2], candidates[i][0],
                                  candidates[i][1]))
    rank = {ci: r for r, ci in enumerate(order)}
    matches = []
    for bits in itertools.product((False, True), repeat=len(candidates)):
        kept = [i for i in range(len(candidates)) if bits[i]]
        ok = True
        for a, b in itertools.combinations(kept, 2):
            if segment_tiou(candidates[a][:2], candidates[b][:2]) >= thr:
                ok = False
                break
        if not ok:
            continue
        for i in range(len(candidates)):
            if bits[i]:
                continue
            if not any(rank[j] < rank[i] and
                       segment_tiou(candidates[i][:2], candidates[j][:2]) >= thr
                       for j in kept):
                ok = False
                break
        if ok:
            matches.append(kept)
    assert len(matches) == 1, f"oracle found {len(matches)} consistent subsets"
    kept = sorted(matches[0], key=lambda i: rank[i])
    return [candidates[i] for i in kept]


def ap_exhaustive_oracle(preds, gts, thr):
    """AP oracle: enumerate every injective pred-to-GT assignment, keep the
    unique one consistent with greedy max-overlap matching in score order,
    then integrate the precision-recall staircase point by point."""
    n_gt = len(gts)
    if n_gt == 0:
        return 0.0
    order = sorted(range(len(preds)),
                   key=lambda i: (-preds[i][3], preds[i][0], preds[i][1],
                                  preds[i][2]))

    def overlap(pi, gi):
        if preds[pi][0] != gts[gi][0]:
            return 0.0
        return segment_tiou(preds[pi][1:3], (gts[gi][1], gts[gi][2]))

    consistent = []
    options = [list(range(n_gt)) + [None] for _ in order]
    for combo in itertools.product(*options):
        used = [g for g in combo if g is not None]
        if len(set(used)) != len(used):
            continue
        ok = True
        taken: set[int] = set()
        for slot, pi in enumerate(order):
            gi = combo[slot]
            eligible = [(overlap(pi, g), -g) for g in range(n_gt)
                        if g not in taken and overlap(pi, g) >= thr]
            if gi is None:
                if eligible:
                    ok = False
                    break
            else:
                if overlap(pi, gi) < thr or not eligible:
                    ok = False
                    break
                best = max(eligible)
                if (overlap(pi, gi), -gi) != best:
                    ok = False
                    break
                taken.add(gi)
        if ok:
            consistent.append(combo)
    assert len(consistent) == 1, f"oracle found {len(consistent)} assignments"
    flags = [g is not None for g in consistent[0]]
    ap = 0.0
    tp = 0
    prev_recall = 0.0
    for rank, hit in enumerate(flags, start=1):
        if hit:
            tp += 1
            recall = tp / n_gt
            ap += (recall - prev_recall) * (tp / rank)
            prev_recall = recall
    return ap


def central_difference(f, x, step=1e-6):
    """Gradient of scalar f at point x (1-D numpy) by central differences."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for j in range(x.size):
        xp = x.copy()
        xp[j] += step
        xm = x.copy()
        xm[j] -= step
        g[j] = (f(xp) - f(xm)) / (2 * step)
    return g
