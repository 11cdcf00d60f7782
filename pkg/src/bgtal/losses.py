"""Training objectives: video/frame classification, score separation,
affinity with online hard example mining, and their weighted composition."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .network import pairwise_cosine, topk_aggregate, video_scores


def video_cls_loss(s_base: torch.Tensor, s_supp: torch.Tensor | None,
                   labels, k: int) -> torch.Tensor:
    """Cross-entropy between the softmax of the top-k aggregated class scores
    and the video label distribution, summed over both streams. The base
    stream's target includes the background bit; the suppressed stream's does
    not. Multi-label targets are normalized to sum to one."""
    total = s_base.new_zeros(())
    for s, bg_bit in ((s_base, 1.0), (s_supp, 0.0)):
        if s is None:
            continue
        agg = video_scores(s, k)
        target = np.asarray(labels, dtype=np.float64).copy()
        target[0] = bg_bit
        target /= target.sum()
        total = total - (torch.from_numpy(target) * torch.log_softmax(agg, 0)).sum()
    return total


def frame_cls_loss(s_base: torch.Tensor, clicks) -> torch.Tensor:
    """Mean negative log-probability of the background class at annotated
    background frames (softmax over the C+1 classes per frame). Zero when no
    frame is annotated."""
    idx = np.flatnonzero(np.asarray(clicks) == 1)
    if idx.size == 0:
        return s_base.new_zeros(())
    cols = s_base[:, torch.from_numpy(idx)]
    return -torch.log_softmax(cols, 0)[0].mean()


def score_separation_loss(s_base: torch.Tensor, labels, clicks, k: int,
                          ) -> tuple[torch.Tensor, dict[int, float], dict[int, float]]:
    """Per labeled class, push the mean top-k (action) score away from the
    mean clicked-background score through a two-way softmax. Uses raw
    pre-softmax scores. Returns (loss, p_act, p_bg) with per-class raw means
    as diagnostics; zero loss when there are no clicks."""
    bg_idx = np.flatnonzero(np.asarray(clicks) == 1)
    classes = np.flatnonzero(np.asarray(labels)[1:]) + 1
    p_act: dict[int, float] = {}
    p_bg: dict[int, float] = {}
    if bg_idx.size == 0 or classes.size == 0:
        return s_base.new_zeros(()), p_act, p_bg
    bg_t = torch.from_numpy(bg_idx)
    terms = []
    for c in classes:
        pa, _ = topk_aggregate(s_base[int(c)], k)
        pb = s_base[int(c), bg_t].mean()
        # -log p_hat_act - log(1 - p_hat_bg) collapses to -2 log p_hat_act
        # = 2 softplus(p_bg - p_act) since the two-way softmax sums to one;
        # this form depends only on the difference, so it is shift-invariant.
        terms.append(2.0 * F.softplus(pb - pa))
        p_act[int(c)] = float(pa.detach())
        p_bg[int(c)] = float(pb.detach())
    return torch.stack(terms).mean(), p_act, p_bg


def affinity_loss(embeddings: torch.Tensor, pseudo, tau_same: float,
                  tau_diff: float) -> torch.Tensor:
    """Hinge losses on cosine similarities of frame embeddings, each term
    driven by its single hardest pair: the least similar background pair and
    the least similar pseudo-action pair must exceed tau_same, the most
    similar background/action pair must stay below tau_diff. Terms with an
    empty or singleton index set contribute zero."""
    pseudo = np.asarray(pseudo)
    bg = np.flatnonzero(pseudo == 1)
    act = np.flatnonzero(pseudo == 0)
    zero = embeddings.new_zeros(())
    l_bg = l_act = l_diff = zero

    def hardest_same(idx: np.ndarray) -> torch.Tensor:
        cols = embeddings[:, torch.from_numpy(idx)]
        sims = pairwise_cosine(cols, cols)
        off_diag = ~torch.eye(len(idx), dtype=torch.bool)
        return torch.relu(tau_same - sims[off_diag].min())

    if bg.size >= 2:
        l_bg = hardest_same(bg)
    if act.size >= 2:
        l_act = hardest_same(act)
    if bg.size >= 1 and act.size >= 1:
        sims = pairwise_cosine(embeddings[:, torch.from_numpy(bg)],
                               embeddings[:, torch.from_numpy(act)])
        l_diff = torch.relu(sims.max() - tau_diff)
    return l_bg + l_act + l_diff


def weight_supervision_loss(attn_logits: torch.Tensor, clicks) -> torch.Tensor:
    """Optional variant: binary cross-entropy pushing the attention weight
    toward zero on clicked background frames."""
    idx = np.flatnonzero(np.asarray(clicks) == 1)
    if idx.size == 0:
        return attn_logits.new_zeros(())
    # -log(1 - sigmoid(z)) == softplus(z)
    return F.softplus(attn_logits[torch.from_numpy(idx)]).mean()


@dataclass
class LossReport:
    """Per-video loss components (floats, for logging). ``total`` carries the
    trade-off coefficients: l_cls + l_frame + lambda*l_sep + beta*l_aff, plus
    the optional weight-supervision term when enabled."""

    l_cls: float
    l_frame: float
    l_sep: float
    l_aff: float
    total: float
    l_ws: float = 0.0
    p_act: dict[int, float] = field(default_factory=dict)
    p_bg: dict[int, float] = field(default_factory=dict)


def compose_total(l_cls: torch.Tensor, l_frame: torch.Tensor,
                  l_sep: torch.Tensor, l_aff: torch.Tensor,
                  lambda_sep: float, beta_aff: float,
                  l_ws: torch.Tensor | None = None) -> torch.Tensor:
    if lambda_sep < 0 or beta_aff < 0:
        raise ValueError("trade-off coefficients must be non-negative")
    total = l_cls + l_frame + lambda_sep * l_sep + beta_aff * l_aff
    if l_ws is not None:
        total = total + l_ws
    return total
