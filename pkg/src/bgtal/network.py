"""Temporal CAS network: frame embeddings, local affinity masks, and
affinity-modulated temporal convolutions for a base and an
attention-suppressed stream.

Everything runs in float64 on CPU. The only convolution primitive is
``modulated_temporal_conv``; the unmasked path and the mask==1 path are the
same code, so they agree bit-for-bit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .data import atomic_write_bytes

EPS_NORM = 1e-8

CHECKPOINT_MAGIC = b"CASN"
CHECKPOINT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sIIIIIII")


def modulated_temporal_conv(weight: torch.Tensor, bias: torch.Tensor,
                            x: torch.Tensor,
                            mask: torch.Tensor | None = None) -> torch.Tensor:
    """Zero-padded 1-D temporal convolution with kernel ``weight`` of shape
    (h, d_in, d_out) applied to ``x`` of shape (d_in, t).

    When ``mask`` (shape (h, t)) is given, the i-th neighboring feature column
    of position t is scaled by mask[i, t] before the kernel is applied, so the
    receptive field is re-weighted per position.
    """
    h, d_in, d_out = weight.shape
    if x.ndim != 2 or x.shape[0] != d_in:
        raise ValueError(f"input shape {tuple(x.shape)} incompatible with d_in={d_in}")
    t = x.shape[1]
    pad = h // 2
    xp = F.pad(x, (pad, pad))
    patches = xp.unfold(1, t, 1)  # (d_in, h, t); patches[d, i, s] = x[d, s + i - pad]
    if mask is not None:
        if mask.shape != (h, t):
            raise ValueError(f"mask shape {tuple(mask.shape)} != ({h}, {t})")
        patches = patches * mask.unsqueeze(0)
    w2 = weight.permute(1, 0, 2).reshape(d_in * h, d_out)
    # contiguous() keeps the masked and unmasked paths on the same matmul
    # kernel, so a mask of ones reproduces the plain convolution bit-for-bit
    out = w2.T @ patches.reshape(d_in * h, t).contiguous()
    return out + bias[:, None]


def cosine_affinity(u, v, eps: float = EPS_NORM) -> torch.Tensor:
    """Cosine similarity with the norms clamped below at eps, so zero vectors
    map to affinity 0 instead of dividing by zero."""
    u = torch.as_tensor(u, dtype=torch.float64)
    v = torch.as_tensor(v, dtype=torch.float64)
    nu = u.norm().clamp_min(eps)
    nv = v.norm().clamp_min(eps)
    return (u @ v) / (nu * nv)


def pairwise_cosine(a: torch.Tensor, b: torch.Tensor,
                    eps: float = EPS_NORM) -> torch.Tensor:
    """Cosine similarity between every column of ``a`` and every column of
    ``b``; returns (a_cols, b_cols)."""
    na = a.norm(dim=0).clamp_min(eps)
    nb = b.norm(dim=0).clamp_min(eps)
    return (a.T @ b) / (na[:, None] * nb[None, :])


def local_affinity_matrix(e: torch.Tensor, h: int) -> torch.Tensor:
    """Per-position cosine similarities between each frame embedding and its h
    temporal neighbors. Entry [i, t] relates frame t to frame t - h//2 + i;
    out-of-range neighbors get 0."""
    if h % 2 == 0 or h < 1:
        raise ValueError("h must be odd and positive")
    d, t = e.shape
    if h > t:
        raise ValueError(f"h={h} exceeds sequence length {t}")
    pad = h // 2
    norms = e.norm(dim=0).clamp_min(EPS_NORM)
    rows = []
    for i in range(h):
        off = i - pad
        lo = max(0, -off)
        hi = min(t, t - off)
        dots = (e[:, lo:hi] * e[:, lo + off:hi + off]).sum(dim=0)
        vals = dots / (norms[lo:hi] * norms[lo + off:hi + off])
        rows.append(F.pad(vals, (lo, t - hi)))
    return torch.stack(rows, dim=0)


def topk_aggregate(row: torch.Tensor, k: int) -> tuple[torch.Tensor, np.ndarray]:
    """Mean of the k largest entries of a 1-D score row, plus the selected
    index set (ties broken toward lower indices). The gradient flows only to
    the selected entries."""
    t = row.shape[0]
    if not 1 <= k <= t:
        raise ValueError(f"k={k} outside [1, {t}]")
    vals = row.detach().cpu().numpy()
    idx = np.sort(np.argsort(-vals, kind="stable")[:k])
    return row[torch.from_numpy(idx)].mean(), idx


def video_scores(s: torch.Tensor, k: int) -> torch.Tensor:
    """Top-k aggregated score per class row; shape (C+1,)."""
    return torch.stack([topk_aggregate(s[c], k)[0] for c in range(s.shape[0])])


@dataclass
class FrameLabelState:
    """Runtime frame labels: 1 = annotated background, 0 = pseudo action
    (top-k selected), -1 = unknown. Annotation always wins over selection."""

    pseudo: np.ndarray              # (t,) int8
    topk_idx: dict[int, np.ndarray]  # class id -> selected frame indices


def select_pseudo_action_frames(s_base: torch.Tensor, labels: np.ndarray,
                                k: int, clicks: np.ndarray) -> FrameLabelState:
    """Mark the top-k scoring frames of every labeled class as confident
    pseudo-action frames, except where a background click is annotated."""
    b_hat = np.asarray(clicks, dtype=np.int8).copy()
    topk: dict[int, np.ndarray] = {}
    for c in np.flatnonzero(np.asarray(labels)[1:]) + 1:
        _, idx = topk_aggregate(s_base[int(c)], k)
        topk[int(c)] = idx
        free = idx[b_hat[idx] != 1]
        b_hat[free] = 0
    return FrameLabelState(pseudo=b_hat, topk_idx=topk)


def topk_hit_ratio(s, gt_segments, k: int, duration_sec: float) -> float:
    """Diagnostic: fraction of per-class top-k frames whose centers fall
    inside that class's ground-truth segments, pooled over labeled classes."""
    s = np.asarray(s, dtype=np.float64)
    t = s.shape[1]
    hits = 0
    total = 0
    for c in sorted({g.class_id for g in gt_segments}):
        idx = np.sort(np.argsort(-s[c], kind="stable")[:k])
        centers = (idx + 0.5) * duration_sec / t
        spans = [(g.start_sec, g.end_sec) for g in gt_segments if g.class_id == c]
        hits += sum(1 for x in centers if any(a <= x < b for a, b in spans))
        total += len(idx)
    return hits / total if total else 0.0


@dataclass
class ForwardResult:
    s_base: torch.Tensor               # (C+1, t)
    s_supp: torch.Tensor | None        # (C+1, t) attention-suppressed stream
    embeddings: torch.Tensor           # (d_emb, t), unit columns
    affinity: torch.Tensor | None      # (h, t) local affinity mask
    attention: torch.Tensor            # (t,) in (0, 1)
    attention_logits: torch.Tensor     # (t,) pre-sigmoid


class CASNet(torch.nn.Module):
    """Three temporal conv layers (ReLU between) classify each frame into
    C + 1 classes (row 0 = background). A one-layer attention head gates the
    input for a second, suppressed pass through the shared stack, and a
    one-layer embedding head feeds the local affinity mask that modulates
    every conv in both passes."""

    def __init__(self, d_in: int, n_classes: int, d_emb: int = 32, h: int = 3,
                 hidden: tuple[int, int] = (512, 512),
                 rng: np.random.Generator | None = None):
        super().__init__()
        if h % 2 == 0 or h < 1:
            raise ValueError("kernel size h must be odd")
        if d_emb < 1:
            raise ValueError("d_emb must be positive")
        hidden = tuple(int(w) for w in hidden)
        if len(hidden) != 2:
            raise ValueError("exactly two hidden widths expected")
        self.d_in = d_in
        self.n_classes = n_classes
        self.d_emb = d_emb
        self.h = h
        self.hidden = hidden
        if rng is None:
            rng = np.random.default_rng(0)

        def conv_param(fan_in, fan_out):
            bound = 1.0 / np.sqrt(h * fan_in)
            w = rng.uniform(-bound, bound, size=(h, fan_in, fan_out))
            b = rng.uniform(-bound, bound, size=fan_out)
            return (torch.nn.Parameter(torch.from_numpy(w)),
                    torch.nn.Parameter(torch.from_numpy(b)))

        self.cls1_w, self.cls1_b = conv_param(d_in, hidden[0])
        self.cls2_w, self.cls2_b = conv_param(hidden[0], hidden[1])
        self.cls3_w, self.cls3_b = conv_param(hidden[1], n_classes + 1)
        self.attn_w, self.attn_b = conv_param(d_in, 1)
        self.emb_w, self.emb_b = conv_param(d_in, d_emb)

    def param_tensors(self) -> list[tuple[str, torch.nn.Parameter]]:
        """Parameters in their declared (checkpoint) order."""
        return [
            ("cls1_w", self.cls1_w), ("cls1_b", self.cls1_b),
            ("cls2_w", self.cls2_w), ("cls2_b", self.cls2_b),
            ("cls3_w", self.cls3_w), ("cls3_b", self.cls3_b),
            ("attn_w", self.attn_w), ("attn_b", self.attn_b),
            ("emb_w", self.emb_w), ("emb_b", self.emb_b),
        ]

    def embed_frames(self, x: torch.Tensor) -> torch.Tensor:
        """Per-frame embeddings, L2-normalized columns. An eps in the
        denominator keeps zero pre-normalization vectors finite."""
        z = modulated_temporal_conv(self.emb_w, self.emb_b, x)
        return z / (z.norm(dim=0, keepdim=True) + EPS_NORM)

    def _stack(self, x: torch.Tensor, mask: torch.Tensor | None) -> torch.Tensor:
        f = modulated_temporal_conv(self.cls1_w, self.cls1_b, x, mask)
        f = torch.relu(f)
        f = modulated_temporal_conv(self.cls2_w, self.cls2_b, f, mask)
        f = torch.relu(f)
        return modulated_temporal_conv(self.cls3_w, self.cls3_b, f, mask)

    def forward(self, x: torch.Tensor, use_affinity: bool = True,
                compute_suppressed: bool = True,
                mask_override: torch.Tensor | None = None,
                attention_override: torch.Tensor | None = None) -> ForwardResult:
        x = torch.as_tensor(x, dtype=torch.float64)
        embeddings = self.embed_frames(x)
        if mask_override is not None:
            mask = mask_override
        elif use_affinity:
            mask = local_affinity_matrix(embeddings, self.h)
        else:
            mask = None
        s_base = self._stack(x, mask)
        attn_logits = modulated_temporal_conv(self.attn_w, self.attn_b, x)[0]
        attention = (torch.sigmoid(attn_logits) if attention_override is None
                     else attention_override)
        s_supp = None
        if compute_suppressed:
            s_supp = self._stack(x * attention.unsqueeze(0), mask)
        return ForwardResult(s_base=s_base, s_supp=s_supp, embeddings=embeddings,
                             affinity=mask, attention=attention,
                             attention_logits=attn_logits)


def save_checkpoint(path: str | Path, model: CASNet, t_fixed: int) -> None:
    """Single binary file: header (version, C, T, d_in, d_emb, h, layer
    widths) followed by the parameter tensors in declared order as
    little-endian float64."""
    head = _CKPT_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
                             model.n_classes, t_fixed, model.d_in, model.d_emb,
                             model.h, len(model.hidden))
    head += struct.pack(f"<{len(model.hidden)}I", *model.hidden)
    blobs = [head]
    for _, p in model.param_tensors():
        blobs.append(np.ascontiguousarray(
            p.detach().cpu().numpy(), dtype="<f8").tobytes())
    atomic_write_bytes(path, b"".join(blobs))


def load_checkpoint(path: str | Path) -> tuple[CASNet, dict]:
    """Rebuild a model from a checkpoint; returns (model, header_meta)."""
    raw = Path(path).read_bytes()
    if len(raw) < _CKPT_HEADER.size:
        raise ValueError(f"{path}: truncated checkpoint header")
    magic, version, n_classes, t_fixed, d_in, d_emb, h, n_hidden = \
        _CKPT_HEADER.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = _CKPT_HEADER.size
    hidden = struct.unpack_from(f"<{n_hidden}I", raw, off)
    off += 4 * n_hidden
    model = CASNet(d_in, n_classes, d_emb=d_emb, h=h, hidden=hidden)
    with torch.no_grad():
        for name, p in model.param_tensors():
            n = p.numel()
            arr = np.frombuffer(raw, dtype="<f8", count=n, offset=off)
            off += 8 * n
            p.copy_(torch.from_numpy(arr.reshape(p.shape).copy()))
    if off != len(raw):
        raise ValueError(f"{path}: {len(raw) - off} trailing bytes")
    meta = {"n_classes": n_classes, "t_fixed": t_fixed, "d_in": d_in,
            "d_emb": d_emb, "h": h, "hidden": tuple(hidden)}
    return model, meta
