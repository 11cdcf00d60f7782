"""Training loop (AdamW updates, deterministic seeding, checkpointing) and
the finite-difference gradient-check harness."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .data import DatasetManifest, LoadedVideo, atomic_write_json, atomic_write_text, load_dataset
from .losses import (
    LossReport,
    affinity_loss,
    compose_total,
    frame_cls_loss,
    score_separation_loss,
    video_cls_loss,
    weight_supervision_loss,
)
from .network import CASNet, save_checkpoint, select_pseudo_action_frames

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8

LOG_HEADER = "iter,l_cls,l_frame,l_sep,l_aff,total"


class TrainingDivergedError(RuntimeError):
    """Raised when a batch produces a non-finite loss."""


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 5e-4
    batch_size: int = 16
    epochs: int = 100
    lambda_sep: float = 1.0
    beta_aff: float = 0.8
    tau_same: float = 0.5
    tau_diff: float = 0.1
    k_ratio: float = 0.125
    t_fixed: int | None = None   # None: take the manifest's grid
    d_emb: int = 32
    h: int = 3
    hidden: tuple[int, int] = (512, 512)
    seed: int = 0
    use_score_separation: bool = True
    use_affinity: bool = True
    use_weight_supervision: bool = False
    use_suppression: bool = True
    use_frame_loss: bool = True

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        for name in ("lr", "weight_decay", "lambda_sep", "beta_aff", "k_ratio"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("batch_size", "epochs", "d_emb", "h"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    def k_for(self, t_fixed: int) -> int:
        k = math.floor(self.k_ratio * t_fixed)
        if k < 1:
            raise ValueError(f"k_ratio {self.k_ratio} gives k < 1 at T={t_fixed}")
        return k

    def to_json_obj(self) -> dict:
        obj = asdict(self)
        obj["hidden"] = list(self.hidden)
        return obj

    @classmethod
    def from_json_obj(cls, obj: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(obj) - known
        if extra:
            raise ValueError(f"unknown config fields: {sorted(extra)}")
        return cls(**obj)


@dataclass
class VideoLosses:
    """Loss tensors for one video; components are unweighted, ``total``
    carries the trade-off coefficients."""

    l_cls: torch.Tensor
    l_frame: torch.Tensor
    l_sep: torch.Tensor
    l_aff: torch.Tensor
    l_ws: torch.Tensor
    total: torch.Tensor
    p_act: dict[int, float]
    p_bg: dict[int, float]

    def report(self) -> LossReport:
        val = lambda t: float(t.detach())
        return LossReport(
            l_cls=val(self.l_cls), l_frame=val(self.l_frame),
            l_sep=val(self.l_sep), l_aff=val(self.l_aff),
            total=val(self.total), l_ws=val(self.l_ws),
            p_act=dict(self.p_act), p_bg=dict(self.p_bg))


def compute_video_losses(model: CASNet, x: torch.Tensor, labels: np.ndarray,
                         clicks: np.ndarray, cfg: TrainConfig,
                         k: int) -> VideoLosses:
    """Forward one video and evaluate the enabled objectives. A disabled
    module (toggle off, or its coefficient exactly zero) is not computed at
    all, so zeroing a coefficient reproduces the toggle-off run bitwise."""
    res = model.forward(x, use_affinity=cfg.use_affinity,
                        compute_suppressed=cfg.use_suppression)
    zero = res.s_base.new_zeros(())
    l_cls = video_cls_loss(res.s_base, res.s_supp, labels, k)
    l_frame = frame_cls_loss(res.s_base, clicks) if cfg.use_frame_loss else zero

    sep_on = cfg.use_score_separation and cfg.lambda_sep != 0.0
    if sep_on:
        l_sep, p_act, p_bg = score_separation_loss(res.s_base, labels, clicks, k)
    else:
        l_sep, p_act, p_bg = zero, {}, {}

    aff_on = cfg.use_affinity and cfg.beta_aff != 0.0
    if aff_on:
        state = select_pseudo_action_frames(res.s_base, labels, k, clicks)
        l_aff = affinity_loss(res.embeddings, state.pseudo,
                              cfg.tau_same, cfg.tau_diff)
    else:
        l_aff = zero

    l_ws = (weight_supervision_loss(res.attention_logits, clicks)
            if cfg.use_weight_supervision else None)
    total = compose_total(l_cls, l_frame, l_sep, l_aff,
                          cfg.lambda_sep if sep_on else 0.0,
                          cfg.beta_aff if aff_on else 0.0,
                          l_ws)
    return VideoLosses(l_cls=l_cls, l_frame=l_frame, l_sep=l_sep, l_aff=l_aff,
                       l_ws=l_ws if l_ws is not None else zero, total=total,
                       p_act=p_act, p_bg=p_bg)


def measure_separation(model: CASNet, videos: list[LoadedVideo], k: int,
                       use_affinity: bool = True) -> float:
    """Mean over videos and labeled classes of (top-k action mean score minus
    clicked-background mean score), on the base stream."""
    diffs = []
    with torch.no_grad():
        for v in videos:
            res = model.forward(torch.from_numpy(v.features),
                                use_affinity=use_affinity,
                                compute_suppressed=False)
            _, p_act, p_bg = score_separation_loss(res.s_base, v.labels,
                                                   v.clicks, k)
            diffs.extend(p_act[c] - p_bg[c] for c in p_act)
    return float(np.mean(diffs)) if diffs else 0.0


@dataclass
class TrainResult:
    checkpoint_path: Path
    log_path: Path
    iterations: int
    final_loss: float


def build_model(cfg: TrainConfig, d_in: int, n_classes: int) -> CASNet:
    """The (seeded) initial model a training run starts from."""
    init_seq, _ = np.random.SeedSequence(cfg.seed).spawn(2)
    return CASNet(d_in, n_classes, d_emb=cfg.d_emb, h=cfg.h, hidden=cfg.hidden,
                  rng=np.random.default_rng(init_seq))


def train(cfg: TrainConfig, manifest: DatasetManifest, out_dir: str | Path) -> TrainResult:
    """Run the optimization loop and write checkpoint + CSV loss log.

    Videos are shuffled once per epoch (seeded, without replacement) and
    consumed in fixed-size batches; each update averages the per-video totals
    over the batch. Updates use decoupled weight decay with Adam moments.
    """
    # Per-video tensors are tiny; intra-op threading is pure overhead and a
    # fixed thread count keeps runs bit-reproducible across hosts.
    torch.set_num_threads(1)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t_fixed = manifest.t_fixed
    if cfg.t_fixed is not None and cfg.t_fixed != t_fixed:
        raise ValueError(
            f"config t_fixed={cfg.t_fixed} != manifest t_fixed={t_fixed}")
    k = cfg.k_for(t_fixed)
    videos = load_dataset(manifest)
    if not videos:
        raise ValueError("empty dataset")
    feats = [torch.from_numpy(v.features) for v in videos]

    _, shuffle_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    model = build_model(cfg, videos[0].features.shape[0], manifest.n_classes)
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr, betas=ADAM_BETAS,
                            eps=ADAM_EPS, weight_decay=cfg.weight_decay)
    shuffle_rng = np.random.default_rng(shuffle_seq)

    rows = [LOG_HEADER]
    iteration = 0
    for _ in range(cfg.epochs):
        order = shuffle_rng.permutation(len(videos))
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            opt.zero_grad()
            reports = []
            batch_total = None
            for vi in batch:
                v = videos[vi]
                vl = compute_video_losses(model, feats[vi], v.labels, v.clicks,
                                          cfg, k)
                batch_total = vl.total if batch_total is None else batch_total + vl.total
                reports.append(vl.report())
            batch_total = batch_total / len(batch)
            iteration += 1
            if not torch.isfinite(batch_total.detach()):
                dump = {
                    "iteration": iteration,
                    "video_ids": [videos[vi].video_id for vi in batch],
                    "losses": [asdict(r) for r in reports],
                }
                atomic_write_json(out_dir / "divergence_dump.json", dump)
                raise TrainingDivergedError(
                    f"non-finite loss at iteration {iteration}; "
                    f"batch dumped to {out_dir / 'divergence_dump.json'}")
            batch_total.backward()
            opt.step()
            rows.append("%d,%.10g,%.10g,%.10g,%.10g,%.10g" % (
                iteration,
                float(np.mean([r.l_cls for r in reports])),
                float(np.mean([r.l_frame for r in reports])),
                float(np.mean([r.l_sep for r in reports])),
                float(np.mean([r.l_aff for r in reports])),
                float(batch_total.detach())))

    log_path = out_dir / "train_log.csv"
    atomic_write_text(log_path, "\n".join(rows) + "\n")
    checkpoint_path = out_dir / "checkpoint.bin"
    save_checkpoint(checkpoint_path, model, t_fixed)
    final_loss = float(rows[-1].split(",")[-1]) if iteration else float("nan")
    return TrainResult(checkpoint_path=checkpoint_path, log_path=log_path,
                       iterations=iteration, final_loss=final_loss)


# Gradient checking ----------------------------------------------------------

GRADCHECK_DIMS = dict(t=16, n_classes=3, d_in=8, d_emb=4, h=3, hidden=(8, 8))


@dataclass
class GradCheckEntry:
    loss_name: str
    param_name: str
    max_rel_err: float


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry]
    tol: float
    passed: bool

    def worst(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for e in self.entries:
            out[e.loss_name] = max(out.get(e.loss_name, 0.0), e.max_rel_err)
        return out

    def summary_lines(self) -> list[str]:
        lines = [f"{name}: max rel err {err:.3e}"
                 for name, err in sorted(self.worst().items())]
        lines.append("PASS" if self.passed else "FAIL")
        return lines


def _gradcheck_instance(seed_seq: np.random.SeedSequence, cfg: TrainConfig):
    dims = GRADCHECK_DIMS
    rng = np.random.default_rng(seed_seq)
    model = CASNet(dims["d_in"], dims["n_classes"], d_emb=dims["d_emb"],
                   h=dims["h"], hidden=dims["hidden"], rng=rng)
    x = torch.from_numpy(rng.standard_normal((dims["d_in"], dims["t"])))
    labels = np.zeros(dims["n_classes"] + 1, dtype=np.int64)
    active = rng.choice(dims["n_classes"], size=int(rng.integers(1, 3)),
                        replace=False) + 1
    labels[active] = 1
    clicks = np.full(dims["t"], -1, dtype=np.int8)
    clicks[rng.choice(dims["t"], size=3, replace=False)] = 1
    k = cfg.k_for(dims["t"])
    return model, x, labels, clicks, k


def gradcheck(n_instances: int = 20, seed: int = 0, step: float = 1e-5,
              tol: float = 1e-4, _grad_scale: float = 1.0) -> GradCheckReport:
    """Compare analytic gradients of every loss component (and the composed
    total, affinity modulation active) against central finite differences for
    every parameter tensor, on small random instances.

    Relative error uses a unit floor, err = |a - f| / max(1, |a|, |f|), so
    finite-difference noise on near-zero entries does not dominate.
    """
    torch.set_num_threads(1)
    cfg = TrainConfig(hidden=GRADCHECK_DIMS["hidden"],
                      d_emb=GRADCHECK_DIMS["d_emb"], h=GRADCHECK_DIMS["h"])
    loss_names = ("l_cls", "l_frame", "l_sep", "l_aff", "total")
    entries = []
    for inst, seq in enumerate(np.random.SeedSequence(seed).spawn(n_instances)):
        model, x, labels, clicks, k = _gradcheck_instance(seq, cfg)
        params = model.param_tensors()

        def eval_losses() -> VideoLosses:
            return compute_video_losses(model, x, labels, clicks, cfg, k)

        vl = eval_losses()
        analytic: dict[str, dict[str, np.ndarray]] = {}
        for name in loss_names:
            model.zero_grad()
            getattr(vl, name).backward(retain_graph=True)
            analytic[name] = {
                pname: (p.grad.detach().numpy().copy() if p.grad is not None
                        else np.zeros(p.shape))
                for pname, p in params
            }

        fd: dict[str, dict[str, np.ndarray]] = {
            name: {pname: np.zeros(p.numel()) for pname, p in params}
            for name in loss_names
        }
        with torch.no_grad():
            for pname, p in params:
                flat = p.view(-1)
                for j in range(flat.numel()):
                    orig = flat[j].item()
                    flat[j] = orig + step
                    plus = eval_losses()
                    flat[j] = orig - step
                    minus = eval_losses()
                    flat[j] = orig
                    for name in loss_names:
                        fd[name][pname][j] = (
                            float(getattr(plus, name)) - float(getattr(minus, name))
                        ) / (2.0 * step)

        for name in loss_names:
            for pname, p in params:
                a = analytic[name][pname].reshape(-1) * _grad_scale
                f = fd[name][pname]
                denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(f)))
                err = float(np.max(np.abs(a - f) / denom)) if a.size else 0.0
                entries.append(GradCheckEntry(name, f"{pname}[{inst}]", err))

    passed = all(e.max_rel_err < tol for e in entries)
    return GradCheckReport(entries=entries, tol=tol, passed=passed)
