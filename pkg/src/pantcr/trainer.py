"""Training loop, L1 loss, cosine schedule, evaluation and the finite-difference gradient checker."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from . import metrics
from .dataset import load_split
from .errors import TrainingDiverged, ValidationError
from .net import blocks
from .net.checkpoint import save_checkpoint
from .net.config import NetworkConfig, tiny_config
from .net.model import PanTCRNet, batch_from_samples
from .raster import MultiBandRaster

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr_start: float = 3e-3
    lr_end: float = 1e-6
    epochs: int = 50
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 8
    seed: int = 0
    checkpoint_every: int = 0  # 0 keeps only best and last
    eval_every: int = 1

    def __post_init__(self):
        if not self.lr_start > self.lr_end > 0:
            raise ValidationError(f"need lr_start > lr_end > 0, got {self.lr_start}, {self.lr_end}")
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1 or self.eval_every < 1 or self.checkpoint_every < 0:
            raise ValidationError("batch_size and eval_every must be >= 1, checkpoint_every >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValidationError(f"unknown train config keys {sorted(unknown)}")
        return cls(**d)


def _as_array(x):
    if isinstance(x, MultiBandRaster):
        return x.data
    return x


def l1_loss(pred, target):
    """Mean absolute error.  Works on rasters/arrays (returns float) and tensors (returns a tensor)."""
    pred, target = _as_array(pred), _as_array(target)
    if tuple(pred.shape) != tuple(target.shape):
        raise ValidationError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    if isinstance(pred, torch.Tensor):
        return (pred - target).abs().mean()
    return float(np.mean(np.abs(np.asarray(pred, np.float64) - np.asarray(target, np.float64))))


def cosine_lr(epoch, cfg: TrainConfig) -> float:
    if not 0 <= epoch <= cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs}]")
    return cfg.lr_end + 0.5 * (cfg.lr_start - cfg.lr_end) * (1.0 + math.cos(math.pi * epoch / cfg.epochs))


# ------------------------------------------------------------------ evaluation


@torch.no_grad()
def predict_batch(model: PanTCRNet, samples, batch_size: int = 8) -> list[np.ndarray]:
    """Clipped H x W x C predictions, batched over equally sized samples."""
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    out = []
    for i in range(0, len(samples), batch_size):
        chunk = samples[i:i + batch_size]
        lr, pan, _ = batch_from_samples(chunk, dtype)
        pred = model(lr, pan, clip=True)
        out.extend(p.permute(1, 2, 0).numpy().astype(np.float32) for p in pred)
    model.train(was_training)
    return out


def evaluate_samples(model: PanTCRNet, samples, r: int = 4, full_ssim: bool = True) -> list[metrics.MetricReport]:
    reports = []
    for sample, pred in zip(samples, predict_batch(model, samples)):
        if full_ssim:
            rep = metrics.reduced_resolution_report(pred, sample.clean_hrmsi.data, r)
        else:
            rep = metrics.MetricReport(
                psnr_db=metrics.psnr(pred, sample.clean_hrmsi.data),
                sam_deg=metrics.sam(pred, sample.clean_hrmsi.data),
            )
        reports.append(rep)
    return reports


def mean_psnr_sam(model: PanTCRNet, samples) -> tuple[float, float]:
    reps = evaluate_samples(model, samples, full_ssim=False)
    return float(np.mean([r.psnr_db for r in reps])), float(np.mean([r.sam_deg for r in reps]))


# ------------------------------------------------------------------ training


def set_determinism(seed: int) -> None:
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)


def build_model(net_cfg: NetworkConfig, seed: int) -> PanTCRNet:
    torch.manual_seed(seed)
    return PanTCRNet(net_cfg)


def _snapshot(out_dir: Path, epoch: int, step: int, lr, pan, target, model) -> Path:
    snap = out_dir / "nan_snapshot"
    snap.mkdir(parents=True, exist_ok=True)
    np.savez(snap / "batch.npz", lrmsi=lr.numpy(), pan=pan.numpy(), target=target.numpy())
    save_checkpoint(model, snap / "model", extra={"epoch": epoch, "step": step})
    return snap


def fit(model: PanTCRNet, train_samples, val_samples, cfg: TrainConfig, out_dir) -> dict:
    """Optimise ``model`` in place; writes ``train_log.jsonl``, ``best/`` and ``last/`` under ``out_dir``."""
    if not train_samples:
        raise ValidationError("training split is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    set_determinism(cfg.seed)
    order_rng = np.random.default_rng(cfg.seed)
    opt = torch.optim.Adam(
        model.parameters(), lr=cfg.lr_start, betas=(cfg.adam_beta1, cfg.adam_beta2), eps=cfg.adam_eps
    )
    dtype = next(model.parameters()).dtype
    log_path = out_dir / "train_log.jsonl"
    history = []
    best = {"epoch": None, "val_psnr": -math.inf}
    step = 0
    with log_path.open("w") as log_file:
        for epoch in range(cfg.epochs):
            t0 = time.perf_counter()
            lr_now = cosine_lr(epoch, cfg)
            for g in opt.param_groups:
                g["lr"] = lr_now
            model.train()
            order = order_rng.permutation(len(train_samples))
            losses = []
            for i in range(0, len(order), cfg.batch_size):
                batch = [train_samples[j] for j in order[i:i + cfg.batch_size]]
                lr, pan, target = batch_from_samples(batch, dtype)
                loss = l1_loss(model(lr, pan), target)
                if not torch.isfinite(loss):
                    snap = _snapshot(out_dir, epoch, step, lr, pan, target, model)
                    raise TrainingDiverged(f"non-finite loss at epoch {epoch}, step {step}", snapshot_path=str(snap))
                opt.zero_grad(set_to_none=True)
                loss.backward()
                opt.step()
                losses.append(float(loss.detach()) * len(batch))
                step += 1
            record = {
                "epoch": epoch,
                "lr": lr_now,
                "train_l1": sum(losses) / len(train_samples),
                "val_psnr": None,
                "val_sam": None,
            }
            last_epoch = epoch == cfg.epochs - 1
            if val_samples and ((epoch + 1) % cfg.eval_every == 0 or last_epoch):
                record["val_psnr"], record["val_sam"] = mean_psnr_sam(model, val_samples)
                if record["val_psnr"] > best["val_psnr"]:
                    best = {"epoch": epoch, "val_psnr": record["val_psnr"]}
                    save_checkpoint(model, out_dir / "best", extra={"epoch": epoch, "val_psnr": record["val_psnr"]})
            if cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(model, out_dir / f"epoch_{epoch + 1:04d}", extra={"epoch": epoch})
            record["wall_s"] = time.perf_counter() - t0
            history.append(record)
            # wall time is the only non-deterministic field, so it goes last
            log_file.write(json.dumps(record) + "\n")
            log_file.flush()
            log.info("epoch %d lr %.3g l1 %.5f val_psnr %s", epoch, lr_now, record["train_l1"], record["val_psnr"])
    save_checkpoint(model, out_dir / "last", extra={"epoch": cfg.epochs - 1})
    if best["epoch"] is None:
        # no validation data: the final weights are the selected ones
        save_checkpoint(model, out_dir / "best", extra={"epoch": cfg.epochs - 1, "val_psnr": None})
    return {"history": history, "best_epoch": best["epoch"], "best_val_psnr": best["val_psnr"],
            "steps": step, "log": str(log_path), "best": str(out_dir / "best")}


def train(manifest: dict, net_cfg: NetworkConfig, train_cfg: TrainConfig, out_dir) -> dict:
    """Train on the manifest's ``train`` split, selecting on ``val`` PSNR."""
    train_samples = load_split(manifest, "train")
    val_samples = load_split(manifest, "val")
    if not train_samples or not val_samples:
        raise ValidationError("manifest needs non-empty train and val splits")
    if int(manifest["r"]) != net_cfg.scale_ratio:
        raise ValidationError(f"manifest r={manifest['r']} but network scale_ratio={net_cfg.scale_ratio}")
    model = build_model(net_cfg, train_cfg.seed)
    result = fit(model, train_samples, val_samples, train_cfg, out_dir)
    result["model"] = model
    return result


# ------------------------------------------------------------------ gradient checks

GRADCHECK_BLOCKS = ("linear", "stem", "dam", "phase_branch", "amplitude_branch", "mafg", "ifc", "fdr", "se", "full")
_GC_CHANNELS = 4
_GC_SIZE = 8


def _randomize(module: nn.Module, gen: torch.Generator) -> None:
    """Give all-zero parameters (output head, IFC scale) small random values so gradient flows through them.

    Other tensors keep their default initialisation; large random weights
    push activations to ~1e4 and the check loses all precision.
    """
    with torch.no_grad():
        for p in module.parameters():
            if not p.any():
                p.copy_(0.2 * torch.randn(p.shape, generator=gen, dtype=p.dtype))


def _gradcheck_case(name: str, gen: torch.Generator):
    """Return ``(module, inputs)``; the module is called as ``module(*inputs)``."""
    c, n = _GC_CHANNELS, _GC_SIZE
    cfg = tiny_config()
    rnd = lambda *shape: torch.randn(*shape, generator=gen, dtype=torch.float64)  # noqa: E731
    uni = lambda *shape: torch.rand(*shape, generator=gen, dtype=torch.float64)  # noqa: E731
    if name == "linear":
        return blocks.conv1x1(c, c), (rnd(1, c, n, n),)
    if name == "stem":
        return blocks.ResidualStem(cfg.bands + 1, c), (rnd(1, cfg.bands + 1, n, n),)
    if name == "dam":
        return blocks.DAM(c), (rnd(1, 2 * c, n, n),)
    if name == "mafg":
        return blocks.MAFG(c), (uni(1, 2 * c, n, n) + 0.1,)
    if name == "phase_branch":
        phase = (2 * uni(1, c, n, n) - 1) * math.pi * 0.9
        return blocks.PhaseBranch(c, cfg), (phase, uni(1, 1, n, n))
    if name == "amplitude_branch":
        return blocks.AmplitudeBranch(c, cfg), (uni(1, c, n, n) + 0.1, uni(1, 1, n, n))
    if name == "ifc":
        phase = (2 * uni(1, c, n, n) - 1) * math.pi * 0.9
        return blocks.IFC(c), (phase, uni(1, c, n, n) + 0.1)
    if name == "fdr":
        return blocks.FDRBlock(c, cfg), (rnd(1, c, n, n), uni(1, 1, n, n), uni(1, 1, n, n))
    if name == "se":
        return blocks.SpectralTransformer(c, cfg.se_heads), (rnd(1, c, n, n),)
    if name in ("full", "full-tiny"):
        r = cfg.scale_ratio
        return PanTCRNet(cfg), (uni(1, cfg.bands, n // r, n // r), uni(1, 1, n, n))
    raise ValueError(f"unknown block {name!r}; choose from {GRADCHECK_BLOCKS}")


def _scalar_output(out) -> list[torch.Tensor]:
    return list(out) if isinstance(out, tuple) else [out]


def gradcheck(block_name: str, seed: int = 0, step: float = 1e-5, max_elements: int = 12,
              kink_tol: float = 1e-3) -> dict:
    """Central finite differences vs autograd in float64.

    For every parameter tensor and every input, up to ``max_elements``
    randomly chosen entries are perturbed by ``+-step``.  The error of a
    tensor is ``max |numeric - analytic|`` over those entries divided by the
    largest analytic gradient magnitude in the tensor.

    An entry whose one-sided slopes differ by more than ``kink_tol`` times
    that magnitude straddles a ReLU kink or a phase jump (real FFT bins
    flipping sign), where no derivative exists; it is replaced by another
    entry and counted in ``nonsmooth``.

    Differences smaller than roundoff in the objective cannot be resolved,
    so the magnitude is floored at ``1e4 * eps * sum|out * probe| / step``
    (reported as ``grad_floor``), which plays the role of an absolute
    tolerance for tensors whose gradients are tiny.
    """
    gen = torch.Generator().manual_seed(seed)
    torch.manual_seed(seed)
    module, inputs = _gradcheck_case(block_name, gen)
    module = module.double()
    _randomize(module, gen)
    module.train()
    inputs = tuple(x.clone().requires_grad_(True) for x in inputs)
    outs = _scalar_output(module(*inputs))
    probes = [torch.randn(o.shape, generator=gen, dtype=torch.float64) for o in outs]

    def objective() -> torch.Tensor:
        return sum((o * p).sum() for o, p in zip(_scalar_output(module(*inputs)), probes))

    targets = [(f"param:{k}", p) for k, p in module.named_parameters()]
    targets += [(f"input:{i}", x) for i, x in enumerate(inputs)]
    module.zero_grad()
    objective().backward()
    analytic = {name: t.grad.detach().clone() for name, t in targets}

    pick_rng = np.random.default_rng(seed)
    per_tensor = {}
    nonsmooth = 0
    with torch.no_grad():
        f0 = objective().item()
        magnitude = sum((o * p).abs().sum() for o, p in zip(_scalar_output(module(*inputs)), probes)).item()
        grad_floor = 1e4 * torch.finfo(torch.float64).eps * magnitude / step
        for name, t in targets:
            flat = t.data.view(-1)
            g = analytic[name].view(-1)
            scale = max(g.abs().max().item(), grad_floor)
            candidates = pick_rng.permutation(flat.numel())
            worst, checked = 0.0, 0
            for j in candidates:
                if checked >= max_elements:
                    break
                orig = flat[j].item()
                flat[j] = orig + step
                f_plus = objective().item()
                flat[j] = orig - step
                f_minus = objective().item()
                flat[j] = orig
                slope_p, slope_m = (f_plus - f0) / step, (f0 - f_minus) / step
                if abs(slope_p - slope_m) > kink_tol * scale:
                    nonsmooth += 1
                    continue
                worst = max(worst, abs(0.5 * (slope_p + slope_m) - g[j].item()))
                checked += 1
            per_tensor[name] = worst / scale
    max_err = max(per_tensor.values())
    return {"block": block_name, "seed": seed, "step": step, "max_rel_err": max_err,
            "nonsmooth": nonsmooth, "grad_floor": grad_floor, "per_tensor": per_tensor}


__all__ = [
    "TrainConfig", "l1_loss", "cosine_lr", "train", "fit", "gradcheck", "evaluate_samples",
    "predict_batch", "mean_psnr_sam", "build_model", "GRADCHECK_BLOCKS",
]
