"""Three-phase optimization schedule.

Phase 1 trains everything except the refiners against the joint
rate-distortion objective, one term per level, with uniform noise standing
in for quantization. Phase 2 freezes all but the top synthesis stack and
minimizes distortion alone at a freshly sampled quality each step, so the
decoder learns to handle every mask it may meet. Phase 3 trains only the
refiners, minimizing the rate of the elements beyond their checkpoints.

Each phase runs Adam with plateau halving and returns the per-step loss
sequence, the value at index 0 being the loss before any update. A
non-finite loss aborts immediately with the step and loss breakdown.
"""

from __future__ import annotations

from typing import Callable

import numpy as np
import torch

from .config import TrainConfig
from .data import CropSampler
from .model import CodecModel, layer_table

Progress = Callable[[int, float], None]

_MSE_SCALE = 255.0**2  # distortion in 8-bit units, balancing bits per pixel


class TrainingError(RuntimeError):
    """Training aborted: divergent loss or inconsistent setup."""


def sample_quality(rng: np.random.Generator) -> float:
    """One quality draw, uniform over (0, 100]."""
    return float(100.0 * (1.0 - rng.random()))


def _distortion(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    return _MSE_SCALE * torch.mean((x - x_hat) ** 2)


def _trainable(model: CodecModel, names: list[str], extra=()) -> list[torch.nn.Parameter]:
    """Freeze the whole model, then re-enable exactly the named layers."""
    for p in model.parameters():
        p.requires_grad_(False)
    params: list[torch.nn.Parameter] = []
    for name in names:
        params.extend(model.conv_layer(name).parameters())
    params.extend(extra)
    for p in params:
        p.requires_grad_(True)
    return params


def _fit(
    model: CodecModel,
    sampler: CropSampler,
    cfg: TrainConfig,
    steps: int,
    params: list[torch.nn.Parameter],
    loss_fn,
    phase: int,
    progress: Progress | None,
) -> list[float]:
    opt = torch.optim.Adam(params, lr=cfg.learning_rate)
    sched = torch.optim.lr_scheduler.ReduceLROnPlateau(
        opt, factor=cfg.plateau_factor, patience=cfg.plateau_patience
    )
    losses: list[float] = []
    for step in range(steps):
        x = torch.from_numpy(sampler.batch(cfg.batch_size))
        loss, parts = loss_fn(x)
        if not torch.isfinite(loss):
            detail = ", ".join(f"{k}={v:.6g}" for k, v in parts.items())
            raise TrainingError(f"phase {phase} diverged at step {step}: {detail}")
        value = float(loss.detach())
        losses.append(value)
        if progress is not None:
            progress(step, value)
        opt.zero_grad()
        # A step can come back gradless (a rate-only loss over an empty
        # support, or a zero trade-off weight); it still counts for the
        # schedule.
        if loss.requires_grad:
            loss.backward()
            opt.step()
        sched.step(value)
    return losses


def train_phase1(
    sampler: CropSampler, cfg: TrainConfig, progress: Progress | None = None
) -> tuple[CodecModel, list[float]]:
    """Joint rate-distortion training of everything except the refiners."""
    model = CodecModel(cfg)
    gen = torch.Generator().manual_seed(cfg.seed + 1)
    names = [n for n in layer_table(cfg) if not n.startswith("rem.")]
    params = _trainable(model, names, extra=[model.zprior_mu, model.zprior_sigma_raw])

    def loss_fn(x: torch.Tensor):
        out = model.joint_rd(x, gen)
        d_b = _distortion(x, out["x_hat_b"])
        d_t = _distortion(x, out["x_hat_t"])
        # The hyper-latent prices both levels: neither decodes without it.
        loss = (
            cfg.lambda_base * d_b
            + out["bpp_b"]
            + out["bpp_z"]
            + cfg.lambda_top * d_t
            + out["bpp_t"]
            + out["bpp_z"]
        )
        parts = {
            "loss": float(loss.detach()),
            "d_b": float(d_b.detach()),
            "d_t": float(d_t.detach()),
            "bpp_b": float(out["bpp_b"].detach()),
            "bpp_t": float(out["bpp_t"].detach()),
            "bpp_z": float(out["bpp_z"].detach()),
        }
        return loss, parts

    losses = _fit(model, sampler, cfg, cfg.phase1_steps, params, loss_fn, 1, progress)
    return model, losses


def train_phase2_refine_decoder(
    model: CodecModel, sampler: CropSampler, cfg: TrainConfig, progress: Progress | None = None
) -> list[float]:
    """Distortion-only refinement of the top synthesis stack across qualities."""
    rng = np.random.default_rng(cfg.seed + 2)
    params = _trainable(model, [f"gs_t.{k}" for k in range(4)])

    def loss_fn(x: torch.Tensor):
        q = sample_quality(rng)
        with torch.no_grad():
            y_hat = model.masked_top_latent(x, q)
        x_hat = model.synthesis(y_hat, "top")
        d_t = _distortion(x, x_hat)
        loss = cfg.lambda_top * d_t
        return loss, {"loss": float(loss.detach()), "d_t": float(d_t.detach()), "q": q}

    return _fit(model, sampler, cfg, cfg.phase2_steps, params, loss_fn, 2, progress)


def train_phase3_rems(
    model: CodecModel, sampler: CropSampler, cfg: TrainConfig, progress: Progress | None = None
) -> list[float]:
    """Rate-only training of the refiners; everything else stays fixed."""
    gen = torch.Generator().manual_seed(cfg.seed + 3)
    names = [n for n in layer_table(cfg) if n.startswith("rem.")]
    params = _trainable(model, names)

    def loss_fn(x: torch.Tensor):
        out = model.refinement_bits(x, gen)
        loss = out["bpp_refined"]
        parts = {
            "loss": float(loss.detach()),
            "bpp_plain": float(out["bpp_plain"]),
        }
        return loss, parts

    return _fit(model, sampler, cfg, cfg.phase3_steps, params, loss_fn, 3, progress)
