"""3D auto-encoder and the pixel + spatial-angular perceptual training loss."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

log = logging.getLogger(__name__)

FEATURE_TAPS = (2, 4, 6)
DEFAULT_LAMBDA_FEAT = (0.2, 0.2, 0.1)
ENCODER_CHANNELS = (16, 16, 32, 32, 64, 64)
ENCODER_STRIDED = (1, 3, 5)


class NumericalError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class LossWeights:
    lambda_feat: tuple[float, float, float] = DEFAULT_LAMBDA_FEAT

    def __post_init__(self):
        if len(self.lambda_feat) != len(FEATURE_TAPS):
            raise ValueError(f"need {len(FEATURE_TAPS)} feature weights, got {self.lambda_feat}")
        if any(w < 0 for w in self.lambda_feat):
            raise ValueError("feature weights must be nonnegative")

    @property
    def uses_features(self) -> bool:
        return any(w != 0 for w in self.lambda_feat)


class AutoEncoder3D(nn.Module):
    """Six 3x3x3 encoder convs (stride 2 at layers 1, 3, 5) and a trilinear-upsampling decoder.

    Works on any input size: strided convs produce ``ceil(n/2)`` and the
    decoder resizes back to the recorded encoder sizes.
    """

    def __init__(self, channels=ENCODER_CHANNELS):
        super().__init__()
        c_in = 1
        self.encoder = nn.ModuleList()
        for i, c in enumerate(channels, start=1):
            stride = 2 if i in ENCODER_STRIDED else 1
            self.encoder.append(nn.Conv3d(c_in, c, 3, stride=stride, padding=1))
            c_in = c
        c1, c3, c5 = channels[1], channels[3], channels[5]
        self.decoder = nn.ModuleList([
            nn.Conv3d(c5, c3, 3, padding=1), nn.Conv3d(c3, c3, 3, padding=1),
            nn.Conv3d(c3, c1, 3, padding=1), nn.Conv3d(c1, c1, 3, padding=1),
            nn.Conv3d(c1, c1, 3, padding=1), nn.Conv3d(c1, c1, 3, padding=1),
        ])
        self.head = nn.Conv3d(c1, 1, 3, padding=1)

    def encode(self, x: torch.Tensor) -> tuple[list[torch.Tensor], list[torch.Size]]:
        """Return the feature taps (layers 2, 4, 6) and the input size of each strided stage."""
        taps, sizes = [], []
        for i, conv in enumerate(self.encoder, start=1):
            if i in ENCODER_STRIDED:
                sizes.append(x.shape[2:])
            x = F.relu(conv(x))
            if i in FEATURE_TAPS:
                taps.append(x)
        return taps, sizes

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        taps, sizes = self.encode(x)
        y = taps[-1]
        for stage, size in enumerate(reversed(sizes)):
            y = F.interpolate(y, size=tuple(size), mode="trilinear", align_corners=False)
            y = F.relu(self.decoder[2 * stage](y))
            y = F.relu(self.decoder[2 * stage + 1](y))
        return self.head(y)


def build_autoencoder(std: float = 1e-3, seed: int | None = None) -> AutoEncoder3D:
    from .network import init_params

    ae = AutoEncoder3D()
    gen = torch.Generator().manual_seed(seed) if seed is not None else None
    init_params(ae, std, gen)
    return ae


def freeze(ae: AutoEncoder3D) -> AutoEncoder3D:
    ae.eval()
    for p in ae.parameters():
        p.requires_grad_(False)
    return ae


def ae_loss(ae: AutoEncoder3D, target: torch.Tensor) -> torch.Tensor:
    """Mean absolute reconstruction error of the auto-encoder."""
    return (ae(target) - target).abs().mean()


def pixel_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return (pred - target).abs().mean()


def perceptual_loss(ae: AutoEncoder3D, pred: torch.Tensor, target: torch.Tensor,
                    weights: LossWeights = LossWeights()) -> torch.Tensor:
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    feats_pred, _ = ae.encode(pred)
    with torch.no_grad():
        feats_true, _ = ae.encode(target)
    total = pred.new_zeros(())
    for lam, fp, ft in zip(weights.lambda_feat, feats_pred, feats_true):
        if lam:
            total = total + lam * (fp - ft).abs().mean()
    return total


def loss_terms(ae: AutoEncoder3D | None, pred: torch.Tensor, target: torch.Tensor,
               weights: LossWeights = LossWeights()) -> dict[str, torch.Tensor]:
    """``{"pix", "feat", "total"}`` with total = pix + feat; feat skipped when all weights are 0."""
    pix = pixel_loss(pred, target)
    if not weights.uses_features:
        return {"pix": pix, "feat": pix.new_zeros(()), "total": pix}
    if ae is None:
        raise ValueError("nonzero feature weights need an auto-encoder")
    feat = perceptual_loss(ae, pred, target, weights)
    return {"pix": pix, "feat": feat, "total": pix + feat}


def total_loss(ae, pred, target, weights: LossWeights = LossWeights()) -> torch.Tensor:
    return loss_terms(ae, pred, target, weights)["total"]


@dataclass
class AETrainConfig:
    steps: int = 2000
    batch_size: int = 8
    learning_rate: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    init_std: float = 1e-3
    seed: int = 0
    log_every: int = 50
    cosine_decay: bool = True  # anneal the learning rate to 0 over ``steps``


def train_autoencoder(volumes: np.ndarray, config: AETrainConfig = AETrainConfig(),
                      ae: AutoEncoder3D | None = None, log_rows: list | None = None) -> AutoEncoder3D:
    """Fit the auto-encoder to reproduce ``volumes`` of shape ``(N, W, H, A)``; returns it frozen."""
    torch.manual_seed(config.seed)
    if ae is None:
        ae = build_autoencoder(config.init_std, config.seed)
    data = torch.as_tensor(np.asarray(volumes), dtype=torch.float32)[:, None]
    opt = torch.optim.Adam(ae.parameters(), lr=config.learning_rate, betas=(config.beta1, config.beta2))
    sched = (torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(config.steps, 1))
             if config.cosine_decay else None)
    gen = torch.Generator().manual_seed(config.seed)
    ae.train()
    for step in range(1, config.steps + 1):
        idx = torch.randint(len(data), (min(config.batch_size, len(data)),), generator=gen)
        loss = ae_loss(ae, data[idx])
        if not torch.isfinite(loss):
            raise NumericalError(f"auto-encoder loss became {loss.item()} at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        if sched is not None:
            sched.step()
        if step % config.log_every == 0 or step == config.steps:
            log.info("ae step %d loss %.5f", step, loss.item())
            if log_rows is not None:
                log_rows.append((step, loss.item()))
    return freeze(ae)
