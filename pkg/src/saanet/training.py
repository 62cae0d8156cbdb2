"""Adam training loop for the reconstruction network."""

from __future__ import annotations

import copy
import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .checkpoint import save_checkpoint
from .datagen import PatchPair
from .metrics import psnr
from .network import NetworkConfig, SAANet, build_network
from .perceptual import AutoEncoder3D, LossWeights, NumericalError, loss_terms
from .saam import ConfigError

log = logging.getLogger(__name__)

LOSS_CSV_HEADER = ("step", "l_pix", "l_feat", "l_total")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    # Adam's step is ~lr only while eps << |grad|; a Gaussian(0, 1e-3) init gives
    # gradients of 1e-14 and (much) smaller, which eps=1e-8 would freeze
    adam_eps: float = 1e-20
    batch_size: int = 28
    max_steps: int = 800_000
    checkpoint_every: int = 5000
    log_every: int = 50
    lambda_feat: tuple[float, float, float] = (0.2, 0.2, 0.1)
    seed: int = 0
    keep_last: int = 3

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        self.lambda_feat = tuple(float(v) for v in self.lambda_feat)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_feat)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    model: SAANet
    losses: list[tuple[int, float, float, float]] = field(default_factory=list)
    steps: int = 0
    best_val_psnr: float | None = None


def make_optimizer(model: torch.nn.Module, config: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(model.parameters(), lr=config.learning_rate, betas=(config.beta1, config.beta2),
                            eps=config.adam_eps)


def stack_pairs(pairs: Sequence[PatchPair]) -> tuple[torch.Tensor, torch.Tensor]:
    x = torch.as_tensor(np.stack([p.input for p in pairs]), dtype=torch.float32)[:, None]
    y = torch.as_tensor(np.stack([p.target for p in pairs]), dtype=torch.float32)[:, None]
    return x, y


def batch_indices(n: int, batch_size: int, seed: int):
    """Endless stream of index batches from seeded per-epoch permutations."""
    gen = torch.Generator().manual_seed(seed)
    while True:
        perm = torch.randperm(n, generator=gen)
        if n <= batch_size:
            yield perm
            continue
        for i in range(0, n - batch_size + 1, batch_size):
            yield perm[i:i + batch_size]


def predict(model: SAANet, inputs: torch.Tensor, chunk: int = 8) -> torch.Tensor:
    with torch.no_grad():
        return torch.cat([model(inputs[i:i + chunk]) for i in range(0, len(inputs), chunk)])


def mean_psnr(model: SAANet, inputs: torch.Tensor, targets: torch.Tensor) -> float:
    out = predict(model, inputs).clamp(0, 1).numpy()
    tgt = targets.numpy()
    return float(np.mean([psnr(o, t) for o, t in zip(out, tgt)]))


def write_loss_csv(rows, path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOSS_CSV_HEADER)
        writer.writerows(rows)
    return path


def train(net_config: NetworkConfig, config: TrainConfig, pairs: Sequence[PatchPair], *,
          ae: AutoEncoder3D | None = None, out_dir: str | Path | None = None,
          val_pairs: Sequence[PatchPair] | None = None, model: SAANet | None = None) -> TrainResult:
    """Optimize a reconstruction network on ``pairs``.

    Deterministic for a fixed seed in single-threaded mode.  A non-finite loss
    restores the last finite parameters, writes them to ``abort.npz`` when an
    output directory is given, and raises :class:`NumericalError`.
    """
    weights = config.weights
    if weights.uses_features and ae is None:
        raise ConfigError("perceptual loss weights are nonzero but no auto-encoder was supplied")
    torch.manual_seed(config.seed)
    if model is None:
        model = build_network(net_config, seed=config.seed)
    result = TrainResult(model)
    out_dir = Path(out_dir) if out_dir is not None else None
    if config.max_steps <= 0:
        if out_dir is not None:
            save_checkpoint(out_dir / "final.npz", model, model_kind="saanet", config=net_config.to_dict(), step=0)
        return result
    if not pairs:
        raise ValueError("no training pairs")
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    x_all, y_all = stack_pairs(pairs)
    val = stack_pairs(val_pairs) if val_pairs else None
    opt = make_optimizer(model, config)
    batches = batch_indices(len(x_all), config.batch_size, config.seed)
    last_good = copy.deepcopy(model.state_dict())
    saved: list[Path] = []
    model.train()
    for step in range(1, config.max_steps + 1):
        idx = next(batches)
        terms = loss_terms(ae, model(x_all[idx]), y_all[idx], weights)
        if not torch.isfinite(terms["total"]):
            model.load_state_dict(last_good)
            where = ""
            if out_dir is not None:
                abort = save_checkpoint(out_dir / "abort.npz", model, model_kind="saanet",
                                        config=net_config.to_dict(), step=result.steps)
                where = f"; last finite parameters saved to {abort}"
            raise NumericalError(f"loss became {terms['total'].item()} at step {step}{where}")
        opt.zero_grad()
        terms["total"].backward()
        opt.step()
        result.steps = step
        if step % config.log_every == 0 or step == config.max_steps:
            row = (step, terms["pix"].item(), terms["feat"].item(), terms["total"].item())
            result.losses.append(row)
            last_good = copy.deepcopy(model.state_dict())
            log.info("step %d  l_pix %.5f  l_feat %.5f  l_total %.5f", *row)
        if out_dir is not None and (step % config.checkpoint_every == 0 or step == config.max_steps):
            path = save_checkpoint(out_dir / f"step_{step:07d}.npz", model, model_kind="saanet",
                                   config=net_config.to_dict(), step=step)
            saved.append(path)
            while len(saved) > config.keep_last:
                saved.pop(0).unlink(missing_ok=True)
            if val is not None:
                score = mean_psnr(model, *val)
                if result.best_val_psnr is None or score > result.best_val_psnr:
                    result.best_val_psnr = score
                    save_checkpoint(out_dir / "best.npz", model, model_kind="saanet",
                                    config=net_config.to_dict(), step=step, extra={"val_psnr": score})
    model.eval()
    if out_dir is not None:
        write_loss_csv(result.losses, out_dir / "loss.csv")
        save_checkpoint(out_dir / "final.npz", model, model_kind="saanet",
                        config=net_config.to_dict(), step=result.steps)
    return result
