"""Central finite-difference oracle for gradient checks."""

import numpy as np
import torch


def central_differences(loss_fn, tensor: torch.Tensor, step: float = 1e-5, indices=None) -> np.ndarray:
    """Numerical d(loss)/d(tensor) at ``indices`` (flat), perturbing entries in place."""
    flat = tensor.data.view(-1)
    indices = range(flat.numel()) if indices is None else indices
    out = []
    with torch.no_grad():
        for i in indices:
            orig = flat[i].item()
            flat[i] = orig + step
            up = float(loss_fn())
            flat[i] = orig - step
            down = float(loss_fn())
            flat[i] = orig
            out.append((up - down) / (2 * step))
    return np.array(out)


def max_relative_error(analytic, numeric, floor: float = 1e-6) -> float:
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_parameters(loss_fn, params, step=1e-5, per_tensor=None, seed=0):
    """Worst relative error between autograd and central differences over ``params``.

    ``per_tensor`` limits the check to that many randomly chosen entries per tensor.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in params:
        if p.grad is not None:
            p.grad = None
    loss = loss_fn()
    loss.backward()
    # entries that are analytically zero (e.g. a softmax-invariant bias) are judged
    # against the overall gradient scale rather than a bare absolute floor
    scale = max(float(p.grad.abs().max()) for p in params)
    floor = max(1e-6, 1e-6 * scale)
    for p in params:
        n = p.numel()
        idx = range(n) if per_tensor is None or n <= per_tensor else rng.choice(n, per_tensor, replace=False)
        idx = list(idx)
        analytic = p.grad.view(-1)[idx].numpy()
        numeric = central_differences(loss_fn, p, step, idx)
        worst = max(worst, max_relative_error(analytic, numeric, floor))
    return worst
