"""Flat ``key = value`` config files with typed defaults.

Precedence is command line > config file > built-in defaults.  Values are
coerced to the type of the default; tuples are written comma-separated.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Mapping

from .saam import ConfigError

NETWORK_DEFAULTS: dict[str, Any] = {
    "alpha_a": 4,
    "base_channels": 24,
    "use_saam": True,
    "use_multiscale_skips": True,
    "init_std": 1e-3,
}

TRAIN_DEFAULTS: dict[str, Any] = {
    **NETWORK_DEFAULTS,
    "learning_rate": 1e-4,
    "beta1": 0.9,
    "beta2": 0.999,
    "adam_eps": 1e-20,
    "batch_size": 28,
    "max_steps": 800_000,
    "checkpoint_every": 5000,
    "log_every": 50,
    "lambda_feat": (0.2, 0.2, 0.1),
    "keep_last": 3,
    "in_views": 5,
    "shear_amounts": (-2, 2),
    "seed": 0,
}

AE_DEFAULTS: dict[str, Any] = {
    "steps": 2000,
    "batch_size": 8,
    "learning_rate": 3e-3,
    "beta1": 0.9,
    "beta2": 0.999,
    "init_std": 1e-3,
    "cosine_decay": True,
    "log_every": 50,
    "seed": 0,
}

# settings for the desk-scale overfit run: 50 synthetic pairs, batch 8, 2000 steps
OVERFIT_PRESET: dict[str, Any] = {"batch_size": 8, "max_steps": 2000, "checkpoint_every": 500}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def coerce(key: str, raw: Any, default: Any) -> Any:
    """Convert ``raw`` (usually a string) to the type of ``default``."""
    if not isinstance(raw, str):
        return tuple(raw) if isinstance(default, tuple) else raw
    text = raw.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(text)
        if isinstance(default, tuple):
            kind = type(default[0]) if default else float
            return tuple(kind(v) for v in text.replace(" ", "").split(",") if v)
        if isinstance(default, int):
            return int(float(text)) if "e" in text.lower() else int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot interpret {raw!r} as {type(default).__name__}") from exc
    return text


def read_config_file(path: str | Path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment, blank lines are ignored."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else ":" if ":" in line else None
        if sep is None:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split(sep, 1))
        values[key.replace("-", "_")] = value
    return values


def resolve(defaults: Mapping[str, Any], file_values: Mapping[str, Any] | None = None,
            overrides: Mapping[str, Any] | None = None) -> dict[str, Any]:
    """Merge defaults, file values and command-line overrides (``None`` overrides are ignored)."""
    merged = dict(defaults)
    for layer in (file_values or {}, {k: v for k, v in (overrides or {}).items() if v is not None}):
        for key, value in layer.items():
            if key not in defaults:
                raise ConfigError(f"unknown config key {key!r}; known keys: {', '.join(sorted(defaults))}")
            merged[key] = coerce(key, value, defaults[key])
    return merged


def format_value(value: Any) -> str:
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    return str(value)


def write_config_file(values: Mapping[str, Any], path: str | Path) -> Path:
    path = Path(path)
    path.write_text("".join(f"{k} = {format_value(v)}\n" for k, v in values.items()))
    return path


def subset(values: Mapping[str, Any], keys) -> dict[str, Any]:
    return {k: values[k] for k in keys if k in values}
