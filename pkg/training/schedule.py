"""Learning-rate schedule: linear warmup, then cosine decay to lr_min"""

import math

from utils.config import TrainConfig


def lr_at(step: int, cfg: TrainConfig) -> float:
    """
    Learning rate for a step

    Args:
        step: Zero-based optimizer step
        cfg: Schedule settings

    Returns:
        0 at step 0 of a warmup, lr_max at the end of warmup, lr_min at total_iters
    """
    if cfg.warmup_iters > 0 and step < cfg.warmup_iters:
        return cfg.lr_max * step / cfg.warmup_iters
    remaining = max(cfg.total_iters - cfg.warmup_iters, 1)
    progress = min(max((step - cfg.warmup_iters) / remaining, 0.0), 1.0)
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + math.cos(math.pi * progress))
