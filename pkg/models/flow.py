"""
Rectified flow: straight paths from noise (t = 0) to data (t = 1).

z_t = (1 - t) z0 + t z1 with target velocity u* = z1 - z0 and t ~ U(0, 1).
Sampling integrates the learned field with left-endpoint Euler steps.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import torch

from models.layout import Kind, SequenceLayout
from utils.config import SamplerConfig
from utils.errors import RejectedInputError, SamplerDivergenceError

VelocityFn = Callable[[np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class FlowPoint:
    z0: np.ndarray
    z1: np.ndarray
    t: float
    z_t: np.ndarray
    u_star: np.ndarray


def interpolate(z0: np.ndarray, z1: np.ndarray, t: float) -> np.ndarray:
    return (1.0 - t) * z0 + t * z1


def flow_point(z0: np.ndarray, z1: np.ndarray, t: float) -> FlowPoint:
    z0 = np.asarray(z0, dtype=np.float64)
    z1 = np.asarray(z1, dtype=np.float64)
    return FlowPoint(z0, z1, float(t), interpolate(z0, z1, t), z1 - z0)


def make_flow_point(z1: np.ndarray, rng: np.random.Generator) -> FlowPoint:
    """
    Draw noise and a time for one data latent

    Args:
        z1: Data endpoint
        rng: Random source for z0 ~ N(0, I) and t ~ U(0, 1)

    Returns:
        FlowPoint satisfying the path invariants by construction
    """
    z1 = np.asarray(z1, dtype=np.float64)
    if not np.all(np.isfinite(z1)):
        raise RejectedInputError('Data latent must be finite')
    z0 = rng.standard_normal(z1.shape)
    t = float(rng.random())
    return flow_point(z0, z1, t)


def euler_integrate(velocity_fn: VelocityFn, z_init: np.ndarray, steps: int,
                    stage: Optional[str] = None) -> np.ndarray:
    """
    Left-endpoint Euler from t = 0 to t = 1

    Args:
        velocity_fn: u(z, t)
        z_init: Starting latent
        steps: Number of uniform steps, at least 1
        stage: Tag carried by a divergence error

    Returns:
        Latent at t = 1
    """
    if steps < 1:
        raise RejectedInputError('Euler sampling needs at least one step')
    z = np.asarray(z_init, dtype=np.float64).copy()
    for step in range(steps):
        t = step / steps
        z = z + np.asarray(velocity_fn(z, t), dtype=np.float64) / steps
        if not np.all(np.isfinite(z)):
            raise SamplerDivergenceError(step, stage)
    return z


def euler_sample(model: torch.nn.Module, layout: SequenceLayout, cfg: SamplerConfig,
                 rng: np.random.Generator, stage: Optional[str] = None) -> np.ndarray:
    """
    Fill the final image slot of a layout by integrating the model's field

    Args:
        model: Two-expert transformer
        layout: Context ending at the image slot to fill (modified in place)
        cfg: Step count
        rng: Random source for the starting noise
        stage: Tag carried by a divergence error

    Returns:
        Sampled latent
    """
    if not layout.kinds or layout.kinds[-1] != Kind.IMAGE:
        raise RejectedInputError('Layout must end at an image slot to be filled')
    target = layout.images[layout.image_ids[-1]]
    z_init = rng.standard_normal(target.latent.shape)

    def velocity(z: np.ndarray, t: float) -> np.ndarray:
        target.latent = z
        target.t = t
        _, u = model(layout)
        return u[layout.image_ids[-1]].detach().cpu().double().numpy()

    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            z = euler_integrate(velocity, z_init, cfg.steps, stage)
    finally:
        model.train(was_training)
    # The filled image now conditions whatever follows it
    target.latent = z
    target.t = 1.0
    return z
