"""Photometric-loss training of a single ensemble member.

One trainer owns one field.  Every step samples random (view, pixel)
pairs uniformly with replacement, renders them with stratified sampling,
and applies a bias-corrected adaptive-moment update.  Everything is
deterministic in the config seed: the field initialization uses the
seed directly and the ray sampler uses a derived stream, so changing
the batch schedule never perturbs the initialization.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .field import VertexGradient, init_field
from .geometry import camera_ray_grid
from .render import _sample_grid, render_rays, render_rays_backward


@dataclass
class TrainConfig:
    steps: int = 2000
    rays_per_batch: int = 1024
    samples_per_ray: int = 64
    learning_rate: float = 1e-2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.rays_per_batch < 1:
            raise ValueError("rays_per_batch must be >= 1")
        if self.samples_per_ray < 1:
            raise ValueError("samples_per_ray must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        for name in ("adam_beta1", "adam_beta2"):
            beta = getattr(self, name)
            if not 0.0 <= beta < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")
        if not self.adam_eps > 0:
            raise ValueError("adam_eps must be positive")

    def with_seed(self, seed):
        return replace(self, seed=seed)


@dataclass
class OptimizerState:
    m_density: np.ndarray
    v_density: np.ndarray
    m_rgb: np.ndarray
    v_rgb: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, field):
        return cls(
            m_density=np.zeros_like(field.raw_density),
            v_density=np.zeros_like(field.raw_density),
            m_rgb=np.zeros_like(field.raw_rgb),
            v_rgb=np.zeros_like(field.raw_rgb),
        )


def photometric_loss(predicted, target):
    """Mean squared error over rays and channels."""
    predicted = np.asarray(predicted, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if predicted.shape != target.shape:
        raise ValueError("predicted and target shapes differ")
    if predicted.size == 0:
        raise ValueError("empty batch")
    return float(np.mean((predicted - target) ** 2))


def adam_step(field, grads: VertexGradient, state: OptimizerState, config):
    """Bias-corrected adaptive-moment update, applied in place."""
    state.step += 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    correction1 = 1.0 - b1**state.step
    correction2 = 1.0 - b2**state.step
    for theta, g, m, v in (
        (field.raw_density, grads.d_density, state.m_density, state.v_density),
        (field.raw_rgb, grads.d_rgb, state.m_rgb, state.v_rgb),
    ):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        theta -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)


def _flatten_dataset(dataset):
    """All (view, pixel) rays of the dataset as flat arrays."""
    dirs = np.concatenate(
        [camera_ray_grid(cam).reshape(-1, 3) for cam in dataset.cameras], axis=0
    )
    targets = np.concatenate(
        [img.pixels.reshape(-1, 3) for img in dataset.images], axis=0
    )
    view_of = np.concatenate(
        [
            np.full(cam.width * cam.height, k, dtype=np.int64)
            for k, cam in enumerate(dataset.cameras)
        ]
    )
    positions = np.stack([cam.position for cam in dataset.cameras], axis=0)
    return positions, view_of, dirs, targets


def train_member(
    dataset,
    resolution,
    bounds,
    config: TrainConfig,
    verbose=False,
    log_every=100,
    step_callback=None,
):
    """Train one field on the dataset; deterministic per config.seed.

    step_callback(step, loss, field), when given, runs after each update
    with the training-batch loss measured before that update.
    """
    if len(dataset) == 0:
        raise ValueError("dataset must contain at least one view")
    field = init_field(resolution, bounds, config.seed)
    state = OptimizerState.zeros(field)
    grads = VertexGradient.zeros(field)
    positions, view_of, dirs, targets = _flatten_dataset(dataset)
    n_total = dirs.shape[0]
    rng = np.random.default_rng([config.seed, 1])
    batch = config.rays_per_batch
    scale = 2.0 / (batch * 3.0)
    d_q = np.zeros(batch)
    for step in range(1, config.steps + 1):
        idx = rng.integers(0, n_total, size=batch)
        origins = positions[view_of[idx]]
        batch_dirs = dirs[idx]
        ts, deltas = _sample_grid(
            dataset.t_near, dataset.t_far, batch, config.samples_per_ray,
            "stratified", rng,
        )
        colors, _ = render_rays(field, origins, batch_dirs, ts, deltas)
        residual = colors - targets[idx]
        loss = float(np.mean(residual**2))
        grads.clear()
        render_rays_backward(
            field, origins, batch_dirs, ts, deltas,
            residual * scale, d_q, grads.d_density, grads.d_rgb,
        )
        adam_step(field, grads, state, config)
        if verbose and (step % log_every == 0 or step == config.steps):
            print(f"step={step} loss={loss:.6g}")
        if step_callback is not None:
            step_callback(step, loss, field)
    return field
