"""Masked latent blending loop over a pluggable denoiser.

The generation loop alternates denoiser steps with forward diffusion of a
constraint image and blends the two per latent cell. Cells with blend
weight 1 follow the constraint exactly, weight 0 cells follow the denoiser,
and intermediate weights mix both trajectories. The built-in denoisers are
test oracles; a real diffusion model plugs in through the same interface.
"""

from dataclasses import dataclass

import numpy as np

from .remap import GENERATE, KEEP, REFINE


class DiffusionError(RuntimeError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step signal and noise scales, indexed t = 0 .. n_steps.

    Variance preserving: signal[t]^2 + noise[t]^2 = 1, with signal[0] = 1
    (clean) and signal[n_steps] = 0 (pure noise).
    """

    signal: np.ndarray
    noise: np.ndarray

    def __post_init__(self):
        if self.signal.ndim != 1 or self.signal.shape != self.noise.shape:
            raise DiffusionError("schedule arrays must be 1-d and equal length")

    @property
    def n_steps(self) -> int:
        return len(self.signal) - 1

    @classmethod
    def linear(cls, n_steps: int = 50) -> "NoiseSchedule":
        """Schedule with signal^2 decreasing linearly from 1 to 0."""
        if n_steps < 1:
            raise DiffusionError("n_steps must be >= 1")
        t = np.arange(n_steps + 1, dtype=np.float64) / n_steps
        return cls(np.sqrt(1.0 - t), np.sqrt(t))


def _step_noise(shape, seed: int, t: int) -> np.ndarray:
    # one independent stream per (seed, t) so any step is reproducible alone
    return np.random.default_rng([seed, t]).standard_normal(shape)


def forward_diffuse(x0: np.ndarray, t: int, schedule: NoiseSchedule,
                    seed: int) -> np.ndarray:
    """Inject noise into a clean latent up to step t.

    Args:
      x0: clean latent, any shape.
      t: diffusion step in [0, schedule.n_steps].
      schedule: signal/noise scales.
      seed: base seed; the noise drawn depends only on (seed, t, shape).

    Returns:
      signal[t] * x0 + noise[t] * eps.
    """
    if not 0 <= t <= schedule.n_steps:
        raise DiffusionError(f"step {t} outside schedule [0, {schedule.n_steps}]")
    x0 = np.asarray(x0, dtype=np.float64)
    return schedule.signal[t] * x0 + schedule.noise[t] * _step_noise(x0.shape, seed, t)


def downsample_mask(mask, zones=None, factor: int = 1,
                    w_refine: float = 0.5) -> np.ndarray:
    """Reduce a pixel mask (and optional zone map) to latent-cell weights.

    Each output cell is the mean over a factor x factor block of per-pixel
    weights: keep 1, refine w_refine, generate 0. Without a zone map the
    weight is simply 1 - mask.

    Args:
      mask: (H, W) array, nonzero where pixels must be generated.
      zones: optional (H, W) zone map overriding the binary mask.
      factor: integer downsampling factor; must divide H and W.

    Returns:
      (H/factor, W/factor) float64 weights in [0, 1].
    """
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise DiffusionError("mask must be 2-d")
    h, w = mask.shape
    if factor < 1 or h % factor or w % factor:
        raise DiffusionError(f"factor {factor} must divide mask shape {mask.shape}")
    if zones is None:
        weights = 1.0 - (mask != 0)
    else:
        zones = np.asarray(zones)
        if zones.shape != mask.shape:
            raise DiffusionError("zones shape must match mask")
        lut = np.zeros(3)
        lut[KEEP] = 1.0
        lut[REFINE] = w_refine
        lut[GENERATE] = 0.0
        weights = lut[zones]
    weights = weights.astype(np.float64)
    if factor == 1:
        return weights
    return weights.reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))


class IdentityCodec:
    """Mixin for denoisers whose latent space is pixel space (factor 1)."""

    latent_factor = 1

    def encode(self, image: np.ndarray) -> np.ndarray:
        return np.asarray(image, dtype=np.float64)

    def decode(self, latent: np.ndarray) -> np.ndarray:
        return np.asarray(latent, dtype=np.float64)


class OracleDenoiser(IdentityCodec):
    """Denoiser that returns the forward-diffused target at every step.

    Makes the generation loop converge exactly to a chosen target image in
    free regions; used to test the blending recurrence.
    """

    def __init__(self, target: np.ndarray, schedule: NoiseSchedule):
        self.target = np.asarray(target, dtype=np.float64)
        self.schedule = schedule

    def step(self, latent: np.ndarray, t: int, conditioning: dict) -> np.ndarray:
        return forward_diffuse(self.target, t, self.schedule,
                               conditioning["seed"])


class ContractiveDenoiser(IdentityCodec):
    """Toy denoiser contracting toward a target: step = (1-rate) y + rate target."""

    def __init__(self, target: np.ndarray, rate: float = 0.5):
        self.target = np.asarray(target, dtype=np.float64)
        self.rate = rate

    def step(self, latent: np.ndarray, t: int, conditioning: dict) -> np.ndarray:
        return (1.0 - self.rate) * latent + self.rate * self.target


def masked_generate(denoiser, constraint: np.ndarray, mask: np.ndarray,
                    conditioning: dict | None = None,
                    schedule: NoiseSchedule | None = None,
                    seed: int = 0) -> np.ndarray:
    """Run the constrained generation loop.

    Starting from pure noise, each step denoises the current latent, forward
    diffuses the constraint to the same step, and composes the two per cell:
    y_blend = (1 - M) * denoised + M * diffused_constraint. At the final step
    the constraint route is exactly the clean constraint, so weight-1 cells
    reproduce it bit for bit.

    Args:
      denoiser: plugin with step(latent, t, conditioning), encode, decode.
      constraint: image to hold fixed where mask weight is 1.
      mask: per-latent-cell weights in [0, 1] (see downsample_mask).
      conditioning: extra step context; 'seed' is filled in if absent.
      schedule: defaults to NoiseSchedule.linear(50).
      seed: drives every noise draw in the loop.

    Returns:
      decoded image from the final blended latent.
    """
    if schedule is None:
        schedule = NoiseSchedule.linear(50)
    conditioning = dict(conditioning or {})
    conditioning.setdefault("seed", seed)
    x0 = denoiser.encode(constraint)
    mask = np.asarray(mask, dtype=np.float64)
    if np.any(mask < 0) or np.any(mask > 1):
        raise DiffusionError("mask weights must lie in [0, 1]")
    if mask.shape != x0.shape[:mask.ndim]:
        raise DiffusionError(f"mask shape {mask.shape} does not match latent "
                             f"{x0.shape}")
    m = mask.reshape(mask.shape + (1,) * (x0.ndim - mask.ndim))

    n = schedule.n_steps
    blended = forward_diffuse(x0, n, schedule, seed)
    for t in range(n - 1, -1, -1):
        try:
            denoised = denoiser.step(blended, t, conditioning)
        except Exception as exc:
            raise DiffusionError(f"denoiser failed at step {t}: {exc}") from exc
        x_t = forward_diffuse(x0, t, schedule, seed)
        blended = (1.0 - m) * denoised + m * x_t
    return denoiser.decode(blended)
