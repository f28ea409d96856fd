"""Weak (random crop) / aggressive (Gaussian blur) views of a fused image and
the cosine-scheduled self-supervised consistency loss."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from crossalign import imgio
from crossalign.errors import ValidationError


@dataclass(frozen=True)
class AugmentConfig:
    crop_size: int = 32
    blur_sigma: float = 1.0
    kernel_radius: int | None = None  # None -> ceil(3 * sigma)
    seed: int = 0

    def __post_init__(self):
        if self.crop_size < 1:
            raise ValidationError(f"crop_size must be >= 1, got {self.crop_size}")
        if not self.blur_sigma > 0:
            raise ValidationError(f"blur_sigma must be > 0, got {self.blur_sigma}")
        if self.kernel_radius is not None and self.kernel_radius < 1:
            raise ValidationError(f"kernel_radius must be >= 1, got {self.kernel_radius}")

    @property
    def radius(self) -> int:
        if self.kernel_radius is not None:
            return self.kernel_radius
        return max(1, math.ceil(3.0 * self.blur_sigma))


@dataclass(frozen=True)
class SslSchedule:
    theta_init: float = 0.1
    total_steps: int = 1

    def __post_init__(self):
        if not self.theta_init >= 0:
            raise ValidationError(f"theta_init must be >= 0, got {self.theta_init}")
        if self.total_steps < 1:
            raise ValidationError(f"total_steps must be >= 1, got {self.total_steps}")


@dataclass(frozen=True)
class AugmentedViews:
    weak: np.ndarray
    aggressive: np.ndarray
    crop_rect: tuple[int, int, int, int]
    blur_sigma: float


def gaussian_kernel1d(sigma: float, radius: int) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (x / sigma) ** 2)
    return kernel / kernel.sum()


def gaussian_blur(image: np.ndarray, sigma: float, radius: int) -> np.ndarray:
    """Separable, unit-sum Gaussian with reflect-101 borders."""
    image = imgio.check_gray(image)
    kernel = gaussian_kernel1d(sigma, radius)
    # scipy's "mirror" is reflect-101 (d c b | a b c d | c b a)
    out = ndimage.correlate1d(image, kernel, axis=0, mode="mirror")
    out = ndimage.correlate1d(out, kernel, axis=1, mode="mirror")
    return np.clip(out, image.min(), image.max())


def weak_augment(fused: np.ndarray, config: AugmentConfig, seed: int | None = None):
    """Random ``crop_size`` square crop; returns ``(view, (x, y, w, h))``."""
    fused = imgio.check_gray(fused, "fused")
    height, width = fused.shape
    size = config.crop_size
    if size > min(height, width):
        raise ValidationError(f"crop_size {size} larger than {width}x{height} image")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    x = int(rng.integers(0, width - size + 1))
    y = int(rng.integers(0, height - size + 1))
    rect = (x, y, size, size)
    return imgio.crop(fused, rect), rect


def aggressive_augment(weak: np.ndarray, config: AugmentConfig) -> np.ndarray:
    return gaussian_blur(weak, config.blur_sigma, config.radius)


def theta_at(schedule: SslSchedule, m: int) -> float:
    """Cosine-annealed SSL weight: theta_init at step 0 down to 0 at step M."""
    if not 0 <= m <= schedule.total_steps:
        raise ValidationError(f"step {m} outside [0, {schedule.total_steps}]")
    if m == schedule.total_steps:
        return 0.0
    return schedule.theta_init * (math.cos(math.pi * m / schedule.total_steps) + 1.0) / 2.0


def ssl_loss(weak: np.ndarray, aggressive: np.ndarray, theta: float) -> float:
    """``theta`` times the per-pixel mean squared difference of the views."""
    weak = imgio.check_gray(weak, "weak")
    aggressive = imgio.check_gray(aggressive, "aggressive")
    imgio.check_same_shape(weak, aggressive)
    return float(theta * np.mean((weak - aggressive) ** 2))


def generate_views(
    fused: np.ndarray,
    config: AugmentConfig,
    schedule: SslSchedule,
    m: int,
    seed: int | None = None,
) -> tuple[AugmentedViews, float]:
    weak, rect = weak_augment(fused, config, seed)
    aggressive = aggressive_augment(weak, config)
    loss = ssl_loss(weak, aggressive, theta_at(schedule, m))
    return AugmentedViews(weak, aggressive, rect, config.blur_sigma), loss
