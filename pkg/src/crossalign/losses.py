"""Forward evaluators for the two-stage fusion training objectives.

Nothing here computes gradients; the functions score images and feature maps
produced by an external training pipeline so its losses can be checked.
All image terms work on the [0, 1] pixel scale.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from crossalign import imgio, metrics
from crossalign.augment import AugmentedViews, ssl_loss
from crossalign.errors import ImageIOError, ValidationError

FMAP_MAGIC = b"FMAP"
_FMAP_HEADER = struct.Struct("<4sIII")
GRADIENT_OPERATORS = ("sobel", "forward-diff")


@dataclass(frozen=True)
class LossWeights:
    alpha1: float = 2.0
    alpha2: float = 2.0
    alpha3: float = 1.0
    alpha4: float = 1.0
    lam: float = 1.0
    mu: float = 10.0
    zeta: float = 1.01

    def __post_init__(self):
        for name in ("alpha1", "alpha2", "alpha3", "alpha4", "lam", "mu"):
            if not getattr(self, name) >= 0:
                raise ValidationError(f"{name} must be non-negative")
        if not self.zeta > 1:
            raise ValidationError(f"zeta must be > 1, got {self.zeta}")


@dataclass
class LossBreakdown:
    terms: dict[str, float]
    weights: dict[str, float]
    total: float = field(init=False)

    def __post_init__(self):
        self.total = self.recompute()

    def recompute(self) -> float:
        return float(sum(self.weights[name] * value for name, value in self.terms.items()))

    def contribution(self, name: str) -> float:
        return self.weights[name] * self.terms[name]

    def to_json(self) -> dict:
        return {"terms": dict(self.terms), "weights": dict(self.weights), "total": self.total}


def read_feature_map(path: str | Path) -> np.ndarray:
    """Read a ``(C, H, W)`` float32 feature map from the FMAP container."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ImageIOError(f"{path}: cannot read feature map ({exc})") from exc
    if len(raw) < _FMAP_HEADER.size:
        raise ValidationError(f"{path}: truncated FMAP header")
    magic, c, h, w = _FMAP_HEADER.unpack_from(raw)
    if magic != FMAP_MAGIC:
        raise ValidationError(f"{path}: bad magic {magic!r}")
    if min(c, h, w) < 1:
        raise ValidationError(f"{path}: invalid shape {(c, h, w)}")
    expected = _FMAP_HEADER.size + 4 * c * h * w
    if len(raw) != expected:
        raise ValidationError(f"{path}: expected {expected} bytes for shape {(c, h, w)}, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=_FMAP_HEADER.size).astype(np.float64)
    if not np.all(np.isfinite(data)):
        raise ValidationError(f"{path}: non-finite values")
    return data.reshape(c, h, w)


def write_feature_map(array: np.ndarray, path: str | Path) -> None:
    array = np.asarray(array)
    if array.ndim == 2:
        array = array[None]
    if array.ndim != 3:
        raise ValidationError(f"feature map must be (C, H, W), got shape {array.shape}")
    c, h, w = array.shape
    Path(path).write_bytes(_FMAP_HEADER.pack(FMAP_MAGIC, c, h, w) + array.astype("<f4").tobytes())


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a = imgio.check_gray(a, "a")
    b = imgio.check_gray(b, "b")
    imgio.check_same_shape(a, b)
    return float(np.mean((a - b) ** 2))


def recon_loss(original: np.ndarray, reconstructed: np.ndarray, lam: float) -> float:
    """MSE plus ``lam`` times the SSIM deficit."""
    return mse(original, reconstructed) + lam * (1.0 - metrics.ssim(original, reconstructed))


def pearson_corr(a: np.ndarray, b: np.ndarray) -> float:
    """Correlation over all C*H*W entries jointly (not averaged per channel)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"feature map shapes differ: {a.shape} vs {b.shape}")
    return metrics.pearson(a, b)


def decomp_loss(hf_ir, hf_vis, lf_ir, lf_vis, zeta: float = 1.01) -> float:
    if not zeta > 1:
        raise ValidationError(f"zeta must be > 1, got {zeta}")
    return pearson_corr(hf_ir, hf_vis) ** 2 / (pearson_corr(lf_ir, lf_vis) + zeta)


def gradient_magnitude(image: np.ndarray, operator: str = "sobel") -> np.ndarray:
    if operator == "sobel":
        gx, gy = metrics.sobel(image)
    elif operator == "forward-diff":
        image = np.asarray(image, dtype=np.float64)
        gx = np.diff(image, axis=1, append=image[:, -1:])
        gy = np.diff(image, axis=0, append=image[-1:, :])
    else:
        raise ValidationError(f"unknown gradient operator {operator!r}")
    return np.hypot(gx, gy)


def sim_loss(ir, vis, fused, mu: float = 10.0, operator: str = "sobel") -> float:
    """Per-pixel L1 to the source maximum, plus ``mu`` times the same on gradients."""
    ir = imgio.check_gray(ir, "ir")
    vis = imgio.check_gray(vis, "vis")
    fused = imgio.check_gray(fused, "fused")
    imgio.check_same_shape(ir, vis, fused)
    intensity = float(np.mean(np.abs(fused - np.maximum(ir, vis))))
    grad_target = np.maximum(gradient_magnitude(ir, operator), gradient_magnitude(vis, operator))
    gradient = float(np.mean(np.abs(gradient_magnitude(fused, operator) - grad_target)))
    return intensity + mu * gradient


def total_recon_loss(
    ir_pair: tuple[np.ndarray, np.ndarray],
    vis_pair: tuple[np.ndarray, np.ndarray],
    features: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray],
    weights: LossWeights | None = None,
) -> LossBreakdown:
    """First-stage objective; ``features`` is (hf_ir, hf_vis, lf_ir, lf_vis)."""
    weights = weights or LossWeights()
    terms = {
        "ir_rec": recon_loss(ir_pair[0], ir_pair[1], weights.lam),
        "vis_rec": recon_loss(vis_pair[0], vis_pair[1], weights.lam),
        "dec": decomp_loss(*features, zeta=weights.zeta),
    }
    return LossBreakdown(terms, {"ir_rec": 1.0, "vis_rec": 1.0, "dec": weights.alpha1})


def total_fusion_loss(
    triple: metrics.FusionTriple,
    features: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray],
    views: AugmentedViews,
    theta: float,
    weights: LossWeights | None = None,
    operator: str = "sobel",
) -> LossBreakdown:
    weights = weights or LossWeights()
    terms = {
        "dec": decomp_loss(*features, zeta=weights.zeta),
        "sim": sim_loss(triple.ir, triple.vis, triple.fused, weights.mu, operator),
        "ssl": ssl_loss(views.weak, views.aggressive, theta),
    }
    return LossBreakdown(terms, {"dec": weights.alpha2, "sim": weights.alpha3, "ssl": weights.alpha4})
