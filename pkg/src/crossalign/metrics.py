"""Fusion quality metrics on (infrared, visible, fused) grayscale triples.

Inputs are gray rasters on the [0, 1] scale. Intensity-dependent metrics
(SD, SF, AG, VIF, SSIM) are evaluated on the 0-255 code scale so the
numbers are comparable with published fusion benchmarks.
"""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass, fields

import numpy as np
from scipy import ndimage

from crossalign import imgio
from crossalign.errors import ValidationError

METRIC_NAMES = ("EN", "MI", "SD", "SF", "AG", "VIF", "SCD", "Qabf", "SSIM")
AGGREGATION_MODES = ("sum", "mean")

# Xydeas-Petrovic sigmoid constants
QABF_GAMMA_G, QABF_KAPPA_G, QABF_SIGMA_G = 0.9994, -15.0, 0.5
QABF_GAMMA_A, QABF_KAPPA_A, QABF_SIGMA_A = 0.9879, -22.0, 0.8

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = (0.01 * 255) ** 2
SSIM_C2 = (0.03 * 255) ** 2

VIF_SIGMA_NSQ = 2.0
VIF_SCALES = 4
VIF_EPS = 1e-10


@dataclass(frozen=True)
class FusionTriple:
    ir: np.ndarray
    vis: np.ndarray
    fused: np.ndarray

    def __post_init__(self):
        for name in ("ir", "vis", "fused"):
            object.__setattr__(self, name, imgio.check_gray(getattr(self, name), name))
        imgio.check_same_shape(self.ir, self.vis, self.fused)


@dataclass(frozen=True)
class MetricsConfig:
    mi_mode: str = "sum"
    vif_mode: str = "sum"
    ssim_mode: str = "mean"

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) not in AGGREGATION_MODES:
                raise ValidationError(f"{f.name} must be one of {AGGREGATION_MODES}")


@dataclass(frozen=True)
class MetricReport:
    en: float
    mi: float
    sd: float
    sf: float
    ag: float
    vif: float
    scd: float
    qabf: float
    ssim: float

    def values(self) -> tuple[float, ...]:
        return astuple(self)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(METRIC_NAMES, self.values()))


def _aggregate(a: float, b: float, mode: str) -> float:
    return a + b if mode == "sum" else 0.5 * (a + b)


def _scaled(image: np.ndarray) -> np.ndarray:
    return imgio.check_gray(image) * 255.0


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation of the flattened arrays; 0 if either is constant."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValidationError(f"dimension mismatch: {a.shape} vs {b.shape}")
    da = a - a.mean()
    db = b - b.mean()
    denom = math.sqrt(float(np.dot(da, da)) * float(np.dot(db, db)))
    if denom == 0.0:
        return 0.0
    return float(np.clip(np.dot(da, db) / denom, -1.0, 1.0))


def sobel(image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Horizontal and vertical Sobel responses with reflect-101 borders."""
    image = np.asarray(image, dtype=np.float64)
    gx = ndimage.sobel(image, axis=1, mode="mirror")
    gy = ndimage.sobel(image, axis=0, mode="mirror")
    return gx, gy


def entropy(image: np.ndarray) -> float:
    counts = imgio.histogram(image)
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log2(p))) + 0.0


def _joint_histogram(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    index = imgio.codes(a).ravel() * 256 + imgio.codes(b).ravel()
    return np.bincount(index, minlength=256 * 256).reshape(256, 256)


def mutual_information(a: np.ndarray, b: np.ndarray) -> float:
    a = imgio.check_gray(a, "a")
    b = imgio.check_gray(b, "b")
    imgio.check_same_shape(a, b)
    joint = _joint_histogram(a, b).astype(np.float64)
    pxy = joint / joint.sum()
    px = pxy.sum(axis=1)
    py = pxy.sum(axis=0)
    nz = pxy > 0
    outer = np.outer(px, py)
    mi = float(np.sum(pxy[nz] * np.log2(pxy[nz] / outer[nz])))
    return max(mi, 0.0)


def fusion_mi(triple: FusionTriple, mode: str = "sum") -> float:
    return _aggregate(
        mutual_information(triple.fused, triple.ir),
        mutual_information(triple.fused, triple.vis),
        mode,
    )


def std_dev(image: np.ndarray) -> float:
    return float(np.std(_scaled(image)))


def _check_min_size(image: np.ndarray, minimum: int, what: str) -> None:
    if min(image.shape) < minimum:
        raise ValidationError(f"{what} needs an image of at least {minimum}x{minimum}, got {image.shape}")


def spatial_frequency(image: np.ndarray) -> float:
    image = _scaled(image)
    _check_min_size(image, 2, "spatial frequency")
    rf = math.sqrt(float(np.mean(np.diff(image, axis=1) ** 2)))
    cf = math.sqrt(float(np.mean(np.diff(image, axis=0) ** 2)))
    return math.hypot(rf, cf)


def average_gradient(image: np.ndarray) -> float:
    """Mean of sqrt((dx^2 + dy^2) / 2) over the (H-1) x (W-1) pixel cells.

    dx and dy are the forward differences of each 2x2 cell, averaged over the
    cell's two rows (resp. columns), so the value is unchanged when the image
    is rotated by 180 degrees.
    """
    image = _scaled(image)
    _check_min_size(image, 2, "average gradient")
    horiz = np.diff(image, axis=1)
    vert = np.diff(image, axis=0)
    dx = 0.5 * (horiz[:-1, :] + horiz[1:, :])
    dy = 0.5 * (vert[:, :-1] + vert[:, 1:])
    return float(np.mean(np.sqrt((dx ** 2 + dy ** 2) / 2.0)))


def _gaussian_window(sigma: float, radius: int) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()


def _filter(image: np.ndarray, window: np.ndarray) -> np.ndarray:
    out = ndimage.correlate1d(image, window, axis=0, mode="mirror")
    return ndimage.correlate1d(out, window, axis=1, mode="mirror")


def vif_single(reference: np.ndarray, distorted: np.ndarray) -> float:
    """Pixel-domain multiscale VIF of ``distorted`` against ``reference``.

    Both inputs on the 0-255 scale. Four dyadic scales with Gaussian windows
    of sigma (2**(5-s) + 1) / 5, same-size reflect-101 filtering.
    """
    ref = np.asarray(reference, dtype=np.float64)
    dist = np.asarray(distorted, dtype=np.float64)
    num = 0.0
    den = 0.0
    for scale in range(1, VIF_SCALES + 1):
        sigma = (2 ** (VIF_SCALES + 1 - scale) + 1) / 5.0
        win = _gaussian_window(sigma, math.ceil(3 * sigma))
        if scale > 1:
            ref = _filter(ref, win)[::2, ::2]
            dist = _filter(dist, win)[::2, ::2]
        mu1 = _filter(ref, win)
        mu2 = _filter(dist, win)
        sigma1_sq = np.maximum(_filter(ref * ref, win) - mu1 * mu1, 0.0)
        sigma2_sq = np.maximum(_filter(dist * dist, win) - mu2 * mu2, 0.0)
        sigma12 = _filter(ref * dist, win) - mu1 * mu2

        g = sigma12 / (sigma1_sq + VIF_EPS)
        sv_sq = sigma2_sq - g * sigma12

        flat_ref = sigma1_sq < VIF_EPS
        g[flat_ref] = 0.0
        sv_sq[flat_ref] = sigma2_sq[flat_ref]
        sigma1_sq[flat_ref] = 0.0

        flat_dist = sigma2_sq < VIF_EPS
        g[flat_dist] = 0.0
        sv_sq[flat_dist] = 0.0

        negative = g < 0
        sv_sq[negative] = sigma2_sq[negative]
        g[negative] = 0.0
        sv_sq = np.maximum(sv_sq, VIF_EPS)

        num += float(np.sum(np.log10(1.0 + g * g * sigma1_sq / (sv_sq + VIF_SIGMA_NSQ))))
        den += float(np.sum(np.log10(1.0 + sigma1_sq / VIF_SIGMA_NSQ)))
    if den <= 0.0:
        return 0.0
    return num / den


def vif(triple: FusionTriple, mode: str = "sum") -> float:
    _check_min_size(triple.fused, 2 ** (VIF_SCALES + 1), "VIF")
    fused = _scaled(triple.fused)
    return _aggregate(
        vif_single(_scaled(triple.ir), fused),
        vif_single(_scaled(triple.vis), fused),
        mode,
    )


def scd(triple: FusionTriple) -> float:
    """corr(F - B, A) + corr(F - A, B)."""
    a, b, f = triple.ir, triple.vis, triple.fused
    return pearson(f - b, a) + pearson(f - a, b)


def _qabf_parts(image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gx, gy = sobel(image)
    strength = np.hypot(gx, gy)
    with np.errstate(divide="ignore", invalid="ignore"):
        orientation = np.where(gx == 0, math.pi / 2, np.arctan(gy / np.where(gx == 0, 1.0, gx)))
    return strength, orientation


def _edge_preservation(g_src, a_src, g_f, a_f) -> np.ndarray:
    hi = np.maximum(g_src, g_f)
    lo = np.minimum(g_src, g_f)
    with np.errstate(divide="ignore", invalid="ignore"):
        strength = np.where(hi > 0, lo / np.where(hi > 0, hi, 1.0), 1.0)
    agreement = 1.0 - np.abs(a_src - a_f) * 2.0 / math.pi
    q_g = QABF_GAMMA_G / (1.0 + np.exp(QABF_KAPPA_G * (strength - QABF_SIGMA_G)))
    q_a = QABF_GAMMA_A / (1.0 + np.exp(QABF_KAPPA_A * (agreement - QABF_SIGMA_A)))
    return q_g * q_a


def qabf_ceiling() -> float:
    """Qabf of a perfect fusion (relative strength 1, orientation agreement 1)."""
    q_g = QABF_GAMMA_G / (1.0 + math.exp(QABF_KAPPA_G * (1.0 - QABF_SIGMA_G)))
    q_a = QABF_GAMMA_A / (1.0 + math.exp(QABF_KAPPA_A * (1.0 - QABF_SIGMA_A)))
    return q_g * q_a


def qabf(triple: FusionTriple) -> float:
    _check_min_size(triple.fused, 3, "Qabf")
    g_a, a_a = _qabf_parts(_scaled(triple.ir))
    g_b, a_b = _qabf_parts(_scaled(triple.vis))
    g_f, a_f = _qabf_parts(_scaled(triple.fused))
    q_af = _edge_preservation(g_a, a_a, g_f, a_f)
    q_bf = _edge_preservation(g_b, a_b, g_f, a_f)
    weight = float(np.sum(g_a + g_b))
    if weight == 0.0:
        return 0.0
    return float(np.sum(q_af * g_a + q_bf * g_b) / weight)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Single-scale SSIM, 11x11 Gaussian window (sigma 1.5), valid region mean."""
    x = _scaled(a)
    y = _scaled(b)
    imgio.check_same_shape(x, y)
    _check_min_size(x, SSIM_WINDOW, "SSIM")
    win = _gaussian_window(SSIM_SIGMA, SSIM_WINDOW // 2)
    mu_x = _filter(x, win)
    mu_y = _filter(y, win)
    sxx = _filter(x * x, win) - mu_x * mu_x
    syy = _filter(y * y, win) - mu_y * mu_y
    sxy = _filter(x * y, win) - mu_x * mu_y
    smap = ((2 * mu_x * mu_y + SSIM_C1) * (2 * sxy + SSIM_C2)) / (
        (mu_x ** 2 + mu_y ** 2 + SSIM_C1) * (sxx + syy + SSIM_C2)
    )
    r = SSIM_WINDOW // 2
    return float(np.mean(smap[r:-r, r:-r]))


def fusion_ssim(triple: FusionTriple, mode: str = "mean") -> float:
    return _aggregate(ssim(triple.fused, triple.ir), ssim(triple.fused, triple.vis), mode)


def evaluate_all(triple: FusionTriple, config: MetricsConfig | None = None) -> MetricReport:
    config = config or MetricsConfig()
    return MetricReport(
        en=entropy(triple.fused),
        mi=fusion_mi(triple, config.mi_mode),
        sd=std_dev(triple.fused),
        sf=spatial_frequency(triple.fused),
        ag=average_gradient(triple.fused),
        vif=vif(triple, config.vif_mode),
        scd=scd(triple),
        qabf=qabf(triple),
        ssim=fusion_ssim(triple, config.ssim_mode),
    )
