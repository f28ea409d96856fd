"""Top-K selective RGB channel alignment of an external dataset to a target.

Both datasets are cut into patches; patches of the external set are ranked by
the summed per-channel distance of their mean intensity to the target
mean, the K closest are kept and a single per-channel gamma is fitted on
them and applied (``v -> v ** (1 / gamma)``).
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from crossalign import imgio
from crossalign.errors import ValidationError
from crossalign.imgio import CHANNELS, Patch

GAMMA_MODES = ("closed_form", "mean_exact")
GAMMA_BRACKET = (1.0 / 64.0, 64.0)
MEAN_TOLERANCE = 1e-6

REPORT_HEADER = [
    "channel",
    "target_mean",
    "external_mean_before",
    "external_mean_after",
    "gamma",
    "abs_diff_before",
    "abs_diff_after",
]


@dataclass(frozen=True)
class ChannelStats:
    mean_r: float
    mean_g: float
    mean_b: float

    def __post_init__(self):
        for value in self.as_array():
            if not 0.0 <= value <= 255.0:
                raise ValidationError(f"channel mean {value} outside [0, 255]")

    def as_array(self) -> np.ndarray:
        return np.array([self.mean_r, self.mean_g, self.mean_b])

    @classmethod
    def from_array(cls, values) -> "ChannelStats":
        r, g, b = (float(v) for v in values)
        return cls(r, g, b)


@dataclass(frozen=True)
class GammaTriple:
    gamma_r: float = 1.0
    gamma_g: float = 1.0
    gamma_b: float = 1.0

    def __post_init__(self):
        for value in self.as_array():
            if not (value > 0.0 and math.isfinite(value)):
                raise ValidationError(f"gamma must be positive and finite, got {value}")

    def as_array(self) -> np.ndarray:
        return np.array([self.gamma_r, self.gamma_g, self.gamma_b])


@dataclass(frozen=True)
class RankedPatch:
    patch: Patch
    diff: float


@dataclass(frozen=True)
class AlignmentConfig:
    k: int
    patch_size: int = 64
    gamma_mode: str = "closed_form"
    seed: int = 0
    crop_mode: str = "grid"
    count: int = 16  # patches per image in random crop mode

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError(f"k must be a positive integer, got {self.k}")
        if self.patch_size < 8:
            raise ValidationError(f"patch_size must be >= 8, got {self.patch_size}")
        if self.gamma_mode not in GAMMA_MODES:
            raise ValidationError(f"gamma_mode must be one of {GAMMA_MODES}, got {self.gamma_mode!r}")
        if self.crop_mode not in ("grid", "random"):
            raise ValidationError(f"crop_mode must be grid or random, got {self.crop_mode!r}")


@dataclass
class AlignmentReport:
    target: ChannelStats
    before: ChannelStats
    after: ChannelStats
    gammas: GammaTriple
    config: AlignmentConfig
    selected: list[RankedPatch] = field(default_factory=list)
    n_target_patches: int = 0
    n_external_patches: int = 0

    @property
    def abs_diff_before(self) -> np.ndarray:
        return np.abs(self.before.as_array() - self.target.as_array())

    @property
    def abs_diff_after(self) -> np.ndarray:
        return np.abs(self.after.as_array() - self.target.as_array())

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_HEADER)
        columns = zip(
            CHANNELS,
            self.target.as_array(),
            self.before.as_array(),
            self.after.as_array(),
            self.gammas.as_array(),
            self.abs_diff_before,
            self.abs_diff_after,
        )
        for channel, *values in columns:
            writer.writerow([channel] + [f"{v:.6f}" for v in values])
        return buf.getvalue()

    def to_json(self) -> dict:
        return {
            "config": asdict(self.config),
            "n_target_patches": self.n_target_patches,
            "n_external_patches": self.n_external_patches,
            "target_stats": asdict(self.target),
            "external_stats_before": asdict(self.before),
            "external_stats_after": asdict(self.after),
            "gammas": asdict(self.gammas),
            "patches": [
                {
                    "source_id": r.patch.source_id,
                    "origin": list(r.patch.origin),
                    "diff": r.diff,
                    "file": f"{r.patch.name}.png",
                }
                for r in self.selected
            ],
        }


def patch_means(patch: Patch) -> np.ndarray:
    """Per-channel mean intensity of a patch on the 0-255 scale."""
    return imgio.check_rgb(patch.raster).mean(axis=(0, 1)) * 255.0


def target_stats(patches: list[Patch]) -> ChannelStats:
    if not patches:
        raise ValidationError("target_stats needs at least one patch")
    means = np.array([patch_means(p) for p in patches])
    return ChannelStats.from_array(np.clip(means.mean(axis=0), 0.0, 255.0))


def patch_diff(patch: Patch, target: ChannelStats) -> float:
    return float(np.abs(patch_means(patch) - target.as_array()).sum())


def select_top_k(patches: list[Patch], target: ChannelStats, k: int) -> list[RankedPatch]:
    """The ``k`` patches closest to ``target``, ascending by diff.

    Ties are broken by ``(source_id, origin)`` so the selection does not
    depend on input order.
    """
    if k < 1 or k > len(patches):
        raise ValidationError(f"k={k} must be in [1, {len(patches)}]")
    ranked = [RankedPatch(p, patch_diff(p, target)) for p in patches]
    ranked.sort(key=lambda r: (r.diff, r.patch.source_id, r.patch.origin))
    return ranked[:k]


def _check_open_mean(value: float, name: str) -> None:
    if not 0.0 < value < 255.0:
        raise ValidationError(f"{name}={value} must lie strictly inside (0, 255)")


def fit_gamma(
    source_mean: float,
    target_mean: float,
    mode: str = "closed_form",
    samples: np.ndarray | None = None,
) -> float:
    """Gamma mapping the source intensity onto the target mean.

    ``closed_form`` sends the source mean exactly onto the target mean.
    ``mean_exact`` bisects (in log space, over ``GAMMA_BRACKET``) for the
    gamma whose transformed ``samples`` (reals in [0, 1]) have the target
    mean, which removes the bias of transforming a mean instead of pixels.
    """
    _check_open_mean(source_mean, "source_mean")
    _check_open_mean(target_mean, "target_mean")
    if mode == "closed_form":
        return math.log(source_mean / 255.0) / math.log(target_mean / 255.0)
    if mode != "mean_exact":
        raise ValidationError(f"unknown gamma mode {mode!r}")
    if samples is None:
        raise ValidationError("mean_exact mode needs the selected pixel samples")

    values, counts = np.unique(np.clip(np.asarray(samples, dtype=np.float64).ravel(), 0.0, 1.0), return_counts=True)
    if values.size == 0:
        raise ValidationError("mean_exact mode needs at least one sample")
    weights = counts / counts.sum()
    goal = target_mean / 255.0

    def excess(log_gamma: float) -> float:
        return float(np.dot(weights, values ** math.exp(-log_gamma))) - goal

    lo, hi = math.log(GAMMA_BRACKET[0]), math.log(GAMMA_BRACKET[1])
    f_lo, f_hi = excess(lo), excess(hi)
    if f_lo > MEAN_TOLERANCE or f_hi < -MEAN_TOLERANCE:
        raise ValidationError(
            f"target mean {target_mean:.4f} not reachable with gamma in {GAMMA_BRACKET} (bracket failure)"
        )
    # the transformed mean is non-decreasing in gamma
    while hi - lo > 1e-13:
        mid = 0.5 * (lo + hi)
        f_mid = excess(mid)
        if f_mid == 0.0:
            lo = hi = mid
            break
        if f_mid < 0.0:
            lo = mid
        else:
            hi = mid
    log_gamma = 0.5 * (lo + hi)
    if abs(excess(log_gamma)) > MEAN_TOLERANCE:
        raise ValidationError(f"gamma bisection did not reach mean tolerance {MEAN_TOLERANCE}")
    return math.exp(log_gamma)


def fit_gamma_triple(
    selected: list[Patch],
    target: ChannelStats,
    mode: str = "closed_form",
) -> GammaTriple:
    """One gamma per channel from the aggregate channel means of ``selected``."""
    if not selected:
        raise ValidationError("cannot fit gammas on an empty patch set")
    source = target_stats(selected).as_array()
    gammas = []
    for c in range(3):
        samples = None
        if mode == "mean_exact":
            samples = np.concatenate([p.raster[:, :, c].ravel() for p in selected])
        gammas.append(fit_gamma(source[c], target.as_array()[c], mode, samples))
    return GammaTriple(*gammas)


def apply_gamma(raster: np.ndarray, gammas: GammaTriple) -> np.ndarray:
    raster = imgio.check_rgb(raster)
    exponents = 1.0 / gammas.as_array()
    out = np.clip(raster, 0.0, 1.0) ** exponents[None, None, :]
    return np.clip(out, 0.0, 1.0)


def _source_id(path: Path) -> str:
    return re.sub(r"[^A-Za-z0-9_-]", "_", path.stem)


def dataset_patches(directory: str | Path, config: AlignmentConfig) -> list[Patch]:
    """Load every image in ``directory`` and cut it into patches."""
    paths = imgio.list_images(directory)
    if not paths:
        raise ValidationError(f"{directory}: no decodable images")
    patches = []
    for index, path in enumerate(paths):
        raster = imgio.load_rgb(path)
        if min(raster.shape[:2]) < config.patch_size:
            continue
        patches.extend(
            imgio.grid_patches(
                raster,
                size=config.patch_size,
                seed=config.seed ^ index,
                mode=config.crop_mode,
                count=config.count,
                source_id=_source_id(path),
            )
        )
    if not patches:
        raise ValidationError(f"{directory}: no image is large enough for {config.patch_size}px patches")
    return patches


def align_patches(
    external: list[Patch],
    target: list[Patch],
    config: AlignmentConfig,
) -> tuple[list[Patch], AlignmentReport]:
    stats = target_stats(target)
    selected = select_top_k(external, stats, config.k)
    chosen = [r.patch for r in selected]
    gammas = fit_gamma_triple(chosen, stats, config.gamma_mode)
    aligned = [
        Patch(imgio.quantize(apply_gamma(p.raster, gammas)) / 255.0, p.source_id, p.origin) for p in chosen
    ]
    report = AlignmentReport(
        target=stats,
        before=target_stats(chosen),
        after=target_stats(aligned),
        gammas=gammas,
        config=config,
        selected=selected,
        n_target_patches=len(target),
        n_external_patches=len(external),
    )
    return aligned, report


def align_dataset(
    external_dir: str | Path,
    target_dir: str | Path,
    config: AlignmentConfig,
    out_dir: str | Path | None = None,
) -> tuple[list[Patch], AlignmentReport]:
    """Run the full alignment; when ``out_dir`` is given write patches and report.

    Aligned patches are re-quantized to 8 bits, so the report's "after"
    statistics describe exactly what lands on disk.
    """
    external = dataset_patches(external_dir, config)
    target = dataset_patches(target_dir, config)
    if config.k > len(external):
        raise ValidationError(f"k={config.k} exceeds the {len(external)} available external patches")
    aligned, report = align_patches(external, target, config)
    if out_dir is not None:
        write_alignment(aligned, report, out_dir)
    return aligned, report


def write_alignment(aligned: list[Patch], report: AlignmentReport, out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    patch_dir = out_dir / "patches"
    patch_dir.mkdir(parents=True, exist_ok=True)
    for patch in aligned:
        imgio.save_rgb(patch.raster, patch_dir / f"{patch.name}.png")
    (out_dir / "alignment_report.csv").write_text(report.to_csv())
    (out_dir / "alignment_report.json").write_text(json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n")
