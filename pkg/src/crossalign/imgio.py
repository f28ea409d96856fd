"""Image codec boundary, colour handling, patch geometry and channel statistics.

Rasters are plain numpy arrays of float64 in [0, 1]:

* gray: shape ``(H, W)``
* rgb:  shape ``(H, W, 3)`` with planes ordered R, G, B

8-bit codes only exist at the file boundary. Encoding uses round-half-up.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from crossalign.errors import ImageIOError, ValidationError

CHANNELS = ("R", "G", "B")
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
IMAGE_SUFFIXES = (".png", ".pgm")

# modes that carry 8 bits per sample
_EIGHT_BIT_MODES = {"L", "RGB", "RGBA", "LA", "P", "1"}


@dataclass(frozen=True)
class Patch:
    raster: np.ndarray
    source_id: str
    origin: tuple[int, int]  # (x, y) in the source image

    @property
    def size(self) -> tuple[int, int]:
        h, w = self.raster.shape[:2]
        return w, h

    @property
    def name(self) -> str:
        return f"{self.source_id}_{self.origin[0]}_{self.origin[1]}"


def check_gray(image: np.ndarray, name: str = "image") -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.shape[0] < 1 or image.shape[1] < 1:
        raise ValidationError(f"{name}: expected a non-empty (H, W) array, got shape {image.shape}")
    return image


def check_rgb(image: np.ndarray, name: str = "image") -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3 or image.shape[0] < 1 or image.shape[1] < 1:
        raise ValidationError(f"{name}: expected a non-empty (H, W, 3) array, got shape {image.shape}")
    return image


def check_same_shape(*images: np.ndarray) -> None:
    shapes = {np.shape(im) for im in images}
    if len(shapes) != 1:
        raise ValidationError(f"dimension mismatch: {sorted(shapes)}")


def quantize(values: np.ndarray) -> np.ndarray:
    """Map reals in [0, 1] to uint8 codes, round-half-up, clamped."""
    scaled = np.floor(np.asarray(values, dtype=np.float64) * 255.0 + 0.5)
    return np.clip(scaled, 0, 255).astype(np.uint8)


def codes(image: np.ndarray) -> np.ndarray:
    """8-bit code of every pixel as an int array (bin index for histograms)."""
    return quantize(image).astype(np.intp)


def load_rgb(path: str | Path) -> np.ndarray:
    """Decode an 8-bit PNG/PGM into an (H, W, 3) array; gray is replicated."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode not in _EIGHT_BIT_MODES:
                raise ImageIOError(f"{path}: unsupported pixel mode {mode!r} (only 8-bit images)")
            if mode in ("L", "1", "LA"):
                plane = np.asarray(im.convert("L"), dtype=np.float64)
                data = np.repeat(plane[:, :, None], 3, axis=2)
            else:
                data = np.asarray(im.convert("RGB"), dtype=np.float64)
    except ImageIOError:
        raise
    except (OSError, UnidentifiedImageError, ValueError, SyntaxError) as exc:
        raise ImageIOError(f"{path}: cannot decode image ({exc})") from exc
    return data / 255.0


def load_gray(path: str | Path) -> np.ndarray:
    return to_gray(load_rgb(path))


def save_rgb(raster: np.ndarray, path: str | Path) -> None:
    raster = check_rgb(raster)
    _save(Image.fromarray(quantize(raster)), path)


def save_gray(raster: np.ndarray, path: str | Path) -> None:
    raster = check_gray(raster)
    _save(Image.fromarray(quantize(raster)), path)


def _save(image: Image.Image, path: str | Path) -> None:
    path = Path(path)
    try:
        image.save(path, format="PNG")
    except (OSError, ValueError) as exc:
        raise ImageIOError(f"{path}: cannot write image ({exc})") from exc


def to_gray(raster: np.ndarray) -> np.ndarray:
    """BT.601 luma."""
    raster = check_rgb(raster)
    return np.clip(raster @ LUMA_WEIGHTS, 0.0, 1.0)


def crop(raster: np.ndarray, rect: tuple[int, int, int, int]) -> np.ndarray:
    """Return the ``(x, y, w, h)`` window of a gray or RGB raster."""
    x, y, w, h = (int(v) for v in rect)
    height, width = raster.shape[:2]
    if w < 1 or h < 1 or x < 0 or y < 0 or x + w > width or y + h > height:
        raise ValidationError(f"crop rect {rect} outside {width}x{height} image")
    return raster[y:y + h, x:x + w].copy()


def grid_patches(
    raster: np.ndarray,
    size: int = 64,
    seed: int = 0,
    mode: str = "grid",
    count: int = 16,
    source_id: str = "image",
) -> list[Patch]:
    """Cut ``size x size`` patches from an image.

    ``grid`` tiles from the top-left corner and drops the right/bottom
    remainder. ``random`` draws ``count`` origins uniformly, reproducibly
    for a given seed.
    """
    height, width = raster.shape[:2]
    if size < 1 or size > min(width, height):
        raise ValidationError(f"patch size {size} does not fit a {width}x{height} image")
    if mode == "grid":
        origins = [(x, y) for y in range(0, height - size + 1, size) for x in range(0, width - size + 1, size)]
    elif mode == "random":
        if count < 1:
            raise ValidationError("random cropping needs count >= 1")
        rng = np.random.default_rng(seed)
        xs = rng.integers(0, width - size + 1, size=count)
        ys = rng.integers(0, height - size + 1, size=count)
        origins = [(int(x), int(y)) for x, y in zip(xs, ys)]
    else:
        raise ValidationError(f"unknown crop mode {mode!r}")
    return [Patch(crop(raster, (x, y, size, size)), source_id, (x, y)) for x, y in origins]


def channel_mean(raster: np.ndarray, channel: str | int) -> float:
    """Mean of one plane on the 0-255 scale."""
    index = CHANNELS.index(channel) if isinstance(channel, str) else int(channel)
    return float(np.mean(check_rgb(raster)[:, :, index]) * 255.0)


def histogram(plane: np.ndarray) -> np.ndarray:
    """256-bin count histogram of a gray raster or a single RGB plane."""
    plane = check_gray(plane, "plane")
    return np.bincount(codes(plane).ravel(), minlength=256).astype(np.int64)


def write_histogram_csv(hist: np.ndarray, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["bin", "count"])
        for i, count in enumerate(hist):
            writer.writerow([i, int(count)])


def list_images(directory: str | Path) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise ImageIOError(f"{directory}: not a directory")
    return sorted(p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
