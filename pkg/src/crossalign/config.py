"""Flat ``key = value`` run configuration shared by every subcommand.

Precedence: built-in defaults < config file < command-line overrides.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace
from pathlib import Path

from crossalign.alignment import AlignmentConfig
from crossalign.augment import AugmentConfig, SslSchedule
from crossalign.errors import ImageIOError, ValidationError
from crossalign.losses import GRADIENT_OPERATORS, LossWeights
from crossalign.metrics import MetricsConfig

# config-file keys that differ from attribute names
_KEY_ALIASES = {"lambda": "lam"}
_ATTR_TO_KEY = {v: k for k, v in _KEY_ALIASES.items()}


@dataclass(frozen=True)
class RunConfig:
    k: int | None = None
    patch_size: int = 64
    gamma_mode: str = "closed_form"
    crop_mode: str = "grid"
    count: int = 16
    seed: int = 0
    crop_size: int = 32
    blur_sigma: float = 1.0
    kernel_radius: int | None = None
    theta_init: float = 0.1
    total_steps: int = 1
    alpha1: float = 2.0
    alpha2: float = 2.0
    alpha3: float = 1.0
    alpha4: float = 1.0
    lam: float = 1.0
    mu: float = 10.0
    zeta: float = 1.01
    mi_mode: str = "sum"
    vif_mode: str = "sum"
    ssim_mode: str = "mean"
    gradient_operator: str = "sobel"
    jobs: int | None = None

    def validate(self) -> "RunConfig":
        """Build every module config once so bad values fail before any work."""
        if self.k is not None:
            self.alignment()
        elif self.patch_size < 8:
            raise ValidationError(f"patch_size must be >= 8, got {self.patch_size}")
        self.augment()
        self.schedule()
        self.weights()
        self.metrics()
        if self.gradient_operator not in GRADIENT_OPERATORS:
            raise ValidationError(f"gradient_operator must be one of {GRADIENT_OPERATORS}")
        if self.jobs is not None and self.jobs < 1:
            raise ValidationError(f"jobs must be >= 1, got {self.jobs}")
        return self

    def alignment(self) -> AlignmentConfig:
        if self.k is None:
            raise ValidationError("k is required for alignment")
        return AlignmentConfig(
            k=self.k,
            patch_size=self.patch_size,
            gamma_mode=self.gamma_mode,
            seed=self.seed,
            crop_mode=self.crop_mode,
            count=self.count,
        )

    def augment(self) -> AugmentConfig:
        return AugmentConfig(self.crop_size, self.blur_sigma, self.kernel_radius, self.seed)

    def schedule(self) -> SslSchedule:
        return SslSchedule(self.theta_init, self.total_steps)

    def weights(self) -> LossWeights:
        return LossWeights(self.alpha1, self.alpha2, self.alpha3, self.alpha4, self.lam, self.mu, self.zeta)

    def metrics(self) -> MetricsConfig:
        return MetricsConfig(self.mi_mode, self.vif_mode, self.ssim_mode)

    def resolved_jobs(self) -> int:
        if self.jobs is not None:
            return self.jobs
        env = os.environ.get("CROSSALIGN_JOBS")
        if env:
            try:
                jobs = int(env)
            except ValueError:
                raise ValidationError(f"CROSSALIGN_JOBS must be an integer, got {env!r}") from None
            if jobs < 1:
                raise ValidationError("CROSSALIGN_JOBS must be >= 1")
            return jobs
        return os.cpu_count() or 1

    def as_items(self) -> list[tuple[str, object]]:
        return [(_ATTR_TO_KEY.get(f.name, f.name), getattr(self, f.name)) for f in fields(self)]

    def dumps(self) -> str:
        return "".join(f"{key} = {'' if value is None else value}\n" for key, value in self.as_items())

    def with_overrides(self, overrides: dict[str, str]) -> "RunConfig":
        return replace(self, **{_attr(key): _coerce(key, value) for key, value in overrides.items()})


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _attr(key: str) -> str:
    attr = _KEY_ALIASES.get(key, key)
    if attr not in _TYPES:
        raise ValidationError(f"unknown configuration key {key!r}")
    return attr


def _coerce(key: str, raw: str):
    attr = _attr(key)
    kind = _TYPES[attr]
    raw = raw.strip()
    if "None" in kind and raw in ("", "none", "None"):
        return None
    try:
        if kind.startswith("int"):
            return int(raw)
        if kind.startswith("float"):
            return float(raw)
    except ValueError:
        raise ValidationError(f"{key}: cannot parse {raw!r} as {kind.split()[0]}") from None
    return raw


def parse_config_text(text: str) -> dict[str, str]:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"config line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        _attr(key)
        values[key] = value
    return values


def load_config(path: str | Path | None = None, overrides: dict[str, str] | None = None) -> RunConfig:
    config = RunConfig()
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ImageIOError(f"{path}: cannot read config ({exc})") from exc
        config = config.with_overrides(parse_config_text(text))
    if overrides:
        config = config.with_overrides(overrides)
    return config.validate()
