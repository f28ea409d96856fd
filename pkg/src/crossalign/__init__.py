"""Cross-sensor channel alignment, multi-view augmentation and fusion metrics
for infrared/visible image fusion pipelines."""

from crossalign.errors import CrossAlignError, ImageIOError, ValidationError

__version__ = "0.1.0"

__all__ = ["CrossAlignError", "ImageIOError", "ValidationError", "__version__"]
