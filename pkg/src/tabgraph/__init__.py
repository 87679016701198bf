"""Do attention maps of tabular transformers recover the feature-interaction
graph? Synthetic generators with known graphs, a maskable attention model,
extraction, scoring and an experiment harness."""

from .core import RNG_ALGORITHM

__version__ = "0.1.0"
FORMAT_VERSION = "1"

__all__ = ["RNG_ALGORITHM", "FORMAT_VERSION", "__version__"]
