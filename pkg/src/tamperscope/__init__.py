"""tamperscope: desk-scale face-forgery localization and interpretation.

Synthesizes captioned forged-face triplets, trains a dual-branch region
prompter and a mask-decoding caption interpreter on top of a from-scratch
float64 autodiff core, and evaluates with region, mask, and caption metrics.
"""

__version__ = "0.1.0"

from .autodiff import Tensor, backward, grad_check
from .regions import DEFAULT_REGIONS, RegionRegistry, RegionVector, extract_region_labels

__all__ = [
    "Tensor",
    "backward",
    "grad_check",
    "DEFAULT_REGIONS",
    "RegionRegistry",
    "RegionVector",
    "extract_region_labels",
    "__version__",
]
