"""Visual IDs for CTR prediction: a contrastively trained residual product quantizer,
a two-tower click model that consumes the IDs, and the tooling around them."""
from .kernels import BACKEND
from .quantizer import CodebookSet, QuantizerConfig, VisualId, hard_visual_id, soft_assign, soft_quantize

__version__ = "0.1.0"

__all__ = ["BACKEND", "CodebookSet", "QuantizerConfig", "VisualId", "hard_visual_id", "soft_assign",
           "soft_quantize", "__version__"]
