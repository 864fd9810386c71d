"""nacodec: a self-contained neural audio codec toolkit.

Streaming convolutional encoder/decoder with residual vector quantization,
adversarial + spectral training losses with gradient balancing, and an
optional language-model-driven range coder for the index stream. Everything
runs on a small numpy reverse-mode autodiff engine; no deep learning
framework is required.
"""

from .tensor import Tensor, no_grad

__all__ = ["Tensor", "no_grad"]
__version__ = "0.1.0"
