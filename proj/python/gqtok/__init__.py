"""Group-wise lookup-free quantization: quantizer, entropies and the .wtok codec."""

from ._core import (
    CodecError,
    compression_ratio,
    entropy,
    oracle_entropy,
    pack,
    quantize,
    unpack,
)

try:
    from ._core import run_cli
except ImportError:  # built without the CLI
    pass

__all__ = [
    "CodecError",
    "compression_ratio",
    "entropy",
    "oracle_entropy",
    "pack",
    "quantize",
    "unpack",
]
