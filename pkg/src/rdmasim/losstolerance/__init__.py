"""Loss-recovery coding and the drop-tolerant training harness."""

from .coding import (
    DecodeResult,
    EncodedPayload,
    decode,
    encode,
    fwht,
    next_pow2,
    sign_diagonal,
    xor_encode,
    xor_recover,
)
from .harness import DropMode, TrainConfig, TrainResult, train_with_drops

__all__ = [
    "fwht",
    "next_pow2",
    "sign_diagonal",
    "encode",
    "decode",
    "EncodedPayload",
    "DecodeResult",
    "xor_encode",
    "xor_recover",
    "DropMode",
    "TrainConfig",
    "TrainResult",
    "train_with_drops",
]
