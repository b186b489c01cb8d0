"""Python bindings for the derauth simulator and protocol codecs."""

from ._derauth import (
    ParseError,
    crc16_dnp,
    decode_challenge,
    decode_frame,
    discharge_curve,
    encode_frame,
    extract_params,
    inverse_transform,
    mix64,
    quantize,
    reference_models,
    simulate,
    transform,
    verify_store,
)

__all__ = [
    "ParseError",
    "crc16_dnp",
    "decode_challenge",
    "decode_frame",
    "discharge_curve",
    "encode_frame",
    "extract_params",
    "inverse_transform",
    "mix64",
    "quantize",
    "reference_models",
    "simulate",
    "transform",
    "verify_store",
]

__version__ = "0.1.0"
