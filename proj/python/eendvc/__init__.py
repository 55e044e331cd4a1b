# SPDX-License-Identifier: Apache-2.0
"""EEND-VC speaker diarization: powerset segmentation, vector clustering, DER scoring."""

from ._core import (
    CapabilityError,
    ConfigError,
    EendvcError,
    EncodingError,
    IoError,
    NumericalError,
    ParseError,
    PowersetCodec,
    ShapeError,
    TooManySpeakersError,
    build_report,
    cluster,
    encode,
    format_percent,
    format_relative,
    generate_scene,
    infer,
    known_encoders,
    macro_average,
    normalize_rttm,
    parse_rttm,
    relative_change,
    score,
    train,
    trainable_surfaces,
    write_synthetic_corpus,
)

__version__ = "0.1.0"

__all__ = [
    "CapabilityError",
    "ConfigError",
    "EendvcError",
    "EncodingError",
    "IoError",
    "NumericalError",
    "ParseError",
    "PowersetCodec",
    "ShapeError",
    "TooManySpeakersError",
    "build_report",
    "cluster",
    "encode",
    "format_percent",
    "format_relative",
    "generate_scene",
    "infer",
    "known_encoders",
    "macro_average",
    "normalize_rttm",
    "parse_rttm",
    "relative_change",
    "score",
    "train",
    "trainable_surfaces",
    "write_synthetic_corpus",
]
