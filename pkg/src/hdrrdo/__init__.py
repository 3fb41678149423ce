"""Desk-scale HDR rate-distortion lab.

Quality metrics for PQ/BT.2020 video, BD-Rate over PCHIP-interpolated
rate-quality curves, and derivative-free tuning of per-clip Lagrange
multiplier modifiers against either a mock codec or an external encoder.
"""

__version__ = "0.1.0"

from .y4m import StreamInfo, PlanarFrame, read_y4m, write_y4m
from .rdcurve import RdPoint, RdCurve, BdRateResult, bd_rate
from .harness import (
    ChromaOffsetPolicy,
    EncodeSpec,
    EncodeResult,
    MockCodecModel,
    CodecHarness,
    chroma_qp_offset,
)
from .optimizer import SearchOptions, OptimizationTrace, powell_minimize
from .metrics import MetricReport, compute_all

__all__ = [
    "__version__",
    "StreamInfo",
    "PlanarFrame",
    "read_y4m",
    "write_y4m",
    "RdPoint",
    "RdCurve",
    "BdRateResult",
    "bd_rate",
    "ChromaOffsetPolicy",
    "EncodeSpec",
    "EncodeResult",
    "MockCodecModel",
    "CodecHarness",
    "chroma_qp_offset",
    "SearchOptions",
    "OptimizationTrace",
    "powell_minimize",
    "MetricReport",
    "compute_all",
]
