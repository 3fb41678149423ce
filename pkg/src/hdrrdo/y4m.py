"""Y4M stream I/O and planar frame resampling.

Frames are kept as integer numpy planes (8-bit in uint8, 10-bit in uint16
with little-endian byte order on disk). Chroma upsampling uses a co-sited
bilinear filter and spatial resampling a Lanczos kernel with a=5; both are
fixed, documented choices so outputs are reproducible bit for bit.
"""

from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, Sequence

import numpy as np

Y4M_MAGIC = b"YUV4MPEG2"
LANCZOS_A = 5


class Y4mError(ValueError):
    """Malformed or unsupported Y4M data."""


class CorruptSampleWarning(UserWarning):
    """Sample above the declared bit depth was clamped."""


@dataclass(frozen=True)
class ColourTags:
    """Colour interpretation of the code values (primaries, transfer, matrix)."""

    primaries: str
    transfer: str
    matrix: str


BT2020_PQ = ColourTags("bt2020", "smpte2084", "bt2020ncl")
BT709_GAMMA = ColourTags("bt709", "gamma", "bt709")

_COLOUR_BY_NAME = {"BT2020_PQ": BT2020_PQ, "BT709_GAMMA": BT709_GAMMA}
_NAME_BY_COLOUR = {v: k for k, v in _COLOUR_BY_NAME.items()}

# Y4M colourspace token -> (subsampling, bit depth). 420 siting variants are
# all handled by the same co-sited upsampling filter.
_C_TOKENS = {
    "420": (420, 8),
    "420jpeg": (420, 8),
    "420mpeg2": (420, 8),
    "420paldv": (420, 8),
    "420p10": (420, 10),
    "444": (444, 8),
    "444p10": (444, 10),
}


@dataclass(frozen=True)
class StreamInfo:
    """Container-level facts for one Y4M stream."""

    width: int
    height: int
    fps_num: int
    fps_den: int
    bit_depth: int = 8
    subsampling: int = 420
    colour: ColourTags = BT709_GAMMA
    colour_range: str = "limited"
    interlace: str = "p"
    aspect: str = "1:1"
    extra_tags: tuple[str, ...] = ()

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise Y4mError(f"bad dimensions {self.width}x{self.height}")
        if self.fps_num <= 0 or self.fps_den <= 0:
            raise Y4mError(f"bad frame rate {self.fps_num}:{self.fps_den}")
        if self.bit_depth not in (8, 10):
            raise Y4mError(f"unsupported bit depth {self.bit_depth}")
        if self.subsampling not in (420, 444):
            raise Y4mError(f"unsupported subsampling {self.subsampling}")
        if self.colour_range not in ("limited", "full"):
            raise Y4mError(f"unsupported colour range {self.colour_range!r}")

    @property
    def fps(self) -> float:
        return self.fps_num / self.fps_den

    @property
    def peak(self) -> int:
        return (1 << self.bit_depth) - 1

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.uint16 if self.bit_depth == 10 else np.uint8)

    @property
    def chroma_size(self) -> tuple[int, int]:
        """(width, height) of the chroma planes."""
        if self.subsampling == 420:
            return (self.width + 1) // 2, (self.height + 1) // 2
        return self.width, self.height

    @property
    def frame_bytes(self) -> int:
        cw, ch = self.chroma_size
        per_sample = 2 if self.bit_depth == 10 else 1
        return (self.width * self.height + 2 * cw * ch) * per_sample


@dataclass(frozen=True, eq=False)
class PlanarFrame:
    """One decoded picture: luma plane, two chroma planes, stream facts."""

    y: np.ndarray
    cb: np.ndarray
    cr: np.ndarray
    info: StreamInfo

    def same_pixels(self, other: "PlanarFrame") -> bool:
        return (
            self.info == other.info
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.cb, other.cb)
            and np.array_equal(self.cr, other.cr)
        )


def make_frame(y: np.ndarray, cb: np.ndarray, cr: np.ndarray, info: StreamInfo) -> PlanarFrame:
    """Build a validated, immutable frame from integer planes."""
    cw, ch = info.chroma_size
    if y.shape != (info.height, info.width):
        raise Y4mError(f"luma plane {y.shape} does not match {info.height}x{info.width}")
    if cb.shape != (ch, cw) or cr.shape != (ch, cw):
        raise Y4mError(f"chroma planes {cb.shape}/{cr.shape} do not match {ch}x{cw}")
    planes = []
    for plane in (y, cb, cr):
        plane = np.ascontiguousarray(plane, dtype=info.dtype)
        if plane.size and int(plane.max()) > info.peak:
            raise Y4mError(f"sample above {info.peak} in {info.bit_depth}-bit frame")
        plane.flags.writeable = False
        planes.append(plane)
    return PlanarFrame(planes[0], planes[1], planes[2], info)


def parse_y4m_header(data: bytes) -> tuple[StreamInfo, int]:
    """Parse the stream header; returns (info, offset of the first FRAME marker).

    Unknown parameters are preserved verbatim in ``extra_tags``. Y4M has no
    standard colour signalling, so colour tags default to BT.2020/PQ for
    10-bit streams and BT.709/gamma for 8-bit unless an XCOLOURSPACE tag
    overrides them.
    """
    nl = data.find(b"\n")
    if nl < 0:
        raise Y4mError("no header line terminator")
    line = data[:nl]
    if line.split(b" ", 1)[0] != Y4M_MAGIC:
        raise Y4mError("missing YUV4MPEG2 magic")

    width = height = None
    fps_num = fps_den = None
    subsampling, bit_depth = 420, 8
    interlace = "p"
    aspect = "1:1"
    colour = None
    colour_range = "limited"
    extra: list[str] = []

    for token in line.decode("ascii", "replace").split()[1:]:
        key, val = token[0], token[1:]
        if key == "W":
            width = int(val)
        elif key == "H":
            height = int(val)
        elif key == "F":
            parts = val.split(":")
            if len(parts) != 2 or not parts[0].isdigit() or not parts[1].isdigit():
                raise Y4mError(f"malformed rational {val!r}")
            fps_num, fps_den = int(parts[0]), int(parts[1])
        elif key == "I":
            interlace = val
        elif key == "A":
            aspect = val
        elif key == "C":
            if val not in _C_TOKENS:
                raise Y4mError(f"unsupported colourspace token C{val}")
            subsampling, bit_depth = _C_TOKENS[val]
        elif key == "X":
            name, sep, xval = val.partition("=")
            if sep and name == "COLOURSPACE" and xval in _COLOUR_BY_NAME:
                colour = _COLOUR_BY_NAME[xval]
            elif sep and name == "COLORRANGE" and xval.lower() in ("limited", "full"):
                colour_range = xval.lower()
            else:
                extra.append(token)
        else:
            extra.append(token)

    if width is None or height is None:
        raise Y4mError("header lacks W or H")
    if fps_num is None:
        raise Y4mError("header lacks F")
    if colour is None:
        colour = BT2020_PQ if bit_depth == 10 else BT709_GAMMA

    info = StreamInfo(
        width=width,
        height=height,
        fps_num=fps_num,
        fps_den=fps_den,
        bit_depth=bit_depth,
        subsampling=subsampling,
        colour=colour,
        colour_range=colour_range,
        interlace=interlace,
        aspect=aspect,
        extra_tags=tuple(extra),
    )
    return info, nl + 1


class Y4mReader:
    """Sequential frame reader over an in-memory Y4M stream."""

    def __init__(self, data: bytes):
        self.data = data
        self.info, self.offset = parse_y4m_header(data)

    def read_frame(self) -> PlanarFrame | None:
        """Read one frame at the current FRAME marker; None at end of stream."""
        data, off = self.data, self.offset
        if off == len(data):
            return None
        if data[off : off + 5] != b"FRAME":
            raise Y4mError(f"expected FRAME marker at offset {off}")
        nl = data.find(b"\n", off)
        if nl < 0:
            raise Y4mError("unterminated FRAME marker")
        off = nl + 1

        info = self.info
        per_sample = 2 if info.bit_depth == 10 else 1
        dtype = "<u2" if info.bit_depth == 10 else np.uint8
        cw, ch = info.chroma_size
        planes = []
        for h, w in ((info.height, info.width), (ch, cw), (ch, cw)):
            nbytes = h * w * per_sample
            raw = data[off : off + nbytes]
            if len(raw) != nbytes:
                raise Y4mError("truncated frame payload")
            plane = np.frombuffer(raw, dtype=dtype).reshape(h, w)
            if info.bit_depth == 10 and plane.size and int(plane.max()) > info.peak:
                n_bad = int(np.count_nonzero(plane > info.peak))
                warnings.warn(
                    f"{n_bad} sample(s) above {info.peak}; clamped",
                    CorruptSampleWarning,
                )
                plane = np.minimum(plane, info.peak)
            planes.append(np.asarray(plane, dtype=info.dtype))
            off += nbytes
        self.offset = off
        return make_frame(planes[0], planes[1], planes[2], info)

    def __iter__(self) -> Iterator[PlanarFrame]:
        while (frame := self.read_frame()) is not None:
            yield frame


def read_y4m(source: bytes | str | Path) -> tuple[StreamInfo, list[PlanarFrame]]:
    """Read a whole stream from bytes or a file path."""
    if isinstance(source, (str, Path)):
        data = Path(source).read_bytes()
    else:
        data = source
    reader = Y4mReader(data)
    return reader.info, list(reader)


def _header_bytes(info: StreamInfo) -> bytes:
    c_token = {
        (420, 8): "420",
        (420, 10): "420p10",
        (444, 8): "444",
        (444, 10): "444p10",
    }[(info.subsampling, info.bit_depth)]
    tokens = [
        "YUV4MPEG2",
        f"W{info.width}",
        f"H{info.height}",
        f"F{info.fps_num}:{info.fps_den}",
        f"I{info.interlace}",
        f"A{info.aspect}",
        f"C{c_token}",
        f"XCOLOURSPACE={_NAME_BY_COLOUR[info.colour]}",
        f"XCOLORRANGE={info.colour_range.upper()}",
    ]
    tokens.extend(info.extra_tags)
    return (" ".join(tokens) + "\n").encode("ascii")


def y4m_bytes(frames: Sequence[PlanarFrame], info: StreamInfo) -> bytes:
    """Serialize frames to an in-memory Y4M stream."""
    out = [_header_bytes(info)]
    dtype = "<u2" if info.bit_depth == 10 else np.uint8
    for i, frame in enumerate(frames):
        if frame.info != info:
            raise Y4mError(f"frame {i} does not match the stream info")
        out.append(b"FRAME\n")
        for plane in (frame.y, frame.cb, frame.cr):
            out.append(np.ascontiguousarray(plane, dtype=dtype).tobytes())
    return b"".join(out)


def write_y4m(frames: Sequence[PlanarFrame], info: StreamInfo, sink: BinaryIO | str | Path) -> int:
    """Write a stream to a file or file-like sink; returns the byte count."""
    data = y4m_bytes(frames, info)
    if isinstance(sink, (str, Path)):
        Path(sink).write_bytes(data)
    else:
        sink.write(data)
    return len(data)


def _upsample_axis(plane: np.ndarray, axis: int) -> np.ndarray:
    # Co-sited: even outputs copy the input sample, odd outputs are the
    # rounded mean of the two neighbours, replicated at the border.
    p = np.moveaxis(plane, axis, 0).astype(np.uint32)
    out = np.empty((p.shape[0] * 2,) + p.shape[1:], dtype=np.uint32)
    out[0::2] = p
    nxt = np.concatenate([p[1:], p[-1:]], axis=0)
    out[1::2] = (p + nxt + 1) // 2
    return np.moveaxis(out, 0, axis)


def upsample_chroma_444(frame: PlanarFrame) -> PlanarFrame:
    """Upsample 4:2:0 chroma to full resolution; 4:4:4 input is returned as is."""
    info = frame.info
    if info.subsampling == 444:
        return frame
    new_info = replace(info, subsampling=444)
    planes = []
    for plane in (frame.cb, frame.cr):
        up = _upsample_axis(_upsample_axis(plane, 0), 1)
        planes.append(up[: info.height, : info.width].astype(info.dtype))
    return make_frame(frame.y.copy(), planes[0], planes[1], new_info)


def _lanczos_weights(n_src: int, n_dst: int, a: int = LANCZOS_A) -> tuple[np.ndarray, np.ndarray]:
    """Per-output tap indices and unit-sum weights for one axis.

    Output sample i maps to source coordinate (i + 0.5) / scale - 0.5. When
    downscaling the kernel is stretched by the inverse scale so it keeps
    acting as a low-pass filter. Borders replicate the edge sample.
    """
    scale = n_dst / n_src
    shrink = min(1.0, scale)
    support = a / shrink
    centers = (np.arange(n_dst) + 0.5) / scale - 0.5
    lo = np.ceil(centers - support).astype(int)
    hi = np.floor(centers + support).astype(int)
    n_taps = int((hi - lo).max()) + 1
    offsets = np.arange(n_taps)
    idx = lo[:, None] + offsets[None, :]
    x = (idx - centers[:, None]) * shrink
    with np.errstate(invalid="ignore"):
        w = np.sinc(x) * np.sinc(x / a)
    w[np.abs(x) >= a] = 0.0
    w /= w.sum(axis=1, keepdims=True)
    idx = np.clip(idx, 0, n_src - 1)
    return idx, w


def _resample_axis(plane: np.ndarray, n_dst: int, axis: int) -> np.ndarray:
    src = np.moveaxis(plane, axis, 0).astype(np.float64)
    idx, w = _lanczos_weights(src.shape[0], n_dst)
    out = np.zeros((n_dst,) + src.shape[1:], dtype=np.float64)
    for k in range(w.shape[1]):
        out += w[:, k].reshape((-1,) + (1,) * (src.ndim - 1)) * src[idx[:, k]]
    return np.moveaxis(out, 0, axis)


def lanczos5_resample(frame: PlanarFrame, target_w: int, target_h: int) -> PlanarFrame:
    """Resample a frame spatially with the separable Lanczos (a=5) kernel."""
    info = frame.info
    if target_w <= 0 or target_h <= 0:
        raise ValueError(f"bad target size {target_w}x{target_h}")
    new_info = replace(info, width=target_w, height=target_h)
    tcw, tch = new_info.chroma_size
    planes = []
    for plane, (tw, th) in zip(
        (frame.y, frame.cb, frame.cr), ((target_w, target_h), (tcw, tch), (tcw, tch))
    ):
        out = _resample_axis(_resample_axis(plane, th, 0), tw, 1)
        out = np.clip(np.rint(out), 0, info.peak).astype(info.dtype)
        planes.append(out)
    return make_frame(planes[0], planes[1], planes[2], new_info)
