"""Transfer functions and colour conversions backing the HDR metrics.

The chain used by the lightness and colour-difference scores is
Y'CbCr (4:4:4 codes) -> non-linear R'G'B' -> PQ EOTF -> linear light in
cd/m2 -> XYZ -> CIELAB. Lightness is reported on a 0..100 scale after
dividing the luminance by the display peak (10000 cd/m2 for PQ mastering)
and applying the factor-100 normalisation; the choice is recorded by the
metrics in their report metadata.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .y4m import PlanarFrame

# SMPTE ST 2084 constants
PQ_M1 = 2610 / 16384        # 0.1593017578125
PQ_M2 = 2523 / 4096 * 128   # 78.84375
PQ_C1 = 3424 / 4096         # 0.8359375
PQ_C2 = 2413 / 4096 * 32    # 18.8515625
PQ_C3 = 2392 / 4096 * 32    # 18.6875
PQ_PEAK = 10000.0

# Luma coefficients (Kr, Kb) per matrix tag; BT.2020 non-constant luminance.
YCBCR_COEFFS = {
    "bt2020ncl": (0.2627, 0.0593),
    "bt709": (0.2126, 0.0722),
}

# Linear RGB -> XYZ (D65), rows sum to the D65 white point.
RGB_TO_XYZ_MATRIX = {
    "bt2020": np.array(
        [
            [0.6369580, 0.1446169, 0.1688810],
            [0.2627002, 0.6779981, 0.0593017],
            [0.0000000, 0.0280727, 1.0609851],
        ]
    ),
    "bt709": np.array(
        [
            [0.4123908, 0.3575843, 0.1804808],
            [0.2126390, 0.7151687, 0.0721923],
            [0.0193308, 0.1191948, 0.9505322],
        ]
    ),
}

# D65 white, Y normalised to 1 (x=0.3127, y=0.3290).
D65_WHITE = (0.9504559, 1.0, 1.0890578)

_LAB_DELTA3 = (6.0 / 29.0) ** 3


class ColourError(ValueError):
    """Unsupported or inconsistent colour metadata."""


def _as_float(x):
    scalar = np.isscalar(x)
    arr = np.asarray(x, dtype=np.float64)
    return arr, scalar


def pq_eotf(code):
    """SMPTE 2084 EOTF: normalised code in [0, 1] -> luminance in cd/m2.

    Out-of-range input is clamped with a warning; the curve is monotone
    with pq_eotf(0) = 0 and pq_eotf(1) = 10000.
    """
    code, scalar = _as_float(code)
    if np.any(code < 0.0) or np.any(code > 1.0):
        warnings.warn("PQ code outside [0, 1]; clamped", stacklevel=2)
        code = np.clip(code, 0.0, 1.0)
    p = np.power(code, 1.0 / PQ_M2)
    lum = PQ_PEAK * np.power(np.maximum(p - PQ_C1, 0.0) / (PQ_C2 - PQ_C3 * p), 1.0 / PQ_M1)
    return float(lum) if scalar else lum


def pq_inverse_eotf(luminance):
    """Inverse of :func:`pq_eotf`: luminance in cd/m2 -> normalised code.

    Codes in [0, c1^m2] all decode to zero light; zero luminance maps to
    code 0 rather than to the top of that dead zone.
    """
    lum, scalar = _as_float(luminance)
    if np.any(lum < 0.0):
        raise ValueError("negative luminance has no PQ code")
    p = np.power(lum / PQ_PEAK, PQ_M1)
    code = np.power((PQ_C1 + PQ_C2 * p) / (1.0 + PQ_C3 * p), PQ_M2)
    code = np.where(lum == 0.0, 0.0, code)
    return float(code) if scalar else code


def _range_scaling(bit_depth: int, colour_range: str) -> tuple[float, float, float, float]:
    """(luma offset, luma scale, chroma offset, chroma scale) in code values."""
    shift = 1 << (bit_depth - 8)
    if colour_range == "limited":
        return 16.0 * shift, 219.0 * shift, 128.0 * shift, 224.0 * shift
    peak = float((1 << bit_depth) - 1)
    return 0.0, peak, float(1 << (bit_depth - 1)), peak


def ycbcr_to_rgb(frame: PlanarFrame, colour_range: str | None = None) -> np.ndarray:
    """4:4:4 integer Y'CbCr frame -> non-linear R'G'B' in [0, 1], shape (h, w, 3)."""
    info = frame.info
    if info.subsampling != 444:
        raise ColourError("ycbcr_to_rgb needs 4:4:4 input")
    matrix = info.colour.matrix
    if matrix not in YCBCR_COEFFS:
        raise ColourError(f"unknown matrix tag {matrix!r}")
    kr, kb = YCBCR_COEFFS[matrix]
    kg = 1.0 - kr - kb
    y_off, y_scale, c_off, c_scale = _range_scaling(
        info.bit_depth, colour_range or info.colour_range
    )
    y = (frame.y.astype(np.float64) - y_off) / y_scale
    cb = (frame.cb.astype(np.float64) - c_off) / c_scale
    cr = (frame.cr.astype(np.float64) - c_off) / c_scale
    r = y + 2.0 * (1.0 - kr) * cr
    b = y + 2.0 * (1.0 - kb) * cb
    g = (y - kr * r - kb * b) / kg
    return np.clip(np.stack([r, g, b], axis=-1), 0.0, 1.0)


def rgb_to_ycbcr(rgb: np.ndarray, info) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Quantise non-linear R'G'B' in [0, 1] to integer Y'CbCr planes at 4:4:4."""
    matrix = info.colour.matrix
    if matrix not in YCBCR_COEFFS:
        raise ColourError(f"unknown matrix tag {matrix!r}")
    kr, kb = YCBCR_COEFFS[matrix]
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = kr * r + (1.0 - kr - kb) * g + kb * b
    cb = (b - y) / (2.0 * (1.0 - kb))
    cr = (r - y) / (2.0 * (1.0 - kr))
    y_off, y_scale, c_off, c_scale = _range_scaling(info.bit_depth, info.colour_range)
    peak = (1 << info.bit_depth) - 1
    dtype = np.uint16 if info.bit_depth == 10 else np.uint8

    def quantise(values, off, scale):
        return np.clip(np.rint(values * scale + off), 0, peak).astype(dtype)

    return quantise(y, y_off, y_scale), quantise(cb, c_off, c_scale), quantise(cr, c_off, c_scale)


def rgb_to_xyz(rgb: np.ndarray, primaries: str) -> np.ndarray:
    """Linear-light RGB (any luminance scale) -> CIE XYZ on the same scale."""
    if primaries not in RGB_TO_XYZ_MATRIX:
        raise ColourError(f"unknown primaries {primaries!r}")
    return np.asarray(rgb, dtype=np.float64) @ RGB_TO_XYZ_MATRIX[primaries].T


@dataclass(frozen=True)
class LabNormalisation:
    """Lightness scaling used by the colour-difference scores.

    Luminance is divided by ``peak_luminance`` so the display peak maps to
    the reference white, then lightness is reported on the 0..``factor``
    scale. DE100 and PSNRL100 require factor = 100.
    """

    peak_luminance: float = PQ_PEAK
    factor: float = 100.0


@dataclass(frozen=True, eq=False)
class LabColour:
    """CIELAB coordinates; L, a, b may be scalars or arrays."""

    L: np.ndarray
    a: np.ndarray
    b: np.ndarray

    @property
    def C(self) -> np.ndarray:
        return np.hypot(self.a, self.b)

    @property
    def h(self) -> np.ndarray:
        return np.degrees(np.arctan2(self.b, self.a)) % 360.0


def _lab_f(t: np.ndarray) -> np.ndarray:
    return np.where(t > _LAB_DELTA3, np.cbrt(t), t / (3.0 * (6.0 / 29.0) ** 2) + 4.0 / 29.0)


def xyz_to_lab(xyz: np.ndarray, norm: LabNormalisation | None = None) -> LabColour:
    """Absolute XYZ (cd/m2) -> CIELAB against D65 scaled to the display peak."""
    norm = norm or LabNormalisation()
    xyz = np.asarray(xyz, dtype=np.float64)
    if np.any(xyz < 0.0):
        raise ValueError("negative XYZ is outside the Lab domain")
    xn, yn, zn = D65_WHITE
    fx = _lab_f(xyz[..., 0] / (xn * norm.peak_luminance))
    fy = _lab_f(xyz[..., 1] / (yn * norm.peak_luminance))
    fz = _lab_f(xyz[..., 2] / (zn * norm.peak_luminance))
    scale = norm.factor / 100.0
    return LabColour(
        L=scale * (116.0 * fy - 16.0),
        a=scale * 500.0 * (fx - fy),
        b=scale * 200.0 * (fy - fz),
    )


def ciede2000(c1: LabColour, c2: LabColour):
    """CIEDE2000 colour difference, vectorised; kL = kC = kH = 1."""
    l1, a1, b1 = (np.asarray(v, dtype=np.float64) for v in (c1.L, c1.a, c1.b))
    l2, a2, b2 = (np.asarray(v, dtype=np.float64) for v in (c2.L, c2.a, c2.b))
    scalar = l1.ndim == 0 and l2.ndim == 0

    pow25_7 = 25.0 ** 7
    cab1 = np.hypot(a1, b1)
    cab2 = np.hypot(a2, b2)
    cab = (cab1 + cab2) / 2.0
    g = 0.5 * (1.0 - np.sqrt(cab ** 7 / (cab ** 7 + pow25_7)))
    ap1 = (1.0 + g) * a1
    ap2 = (1.0 + g) * a2
    cp1 = np.hypot(ap1, b1)
    cp2 = np.hypot(ap2, b2)

    hp1 = np.where((ap1 == 0) & (b1 == 0), 0.0, np.degrees(np.arctan2(b1, ap1)) % 360.0)
    hp2 = np.where((ap2 == 0) & (b2 == 0), 0.0, np.degrees(np.arctan2(b2, ap2)) % 360.0)

    dl = l2 - l1
    dc = cp2 - cp1
    dh = hp2 - hp1
    dh = np.where(dh > 180.0, dh - 360.0, dh)
    dh = np.where(dh < -180.0, dh + 360.0, dh)
    dh = np.where(cp1 * cp2 == 0.0, 0.0, dh)
    dbig_h = 2.0 * np.sqrt(cp1 * cp2) * np.sin(np.radians(dh) / 2.0)

    lbar = (l1 + l2) / 2.0
    cbar = (cp1 + cp2) / 2.0
    hsum = hp1 + hp2
    habs = np.abs(hp1 - hp2)
    hbar = np.where(
        cp1 * cp2 == 0.0,
        hsum,
        np.where(
            habs <= 180.0,
            hsum / 2.0,
            np.where(hsum < 360.0, (hsum + 360.0) / 2.0, (hsum - 360.0) / 2.0),
        ),
    )

    t = (
        1.0
        - 0.17 * np.cos(np.radians(hbar - 30.0))
        + 0.24 * np.cos(np.radians(2.0 * hbar))
        + 0.32 * np.cos(np.radians(3.0 * hbar + 6.0))
        - 0.20 * np.cos(np.radians(4.0 * hbar - 63.0))
    )
    dtheta = 30.0 * np.exp(-(((hbar - 275.0) / 25.0) ** 2))
    rc = 2.0 * np.sqrt(cbar ** 7 / (cbar ** 7 + pow25_7))
    lm50sq = (lbar - 50.0) ** 2
    sl = 1.0 + 0.015 * lm50sq / np.sqrt(20.0 + lm50sq)
    sc = 1.0 + 0.045 * cbar
    sh = 1.0 + 0.015 * cbar * t
    rt = -np.sin(np.radians(2.0 * dtheta)) * rc

    de = np.sqrt(
        (dl / sl) ** 2
        + (dc / sc) ** 2
        + (dbig_h / sh) ** 2
        + rt * (dc / sc) * (dbig_h / sh)
    )
    return float(de) if scalar else de
