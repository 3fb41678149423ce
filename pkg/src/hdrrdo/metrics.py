"""Quality scores for reference/test sequence pairs.

Covers PSNR and luma-weighted PSNR per plane and averaged, the CIEDE2000
colour-difference score DE100, the normalised-lightness score PSNRL100,
multi-scale SSIM on luma, and a pluggable HDR video distortion backend
mapped to dB through a similarity transform. All dB scores cap at 100 so
zero-error points stay finite for rate-curve interpolation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.ndimage import correlate1d

from . import colour
from .colour import LabNormalisation
from .y4m import PlanarFrame, upsample_chroma_444

DB_CAP = 100.0

# Luma weight for wPSNR: linear in dB over the normalised reference luma,
# anchored to 1.0 at mid-gray and clipped so weights span about 0.5 to 4.
WEIGHT_SLOPE_DB = 20.0
WEIGHT_MIN_DB = -3.0
WEIGHT_MAX_DB = 6.0
WEIGHT_FUNCTION_ID = "dblinear20-clip(-3,6)"

HDRVQM_SATURATION_Q = math.log(3.0)

PSNR_METRICS = ("psnr-y", "psnr-u", "psnr-v", "psnr-avg")
WPSNR_METRICS = ("wpsnr-y", "wpsnr-u", "wpsnr-v", "wpsnr-avg")
ALL_METRICS = PSNR_METRICS + WPSNR_METRICS + ("de100", "psnrl100", "ms-ssim", "hdrvqm")


class MetricError(ValueError):
    """Mismatched inputs or an unsupported metric request."""


def _check_planes(ref: np.ndarray, test: np.ndarray):
    if ref.shape != test.shape:
        raise MetricError(f"plane shapes differ: {ref.shape} vs {test.shape}")


def _mse_to_db(mse: float, peak: float) -> float:
    if mse <= 0.0:
        return DB_CAP
    return min(10.0 * math.log10(peak * peak / mse), DB_CAP)


def psnr_plane(ref: np.ndarray, test: np.ndarray, peak: float) -> float:
    """Plane PSNR in dB; identical planes cap at 100 dB."""
    _check_planes(ref, test)
    err = ref.astype(np.float64) - test.astype(np.float64)
    return _mse_to_db(float(np.mean(err * err)), peak)


def _plane_mse(ref: np.ndarray, test: np.ndarray) -> float:
    _check_planes(ref, test)
    err = ref.astype(np.float64) - test.astype(np.float64)
    return float(np.mean(err * err))


def psnr_avg(ref: PlanarFrame, test: PlanarFrame) -> float:
    """PSNR over the weighted mean of plane MSEs: 4:1:1 for 4:2:0, 1:1:1 for 4:4:4."""
    weights = (4.0, 1.0, 1.0) if ref.info.subsampling == 420 else (1.0, 1.0, 1.0)
    mses = (
        _plane_mse(ref.y, test.y),
        _plane_mse(ref.cb, test.cb),
        _plane_mse(ref.cr, test.cr),
    )
    mse = sum(w * m for w, m in zip(weights, mses)) / sum(weights)
    return _mse_to_db(mse, ref.info.peak)


def luma_weight(code):
    """wPSNR weight from normalised reference luma in [0, 1].

    Piecewise linear in dB with slope WEIGHT_SLOPE_DB, clipped to
    [WEIGHT_MIN_DB, WEIGHT_MAX_DB], so it is monotone non-decreasing and
    exactly 1.0 at mid-gray. The 10-bit table generated from this function
    ships as data/luma_weight_10bit.csv.
    """
    db = np.clip(
        WEIGHT_SLOPE_DB * (np.asarray(code, dtype=np.float64) - 0.5),
        WEIGHT_MIN_DB,
        WEIGHT_MAX_DB,
    )
    out = np.power(10.0, db / 10.0)
    return float(out) if np.isscalar(code) else out


def _block_mean_2x2(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    padded = np.pad(plane.astype(np.float64), ((0, h % 2), (0, w % 2)), mode="edge")
    return padded.reshape(padded.shape[0] // 2, 2, padded.shape[1] // 2, 2).mean(axis=(1, 3))


def _frame_weights(ref: PlanarFrame) -> tuple[np.ndarray, np.ndarray]:
    """(luma weights, chroma weights) from the reference luma plane.

    Chroma weights for 4:2:0 use the 2x2 luma neighbourhood mean at each
    chroma site; 4:4:4 uses the co-located luma sample.
    """
    peak = float(ref.info.peak)
    luma_w = luma_weight(ref.y.astype(np.float64) / peak)
    if ref.info.subsampling == 420:
        cw, ch = ref.info.chroma_size
        chroma_w = luma_weight(_block_mean_2x2(ref.y)[:ch, :cw] / peak)
    else:
        chroma_w = luma_w
    return luma_w, chroma_w


def wpsnr_plane(ref: np.ndarray, test: np.ndarray, weights: np.ndarray, peak: float) -> float:
    """Weighted-MSE PSNR: 10 log10(peak^2 / (sum(w e^2) / sum(w)))."""
    _check_planes(ref, test)
    if weights.shape != ref.shape:
        raise MetricError(f"weight shape {weights.shape} does not match {ref.shape}")
    err = ref.astype(np.float64) - test.astype(np.float64)
    wmse = float(np.sum(weights * err * err) / np.sum(weights))
    return _mse_to_db(wmse, peak)


def _wpsnr_planes(ref: PlanarFrame, test: PlanarFrame) -> tuple[float, float, float]:
    peak = float(ref.info.peak)
    luma_w, chroma_w = _frame_weights(ref)
    return (
        wpsnr_plane(ref.y, test.y, luma_w, peak),
        wpsnr_plane(ref.cb, test.cb, chroma_w, peak),
        wpsnr_plane(ref.cr, test.cr, chroma_w, peak),
    )


def wpsnr_avg(ref: PlanarFrame, test: PlanarFrame) -> float:
    """Arithmetic mean of the per-plane wPSNR dB scores."""
    return sum(_wpsnr_planes(ref, test)) / 3.0


def _check_pair(ref: PlanarFrame, test: PlanarFrame):
    if ref.info.colour != test.info.colour:
        raise MetricError("colour tags differ between reference and test")
    if (ref.info.width, ref.info.height) != (test.info.width, test.info.height):
        raise MetricError("frame dimensions differ")
    if ref.info.bit_depth != test.info.bit_depth or ref.info.subsampling != test.info.subsampling:
        raise MetricError("pixel formats differ")


def frame_to_linear_rgb(frame: PlanarFrame) -> np.ndarray:
    """Frame -> linear-light RGB in cd/m2, shape (h, w, 3). Requires PQ content."""
    if frame.info.colour.transfer != "smpte2084":
        raise MetricError("HDR colour metrics need SMPTE 2084 (PQ) content")
    rgb_prime = colour.ycbcr_to_rgb(upsample_chroma_444(frame))
    return colour.pq_eotf(rgb_prime)


def frame_to_lab(frame: PlanarFrame, norm: LabNormalisation | None = None) -> colour.LabColour:
    """Frame -> per-pixel CIELAB via linear RGB and XYZ."""
    norm = norm or LabNormalisation()
    xyz = colour.rgb_to_xyz(frame_to_linear_rgb(frame), frame.info.colour.primaries)
    return colour.xyz_to_lab(xyz, norm)


def de100_from_deltae(deltae: np.ndarray, factor: float = 100.0) -> float:
    """dB score from a per-pixel CIEDE2000 map: 10 log10(factor^2 / mean(dE^2))."""
    return _mse_to_db(float(np.mean(np.square(deltae))), factor)


def psnrl100_from_mae(mae: float, factor: float = 100.0) -> float:
    """dB score from the mean absolute lightness error: 20 log10(factor / MAE)."""
    if mae <= 0.0:
        return DB_CAP
    return min(20.0 * math.log10(factor / mae), DB_CAP)


def _require_factor_100(norm: LabNormalisation):
    if norm.factor != 100.0:
        raise MetricError("DE100/PSNRL100 are defined on the factor-100 lightness scale")


def de100(ref: PlanarFrame, test: PlanarFrame, norm: LabNormalisation | None = None) -> float:
    """PSNR-style score of the per-pixel CIEDE2000 difference, all planes."""
    norm = norm or LabNormalisation()
    _require_factor_100(norm)
    _check_pair(ref, test)
    de = colour.ciede2000(frame_to_lab(ref, norm), frame_to_lab(test, norm))
    return de100_from_deltae(de, norm.factor)


def psnrl100(ref: PlanarFrame, test: PlanarFrame, norm: LabNormalisation | None = None) -> float:
    """PSNR-style score of the mean absolute normalised-lightness error."""
    norm = norm or LabNormalisation()
    _require_factor_100(norm)
    _check_pair(ref, test)
    mae = float(np.mean(np.abs(frame_to_lab(ref, norm).L - frame_to_lab(test, norm).L)))
    return psnrl100_from_mae(mae, norm.factor)


MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    coords = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    r = len(win) // 2
    out = correlate1d(correlate1d(img, win, axis=0), win, axis=1)
    return out[r : img.shape[0] - r, r : img.shape[1] - r]


def _ssim_pair(x, y, win, k1, k2) -> tuple[float, float]:
    c1, c2 = k1 * k1, k2 * k2
    mu_x = _filter_valid(x, win)
    mu_y = _filter_valid(y, win)
    xx = _filter_valid(x * x, win) - mu_x * mu_x
    yy = _filter_valid(y * y, win) - mu_y * mu_y
    xy = _filter_valid(x * y, win) - mu_x * mu_y
    lum = (2.0 * mu_x * mu_y + c1) / (mu_x * mu_x + mu_y * mu_y + c1)
    cs = (2.0 * xy + c2) / (xx + yy + c2)
    return float(np.mean(lum * cs)), float(np.mean(cs))


def _halve(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    padded = np.pad(img, ((0, h % 2), (0, w % 2)), mode="symmetric")
    return padded.reshape(padded.shape[0] // 2, 2, padded.shape[1] // 2, 2).mean(axis=(1, 3))


def ms_ssim_y(
    ref: np.ndarray,
    test: np.ndarray,
    peak: float,
    win_size: int = 11,
    sigma: float = 1.5,
    k1: float = 0.01,
    k2: float = 0.03,
) -> float:
    """Five-scale MS-SSIM on luma with the published scale exponents."""
    _check_planes(ref, test)
    if win_size % 2 == 0:
        raise MetricError("window size must be odd")
    levels = len(MS_SSIM_WEIGHTS)
    min_dim = min(ref.shape)
    if min_dim < (win_size - 1) * (1 << (levels - 1)) + 1:
        raise MetricError(
            f"plane {ref.shape} too small for {levels} scales with a {win_size}-tap window"
        )
    win = _gaussian_window(win_size, sigma)
    x = ref.astype(np.float64) / peak
    y = test.astype(np.float64) / peak
    terms = []
    for level in range(levels):
        ssim_val, cs = _ssim_pair(x, y, win, k1, k2)
        terms.append(max(ssim_val if level == levels - 1 else cs, 0.0))
        if level < levels - 1:
            x, y = _halve(x), _halve(y)
    return float(np.prod([t ** w for t, w in zip(terms, MS_SSIM_WEIGHTS)]))


# ---------------------------------------------------------------------------
# HDR video distortion and its dB transform
# ---------------------------------------------------------------------------

DEFAULT_HDRVQM_BACKEND = "pu-pq-mse"


def frame_to_pu(frame: PlanarFrame) -> np.ndarray:
    """Per-pixel perceptually-uniform luminance on a 0..100 scale.

    The PU encoding here is the PQ inverse EOTF of the CIE luminance scaled
    by 100, which is uniform enough for a desk-scale distortion backend and
    is fully determined by published constants.
    """
    xyz = colour.rgb_to_xyz(frame_to_linear_rgb(frame), frame.info.colour.primaries)
    return 100.0 * colour.pq_inverse_eotf(np.maximum(xyz[..., 1], 0.0))


def _pu_mse_series(ref_seq: Sequence[PlanarFrame], test_seq: Sequence[PlanarFrame]) -> list[float]:
    series = []
    for ref, test in zip(ref_seq, test_seq):
        _check_pair(ref, test)
        diff = frame_to_pu(ref) - frame_to_pu(test)
        series.append(float(np.mean(diff * diff)))
    return series


_HDRVQM_BACKENDS: dict[str, Callable[[Sequence[PlanarFrame], Sequence[PlanarFrame]], list[float]]] = {
    DEFAULT_HDRVQM_BACKEND: _pu_mse_series,
}


def register_hdrvqm_backend(name: str, fn) -> None:
    """Register a per-frame distortion backend (sequence pair -> list of floats)."""
    _HDRVQM_BACKENDS[name] = fn


def hdrvqm_distortion(
    ref_seq: Sequence[PlanarFrame],
    test_seq: Sequence[PlanarFrame],
    backend: str = DEFAULT_HDRVQM_BACKEND,
) -> float:
    """Raw distortion Q >= 0 (temporal mean of per-frame distortion); 0 iff identical."""
    if len(ref_seq) != len(test_seq):
        raise MetricError(f"sequence lengths differ: {len(ref_seq)} vs {len(test_seq)}")
    series = _HDRVQM_BACKENDS[backend](ref_seq, test_seq)
    return float(np.mean(series))


@dataclass(frozen=True)
class HdrVqmScore:
    """Distortion Q with its similarity and dB transforms."""

    q: float
    similarity: float
    db: float
    saturated: bool


def hdrvqm_to_db(q: float) -> HdrVqmScore:
    """Map distortion Q to a dB quality score.

    similarity = 4 / (1 + exp(Q)) - 1 and dB = -10 log10(1 - similarity),
    capped at 100 dB. The transform runs out of headroom at Q = ln 3 where
    the similarity reaches 0; beyond that the dB score floors at 0 and the
    result is flagged as saturated.
    """
    if q < 0.0:
        raise MetricError("distortion must be non-negative")
    similarity = 4.0 / (1.0 + math.exp(q)) - 1.0
    if similarity <= 0.0:
        return HdrVqmScore(q=q, similarity=similarity, db=0.0, saturated=True)
    if similarity >= 1.0:
        return HdrVqmScore(q=q, similarity=similarity, db=DB_CAP, saturated=False)
    db = min(-10.0 * math.log10(1.0 - similarity), DB_CAP)
    return HdrVqmScore(q=q, similarity=similarity, db=db, saturated=False)


# ---------------------------------------------------------------------------
# Report assembly
# ---------------------------------------------------------------------------


@dataclass
class MetricScore:
    aggregate: float
    per_frame: list[float]
    metadata: dict = field(default_factory=dict)


@dataclass
class MetricReport:
    """All requested scores for one (reference, test) sequence pair."""

    scores: dict[str, MetricScore]

    def aggregate(self, name: str) -> float:
        return self.scores[name].aggregate

    def to_dict(self) -> dict:
        return {
            name: {
                "aggregate": score.aggregate,
                "per_frame": score.per_frame,
                "metadata": score.metadata,
            }
            for name, score in self.scores.items()
        }

    def to_json(self, indent: int | None = None) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)


def compute_all(
    ref_seq: Sequence[PlanarFrame],
    test_seq: Sequence[PlanarFrame],
    metric_set: Sequence[str] | None = None,
    norm: LabNormalisation | None = None,
) -> MetricReport:
    """Compute every requested metric in one pass over the frame pairs.

    Per-frame dB metrics pool by arithmetic mean over frames; the HDR
    distortion pools as dB of the temporal-mean Q. Pooling and
    normalisation choices are recorded in each score's metadata.
    """
    names = tuple(metric_set) if metric_set else ALL_METRICS
    unknown = [n for n in names if n not in ALL_METRICS]
    if unknown:
        raise MetricError(f"unknown metrics: {unknown}")
    if len(ref_seq) != len(test_seq):
        raise MetricError(f"sequence lengths differ: {len(ref_seq)} vs {len(test_seq)}")
    if not ref_seq:
        raise MetricError("empty sequences")
    norm = norm or LabNormalisation()

    need_lab = any(n in ("de100", "psnrl100") for n in names)
    need_pu = "hdrvqm" in names
    series: dict[str, list[float]] = {n: [] for n in names}

    for index, (ref, test) in enumerate(zip(ref_seq, test_seq)):
        try:
            _check_pair(ref, test)
            peak = float(ref.info.peak)
            if need_lab:
                lab_r = frame_to_lab(ref, norm)
                lab_t = frame_to_lab(test, norm)
            if any(n in WPSNR_METRICS for n in names):
                wy, wu, wv = _wpsnr_planes(ref, test)
            for name in names:
                if name == "psnr-y":
                    value = psnr_plane(ref.y, test.y, peak)
                elif name == "psnr-u":
                    value = psnr_plane(ref.cb, test.cb, peak)
                elif name == "psnr-v":
                    value = psnr_plane(ref.cr, test.cr, peak)
                elif name == "psnr-avg":
                    value = psnr_avg(ref, test)
                elif name == "wpsnr-y":
                    value = wy
                elif name == "wpsnr-u":
                    value = wu
                elif name == "wpsnr-v":
                    value = wv
                elif name == "wpsnr-avg":
                    value = (wy + wu + wv) / 3.0
                elif name == "de100":
                    value = de100_from_deltae(colour.ciede2000(lab_r, lab_t), norm.factor)
                elif name == "psnrl100":
                    mae = float(np.mean(np.abs(lab_r.L - lab_t.L)))
                    value = psnrl100_from_mae(mae, norm.factor)
                elif name == "ms-ssim":
                    value = ms_ssim_y(ref.y, test.y, peak)
                elif name == "hdrvqm":
                    value = _pu_mse_series([ref], [test])[0] if need_pu else 0.0
                series[name].append(value)
        except MetricError:
            raise
        except Exception as exc:
            raise MetricError(f"frame {index}: {exc}") from exc

    scores: dict[str, MetricScore] = {}
    for name in names:
        meta: dict = {}
        if name == "hdrvqm":
            q = float(np.mean(series[name]))
            transformed = hdrvqm_to_db(q)
            meta = {
                "backend": DEFAULT_HDRVQM_BACKEND,
                "pooling": "db-of-mean-q",
                "q": q,
                "saturated": transformed.saturated,
            }
            scores[name] = MetricScore(transformed.db, series[name], meta)
            continue
        if name in ("de100", "psnrl100"):
            meta["normalisation"] = {"peak_luminance": norm.peak_luminance, "factor": norm.factor}
        if name in WPSNR_METRICS:
            meta["weight_function"] = WEIGHT_FUNCTION_ID
        if name == "wpsnr-avg":
            meta["plane_pooling"] = "mean-plane-db"
        meta["pooling"] = "mean-frame-value" if name == "ms-ssim" else "mean-frame-db"
        scores[name] = MetricScore(float(np.mean(series[name])), series[name], meta)
    return MetricReport(scores)
