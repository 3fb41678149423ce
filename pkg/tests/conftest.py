import numpy as np
import pytest

from hdrrdo.y4m import BT2020_PQ, BT709_GAMMA, StreamInfo, make_frame


def build_info(
    width=16,
    height=16,
    bit_depth=10,
    subsampling=444,
    colour=BT2020_PQ,
    fps=(24, 1),
    colour_range="limited",
):
    return StreamInfo(
        width=width,
        height=height,
        fps_num=fps[0],
        fps_den=fps[1],
        bit_depth=bit_depth,
        subsampling=subsampling,
        colour=colour,
        colour_range=colour_range,
    )


def uniform_frame(info, y, cb=None, cr=None):
    mid = 1 << (info.bit_depth - 1)
    cb = mid if cb is None else cb
    cr = mid if cr is None else cr
    cw, ch = info.chroma_size
    return make_frame(
        np.full((info.height, info.width), y, dtype=info.dtype),
        np.full((ch, cw), cb, dtype=info.dtype),
        np.full((ch, cw), cr, dtype=info.dtype),
        info,
    )


def random_frame(info, rng, lo=0, hi=None):
    hi = info.peak + 1 if hi is None else hi
    cw, ch = info.chroma_size
    return make_frame(
        rng.integers(lo, hi, size=(info.height, info.width)).astype(info.dtype),
        rng.integers(lo, hi, size=(ch, cw)).astype(info.dtype),
        rng.integers(lo, hi, size=(ch, cw)).astype(info.dtype),
        info,
    )


def noisy_frame(frame, rng, amplitude):
    """Frame plus rounded Gaussian noise of the given code amplitude."""
    info = frame.info

    def perturb(plane):
        noise = np.rint(amplitude * rng.standard_normal(plane.shape))
        return np.clip(plane.astype(np.int64) + noise, 0, info.peak).astype(info.dtype)

    return make_frame(perturb(frame.y), perturb(frame.cb), perturb(frame.cr), info)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
