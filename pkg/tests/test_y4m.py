import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdrrdo.y4m import (
    BT709_GAMMA,
    BT2020_PQ,
    CorruptSampleWarning,
    PlanarFrame,
    StreamInfo,
    Y4mError,
    Y4mReader,
    lanczos5_resample,
    make_frame,
    parse_y4m_header,
    read_y4m,
    upsample_chroma_444,
    write_y4m,
    y4m_bytes,
)

from conftest import build_info, random_frame, uniform_frame


def test_parse_header_10bit_420():
    info, offset = parse_y4m_header(b"YUV4MPEG2 W1920 H1080 F24:1 Ip A1:1 C420p10\nFRAME\n")
    assert (info.width, info.height) == (1920, 1080)
    assert (info.fps_num, info.fps_den) == (24, 1)
    assert info.bit_depth == 10
    assert info.subsampling == 420
    assert offset == len(b"YUV4MPEG2 W1920 H1080 F24:1 Ip A1:1 C420p10\n")


def test_parse_header_8bit_444():
    info, _ = parse_y4m_header(b"YUV4MPEG2 W2 H2 F1:1 C444\n")
    assert (info.width, info.height) == (2, 2)
    assert (info.fps_num, info.fps_den) == (1, 1)
    assert info.bit_depth == 8
    assert info.subsampling == 444


def test_parse_header_missing_magic():
    with pytest.raises(Y4mError, match="magic"):
        parse_y4m_header(b"JUNK W2 H2 F1:1\n")


def test_parse_header_unsupported_colourspace():
    with pytest.raises(Y4mError, match="colourspace"):
        parse_y4m_header(b"YUV4MPEG2 W2 H2 F1:1 C422\n")


def test_parse_header_malformed_rational():
    with pytest.raises(Y4mError, match="rational"):
        parse_y4m_header(b"YUV4MPEG2 W2 H2 F24 C444\n")


def test_parse_header_missing_required():
    with pytest.raises(Y4mError):
        parse_y4m_header(b"YUV4MPEG2 H2 F1:1\n")
    with pytest.raises(Y4mError):
        parse_y4m_header(b"YUV4MPEG2 W2 H2\n")


def test_parse_preserves_unknown_tags():
    info, _ = parse_y4m_header(b"YUV4MPEG2 W2 H2 F1:1 C444 XFOO=bar Zmystery\n")
    assert "XFOO=bar" in info.extra_tags
    assert "Zmystery" in info.extra_tags


def test_default_colour_tags_by_depth():
    info10, _ = parse_y4m_header(b"YUV4MPEG2 W2 H2 F1:1 C444p10\n")
    info8, _ = parse_y4m_header(b"YUV4MPEG2 W2 H2 F1:1 C444\n")
    assert info10.colour == BT2020_PQ
    assert info8.colour == BT709_GAMMA


def test_read_constant_frame():
    data = b"YUV4MPEG2 W2 H2 F1:1 C444\nFRAME\n" + b"\x80" * 12
    reader = Y4mReader(data)
    frame = reader.read_frame()
    assert np.all(frame.y == 128) and np.all(frame.cb == 128) and np.all(frame.cr == 128)
    assert reader.read_frame() is None


def test_read_truncated_frame():
    data = b"YUV4MPEG2 W2 H2 F1:1 C444\nFRAME\n" + b"\x80" * 7
    with pytest.raises(Y4mError, match="truncated"):
        Y4mReader(data).read_frame()


def test_read_10bit_accepts_max_and_clamps_overrange():
    header = b"YUV4MPEG2 W1 H1 F1:1 C444p10\nFRAME\n"
    ok = header + np.array([0x03FF, 512, 512], dtype="<u2").tobytes()
    frame = Y4mReader(ok).read_frame()
    assert frame.y[0, 0] == 1023

    bad = header + np.array([0x0400, 512, 512], dtype="<u2").tobytes()
    with pytest.warns(CorruptSampleWarning):
        frame = Y4mReader(bad).read_frame()
    assert frame.y[0, 0] == 1023


def test_roundtrip_two_frame_420p10(rng):
    info = build_info(width=6, height=4, bit_depth=10, subsampling=420)
    frames = [random_frame(info, rng) for _ in range(2)]
    parsed_info, parsed = read_y4m(y4m_bytes(frames, info))
    assert parsed_info == info
    assert len(parsed) == 2
    assert all(a.same_pixels(b) for a, b in zip(frames, parsed))


def test_write_empty_stream():
    info = build_info(width=4, height=4)
    parsed_info, parsed = read_y4m(y4m_bytes([], info))
    assert parsed_info == info
    assert parsed == []


def test_write_mismatched_frame_rejected(rng):
    info = build_info(width=4, height=4)
    other = build_info(width=6, height=4)
    with pytest.raises(Y4mError, match="match"):
        y4m_bytes([random_frame(other, rng)], info)


def test_write_y4m_returns_byte_count(tmp_path, rng):
    info = build_info(width=4, height=2, bit_depth=8)
    frames = [random_frame(info, rng)]
    path = tmp_path / "out.y4m"
    count = write_y4m(frames, info, path)
    assert count == path.stat().st_size


@st.composite
def stream_and_frames(draw):
    info = build_info(
        width=draw(st.integers(1, 9)),
        height=draw(st.integers(1, 9)),
        bit_depth=draw(st.sampled_from([8, 10])),
        subsampling=draw(st.sampled_from([420, 444])),
        colour=draw(st.sampled_from([BT2020_PQ, BT709_GAMMA])),
        fps=(draw(st.integers(1, 120)), draw(st.integers(1, 1001))),
        colour_range=draw(st.sampled_from(["limited", "full"])),
    )
    seed = draw(st.integers(0, 2**32 - 1))
    n = draw(st.integers(0, 3))
    frames = [random_frame(info, np.random.default_rng(seed + i)) for i in range(n)]
    return info, frames


@given(stream_and_frames())
@settings(max_examples=40, deadline=None)
def test_roundtrip_random_streams(case):
    info, frames = case
    parsed_info, parsed = read_y4m(y4m_bytes(frames, info))
    assert parsed_info == info
    assert len(parsed) == len(frames)
    assert all(a.same_pixels(b) for a, b in zip(frames, parsed))


# --- chroma upsampling ------------------------------------------------------


def test_upsample_constant_dc():
    info = build_info(width=7, height=5, subsampling=420)
    frame = uniform_frame(info, 700, 333, 444)
    up = upsample_chroma_444(frame)
    assert up.info.subsampling == 444
    assert up.cb.shape == (5, 7) and np.all(up.cb == 333)
    assert np.all(up.cr == 444)
    assert np.array_equal(up.y, frame.y)


def test_upsample_identity_on_444(rng):
    frame = random_frame(build_info(subsampling=444), rng)
    assert upsample_chroma_444(frame) is frame


def _upsample_oracle(plane):
    # Direct statement of the co-sited rule: vertical pass first, then
    # horizontal, each doubling with integer mean of the two neighbours
    # (half rounded up) and edge replication.
    def double_rows(p):
        h, w = p.shape
        out = np.zeros((2 * h, w), dtype=np.int64)
        for r in range(2 * h):
            src, phase = divmod(r, 2)
            for c in range(w):
                if phase == 0:
                    out[r, c] = p[src, c]
                else:
                    out[r, c] = (p[src, c] + p[min(src + 1, h - 1), c] + 1) // 2
        return out

    return double_rows(double_rows(plane.astype(np.int64)).T).T


def test_upsample_impulse_matches_direct_oracle():
    info = build_info(width=8, height=8, subsampling=420)
    cb = np.zeros((4, 4), dtype=np.uint16)
    cb[1, 2] = 100
    frame = make_frame(np.zeros((8, 8), dtype=np.uint16), cb, cb.copy(), info)
    up = upsample_chroma_444(frame)
    assert np.array_equal(up.cb.astype(np.int64), _upsample_oracle(cb))


# --- Lanczos resampling -----------------------------------------------------


def test_lanczos_constant_preserved():
    info = build_info(width=17, height=11, subsampling=420)
    frame = uniform_frame(info, 512, 300, 800)
    for tw, th in ((5, 3), (40, 22), (17, 11)):
        out = lanczos5_resample(frame, tw, th)
        assert np.all(out.y == 512) and np.all(out.cb == 300) and np.all(out.cr == 800)


def test_lanczos_identity_bit_exact(rng):
    frame = random_frame(build_info(width=24, height=16, subsampling=420), rng)
    out = lanczos5_resample(frame, 24, 16)
    assert out.same_pixels(frame)


def test_lanczos_rejects_bad_target(rng):
    frame = random_frame(build_info(width=8, height=8), rng)
    with pytest.raises(ValueError):
        lanczos5_resample(frame, 0, 4)


def _lanczos_oracle_axis(src, n_dst, a=5):
    # Naive direct evaluation of the documented kernel, one output at a time.
    n_src = src.shape[0]
    scale = n_dst / n_src
    shrink = min(1.0, scale)
    support = a / shrink
    out = np.zeros((n_dst,) + src.shape[1:], dtype=np.float64)
    for i in range(n_dst):
        center = (i + 0.5) / scale - 0.5
        acc = np.zeros(src.shape[1:], dtype=np.float64)
        wsum = 0.0
        for j in range(math.ceil(center - support), math.floor(center + support) + 1):
            x = (j - center) * shrink
            if abs(x) >= a:
                continue
            if x == 0.0:
                w = 1.0
            else:
                px = math.pi * x
                w = (math.sin(px) / px) * (math.sin(px / a) / (px / a))
            acc = acc + w * src[min(max(j, 0), n_src - 1)].astype(np.float64)
            wsum += w
        out[i] = acc / wsum
    return out


def test_lanczos_downscale_matches_direct_oracle():
    # 3840x2160 diagonal ramp halved to 1920x1080.
    rows = np.arange(2160, dtype=np.uint32)[:, None]
    cols = np.arange(3840, dtype=np.uint32)[None, :]
    luma = ((rows * 3 + cols) % 1024).astype(np.uint16)
    info = build_info(width=3840, height=2160, subsampling=420)
    cw, ch = info.chroma_size
    frame = make_frame(
        luma,
        np.full((ch, cw), 512, np.uint16),
        np.full((ch, cw), 512, np.uint16),
        info,
    )
    out = lanczos5_resample(frame, 1920, 1080)

    expected = _lanczos_oracle_axis(_lanczos_oracle_axis(luma, 1080).T, 1920).T
    expected = np.clip(np.rint(expected), 0, 1023)
    assert np.abs(out.y.astype(np.int64) - expected.astype(np.int64)).max() <= 1
    assert np.all(out.cb == 512) and np.all(out.cr == 512)


@given(st.integers(0, 2**32 - 1), st.integers(3, 12), st.integers(3, 12))
@settings(max_examples=25, deadline=None)
def test_resample_output_in_range(seed, tw, th):
    frame = random_frame(build_info(width=9, height=7), np.random.default_rng(seed))
    out = lanczos5_resample(frame, tw, th)
    for plane in (out.y, out.cb, out.cr):
        assert plane.min() >= 0 and plane.max() <= out.info.peak
