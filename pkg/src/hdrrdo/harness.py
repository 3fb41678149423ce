"""Encode orchestration: mock codec, external encoder adapter, result cache.

Every encode request is fully described by an EncodeSpec and resolved
through a content-addressed cache, so optimisation runs are resumable and
repeated requests never invoke an encoder twice. The mock codec plants a
known rate optimum in the lambda-modifier plane so optimisation claims are
verifiable without a video corpus.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import subprocess
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np

from . import metrics as metrics_mod
from .rdcurve import DEFAULT_QPS, RdCurve, RdPoint
from .y4m import read_y4m

CACHE_ENV_VAR = "HDRRDO_CACHE"
OFFSET_MIN = -12
OFFSET_MAX = 0


class HarnessError(RuntimeError):
    """Encode or adapter failure, with captured diagnostics where available."""


class ConfigError(ValueError):
    """Invalid adapter or template configuration."""


@dataclass(frozen=True)
class ChromaOffsetPolicy:
    """Linear-in-qp negative chroma quantiser offset, shared by Cb and Cr.

    ``scale`` differs from 1 only when capture and representation primaries
    do not match. Defaults are the empirically set ITU values.
    """

    k_offset: float = -0.46
    l_offset: float = 9.26
    scale: float = 1.0

    def to_dict(self) -> dict:
        return {"k_offset": self.k_offset, "l_offset": self.l_offset, "scale": self.scale}


DEFAULT_CHROMA_POLICY = ChromaOffsetPolicy()


def _round_half_away(x: float) -> float:
    return math.floor(x + 0.5) if x >= 0.0 else math.ceil(x - 0.5)


def chroma_qp_offset(qp: int, policy: ChromaOffsetPolicy) -> int:
    """Integer offset clip(round(scale * (k_offset * qp + l_offset)), -12, 0).

    Rounding is half away from zero; the same offset applies to both
    chroma components.
    """
    raw = policy.scale * (policy.k_offset * qp + policy.l_offset)
    return int(min(OFFSET_MAX, max(OFFSET_MIN, _round_half_away(raw))))


def chroma_qp_offset_exact(qp: float, policy: ChromaOffsetPolicy) -> float:
    """The offset before rounding, clipped to the same range."""
    raw = policy.scale * (policy.k_offset * qp + policy.l_offset)
    return min(float(OFFSET_MAX), max(float(OFFSET_MIN), raw))


@dataclass(frozen=True)
class EncodeSpec:
    """A fully determined encode request."""

    clip_id: str
    qp: int
    k1: float = 1.0  # lambda multiplier for keyframes
    k2: float = 1.0  # lambda multiplier for golden/alt-ref frames
    chroma_policy: ChromaOffsetPolicy | None = None
    adapter: str = "mock"
    preset: str = "ra-speed6"

    def __post_init__(self):
        if not 0 <= self.qp <= 63:
            raise ConfigError(f"qp {self.qp} outside [0, 63]")
        if self.k1 <= 0.0 or self.k2 <= 0.0:
            raise ConfigError("lambda multipliers must be positive")

    def to_dict(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "qp": self.qp,
            "k1": self.k1,
            "k2": self.k2,
            "chroma_policy": self.chroma_policy.to_dict() if self.chroma_policy else None,
            "adapter": self.adapter,
            "preset": self.preset,
        }

    def digest(self, adapter_fingerprint: str = "") -> str:
        payload = json.dumps(
            {"spec": self.to_dict(), "adapter_fingerprint": adapter_fingerprint},
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()


@dataclass(frozen=True)
class EncodeResult:
    """Measured outcome of one encode."""

    bitrate_bps: float
    frames: int
    wall_ms: float
    adapter: str
    spec_digest: str
    qualities: dict | None = None  # mock quality vector, metric -> score
    decoded_path: str | None = None
    log_digest: str = ""

    def __post_init__(self):
        if self.bitrate_bps <= 0.0:
            raise HarnessError(f"bitrate must be positive, got {self.bitrate_bps}")

    def to_dict(self) -> dict:
        return {
            "bitrate_bps": self.bitrate_bps,
            "frames": self.frames,
            "wall_ms": self.wall_ms,
            "adapter": self.adapter,
            "spec_digest": self.spec_digest,
            "qualities": self.qualities,
            "decoded_path": self.decoded_path,
            "log_digest": self.log_digest,
        }

    @staticmethod
    def from_dict(data: dict) -> "EncodeResult":
        return EncodeResult(**data)


def _default_qdc(q_index: float, coeff: float) -> float:
    # Stand-in for the encoder's internal quantiser-index lookup; callers
    # may supply the real table through MockCodecModel.qdc_lookup.
    return float(q_index)


@dataclass(frozen=True)
class MockCodecModel:
    """Analytic stand-in for an encoder with a planted rate optimum.

    rate(qp, k1, k2) = base_rate * 2^(-qp / rate_halving_qp)
                       * (1 + curv_k1 (ln k1 - ln opt_k1)^2
                            + curv_k2 (ln k2 - ln opt_k2)^2)
    so the rate penalty is strictly convex in (ln k1, ln k2) and minimal
    exactly at the planted optimum. Quality per metric is linear in qp and
    independent of the multipliers, which gives the BD-Rate against the
    (1, 1) baseline the closed form (1 + p(k)) / (1 + p(1, 1)) - 1.

    When ``opt_chroma`` is set the rate also responds to the unrounded
    chroma offset curve, so the offset search has a smooth cost surface
    with its minimum at the planted offset pair.
    """

    base_rate_bps: float = 8e6
    rate_halving_qp: float = 8.0
    opt_k1: float = 1.3
    opt_k2: float = 1.6
    curv_k1: float = 0.8
    curv_k2: float = 0.8
    quality_lines: Mapping[str, tuple[float, float]] = field(
        default_factory=lambda: {"psnr-y": (58.0, 0.55)}
    )
    lambda_coeff: float = 3.7  # rate-distortion constant, valid range [3.2, 4.2]
    opt_chroma: ChromaOffsetPolicy | None = None
    offset_rate_gain: float = 0.0
    frames: int = 30
    qdc_lookup: Callable[[float, float], float] | None = None

    def __post_init__(self):
        if not 3.2 <= self.lambda_coeff <= 4.2:
            raise ConfigError(f"lambda_coeff {self.lambda_coeff} outside [3.2, 4.2]")
        if self.base_rate_bps <= 0.0 or self.rate_halving_qp <= 0.0:
            raise ConfigError("base rate and halving interval must be positive")
        if self.curv_k1 < 0.0 or self.curv_k2 < 0.0:
            raise ConfigError("curvatures must be non-negative")

    def lambda_for(self, qp: int, multiplier: float = 1.0) -> float:
        """lambda = multiplier * coeff * qdc(q_index)^2 with q_index = 4 qp."""
        lookup = self.qdc_lookup or _default_qdc
        qdc = lookup(4.0 * qp, self.lambda_coeff)
        return multiplier * self.lambda_coeff * qdc * qdc

    def multiplier_penalty(self, k1: float, k2: float) -> float:
        return self.curv_k1 * (math.log(k1) - math.log(self.opt_k1)) ** 2 + self.curv_k2 * (
            math.log(k2) - math.log(self.opt_k2)
        ) ** 2

    def _offset_penalty(self, qp: int, policy: ChromaOffsetPolicy | None) -> float:
        if self.offset_rate_gain == 0.0:
            return 0.0
        target = chroma_qp_offset_exact(qp, self.opt_chroma) if self.opt_chroma else 0.0
        actual = chroma_qp_offset_exact(qp, policy) if policy else 0.0
        return self.offset_rate_gain * (actual - target) ** 2

    def rate_for(self, spec: EncodeSpec) -> float:
        base = self.base_rate_bps * 2.0 ** (-spec.qp / self.rate_halving_qp)
        return (
            base
            * (1.0 + self.multiplier_penalty(spec.k1, spec.k2))
            * (1.0 + self._offset_penalty(spec.qp, spec.chroma_policy))
        )

    def quality_for(self, metric: str, qp: int) -> float:
        if metric not in self.quality_lines:
            raise HarnessError(f"mock model has no quality line for {metric!r}")
        intercept, slope = self.quality_lines[metric]
        return intercept - slope * qp

    def to_dict(self) -> dict:
        return {
            "base_rate_bps": self.base_rate_bps,
            "rate_halving_qp": self.rate_halving_qp,
            "opt_k1": self.opt_k1,
            "opt_k2": self.opt_k2,
            "curv_k1": self.curv_k1,
            "curv_k2": self.curv_k2,
            "quality_lines": {k: list(v) for k, v in sorted(self.quality_lines.items())},
            "lambda_coeff": self.lambda_coeff,
            "opt_chroma": self.opt_chroma.to_dict() if self.opt_chroma else None,
            "offset_rate_gain": self.offset_rate_gain,
            "frames": self.frames,
        }

    @staticmethod
    def from_dict(data: dict) -> "MockCodecModel":
        data = dict(data)
        if data.get("opt_chroma"):
            data["opt_chroma"] = ChromaOffsetPolicy(**data["opt_chroma"])
        data["quality_lines"] = {k: tuple(v) for k, v in data.get("quality_lines", {}).items()}
        return MockCodecModel(**data)


class Adapter(Protocol):
    name: str

    def fingerprint(self) -> str: ...

    def run(self, spec: EncodeSpec, digest: str) -> EncodeResult: ...


class MockAdapter:
    """Deterministic in-process encoder backed by per-clip mock models."""

    name = "mock"

    def __init__(self, models: Mapping[str, MockCodecModel]):
        self.models = dict(models)
        self.invocations = 0
        self._lock = threading.Lock()

    def fingerprint(self) -> str:
        payload = json.dumps(
            {clip: model.to_dict() for clip, model in sorted(self.models.items())},
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()

    def metric_names(self, clip_id: str) -> tuple[str, ...]:
        return tuple(sorted(self.models[clip_id].quality_lines))

    def run(self, spec: EncodeSpec, digest: str) -> EncodeResult:
        with self._lock:
            self.invocations += 1
        if spec.clip_id not in self.models:
            raise HarnessError(f"unknown mock clip {spec.clip_id!r}")
        model = self.models[spec.clip_id]
        qualities = {m: model.quality_for(m, spec.qp) for m in model.quality_lines}
        return EncodeResult(
            bitrate_bps=model.rate_for(spec),
            frames=model.frames,
            wall_ms=0.0,
            adapter=self.name,
            spec_digest=digest,
            qualities=qualities,
        )


_PLACEHOLDERS = ("input", "output", "qp", "k1", "k2", "cb_offset", "cr_offset")


class ExternalAdapter:
    """Drives an encoder binary through shell-free argv templates.

    The encode template must contain {input}, {output} and {qp}; {k1},
    {k2}, {cb_offset} and {cr_offset} are substituted when present and
    rejected at encode time if a spec needs them but the template cannot
    express them. The decode template must contain {input} and {output}.
    """

    name = "external"

    def __init__(
        self,
        encode_argv: Sequence[str],
        decode_argv: Sequence[str],
        clips: Mapping[str, str | Path],
        workdir: str | Path,
        timeout_s: float = 600.0,
    ):
        self.encode_argv = list(encode_argv)
        self.decode_argv = list(decode_argv)
        joined = " ".join(self.encode_argv)
        for required in ("{input}", "{output}", "{qp}"):
            if required not in joined:
                raise ConfigError(f"encode template lacks {required}")
        joined_dec = " ".join(self.decode_argv)
        for required in ("{input}", "{output}"):
            if required not in joined_dec:
                raise ConfigError(f"decode template lacks {required}")
        self.clips = {k: Path(v) for k, v in clips.items()}
        self.workdir = Path(workdir)
        self.workdir.mkdir(parents=True, exist_ok=True)
        self.timeout_s = timeout_s
        self.invocations = 0
        self._lock = threading.Lock()
        self._stream_meta: dict[str, tuple[int, int, int]] = {}

    def fingerprint(self) -> str:
        payload = json.dumps(
            {
                "encode": self.encode_argv,
                "decode": self.decode_argv,
                "clips": {k: str(v) for k, v in sorted(self.clips.items())},
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()

    def source_path(self, clip_id: str) -> Path:
        if clip_id not in self.clips:
            raise HarnessError(f"unknown clip {clip_id!r}")
        return self.clips[clip_id]

    def _stream_facts(self, clip_id: str) -> tuple[int, int, int]:
        """(frame count, fps_num, fps_den) of the source, cached."""
        if clip_id not in self._stream_meta:
            info, frames = read_y4m(self.source_path(clip_id))
            self._stream_meta[clip_id] = (len(frames), info.fps_num, info.fps_den)
        return self._stream_meta[clip_id]

    def _run_argv(self, argv: list[str], what: str) -> subprocess.CompletedProcess:
        try:
            proc = subprocess.run(
                argv, capture_output=True, timeout=self.timeout_s, text=True
            )
        except subprocess.TimeoutExpired as exc:
            raise HarnessError(f"{what} timed out after {self.timeout_s}s: {argv}") from exc
        if proc.returncode != 0:
            tail = (proc.stderr or "")[-800:]
            raise HarnessError(f"{what} exited {proc.returncode}: {tail}")
        return proc

    def run(self, spec: EncodeSpec, digest: str) -> EncodeResult:
        with self._lock:
            self.invocations += 1
        source = self.source_path(spec.clip_id)
        joined = " ".join(self.encode_argv)
        if spec.k1 != 1.0 and "{k1}" not in joined:
            raise HarnessError("template cannot express k1")
        if spec.k2 != 1.0 and "{k2}" not in joined:
            raise HarnessError("template cannot express k2")
        if spec.chroma_policy is not None and "{cb_offset}" not in joined:
            raise HarnessError("template cannot express chroma offsets")

        offset = chroma_qp_offset(spec.qp, spec.chroma_policy) if spec.chroma_policy else 0
        outdir = self.workdir / digest
        outdir.mkdir(parents=True, exist_ok=True)
        encoded = outdir / "bitstream.bin"
        decoded = outdir / "decoded.y4m"
        fields = {
            "input": str(source),
            "output": str(encoded),
            "qp": str(spec.qp),
            "k1": repr(spec.k1),
            "k2": repr(spec.k2),
            "cb_offset": str(offset),
            "cr_offset": str(offset),
        }
        argv = [token.format(**fields) for token in self.encode_argv]
        start = time.monotonic()
        proc = self._run_argv(argv, "encoder")
        if not encoded.exists():
            raise HarnessError(f"encoder produced no output: {argv}")
        dec_fields = {"input": str(encoded), "output": str(decoded)}
        self._run_argv([t.format(**dec_fields) for t in self.decode_argv], "decoder")
        if not decoded.exists():
            raise HarnessError("decoder produced no output")
        wall_ms = 1000.0 * (time.monotonic() - start)

        n_frames, fps_num, fps_den = self._stream_facts(spec.clip_id)
        bitrate = encoded.stat().st_size * 8.0 * (fps_num / fps_den) / n_frames
        return EncodeResult(
            bitrate_bps=bitrate,
            frames=n_frames,
            wall_ms=wall_ms,
            adapter=self.name,
            spec_digest=digest,
            decoded_path=str(decoded),
            log_digest=hashlib.sha256((proc.stdout + proc.stderr).encode()).hexdigest(),
        )


class CodecHarness:
    """Resolves encode specs through registered adapters with caching.

    The cache directory comes from the constructor argument, else the
    HDRRDO_CACHE environment variable, else ``.hdrrdo-cache`` in the
    working directory. Writers are serialised per cache key, so concurrent
    identical specs trigger a single encoder invocation.
    """

    def __init__(self, adapters: Mapping[str, Adapter], cache_dir: str | Path | None = None):
        self.adapters = dict(adapters)
        cache_dir = cache_dir or os.environ.get(CACHE_ENV_VAR) or ".hdrrdo-cache"
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self._key_locks: dict[str, threading.Lock] = {}
        self._registry_lock = threading.Lock()

    def _lock_for(self, digest: str) -> threading.Lock:
        with self._registry_lock:
            return self._key_locks.setdefault(digest, threading.Lock())

    def _cache_path(self, digest: str) -> Path:
        return self.cache_dir / digest[:2] / f"{digest}.json"

    def spec_digest(self, spec: EncodeSpec) -> str:
        adapter = self.adapters.get(spec.adapter)
        if adapter is None:
            raise HarnessError(f"no adapter registered for {spec.adapter!r}")
        return spec.digest(adapter.fingerprint())

    def encode(self, spec: EncodeSpec) -> EncodeResult:
        """Deterministic encode: identical specs return the cached result."""
        digest = self.spec_digest(spec)
        path = self._cache_path(digest)
        with self._lock_for(digest):
            if path.exists():
                return EncodeResult.from_dict(json.loads(path.read_text()))
            result = self.adapters[spec.adapter].run(spec, digest)
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            tmp.write_text(json.dumps(result.to_dict(), sort_keys=True))
            os.replace(tmp, path)
            return result

    def _metric_cache_path(self, digest: str) -> Path:
        return self.cache_dir / digest[:2] / f"{digest}.metrics.json"

    def _measure_external(self, spec: EncodeSpec, result: EncodeResult, metric: str) -> float:
        digest = self.spec_digest(spec)
        path = self._metric_cache_path(digest)
        cached = json.loads(path.read_text()) if path.exists() else {}
        if metric in cached:
            return cached[metric]
        adapter = self.adapters[spec.adapter]
        _, ref_frames = read_y4m(adapter.source_path(spec.clip_id))
        _, test_frames = read_y4m(result.decoded_path)
        report = metrics_mod.compute_all(ref_frames, test_frames, metric_set=[metric])
        value = report.aggregate(metric)
        cached[metric] = value
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(cached, sort_keys=True))
        os.replace(tmp, path)
        return value

    def quality_of(self, spec: EncodeSpec, result: EncodeResult, metric: str) -> float:
        if result.qualities is not None:
            if metric not in result.qualities:
                raise HarnessError(f"mock result has no quality for {metric!r}")
            return result.qualities[metric]
        return self._measure_external(spec, result, metric)

    def rd_curve(
        self,
        clip_id: str,
        metric: str,
        k1: float = 1.0,
        k2: float = 1.0,
        qps: Sequence[int] = DEFAULT_QPS,
        chroma_policy: ChromaOffsetPolicy | None = None,
        adapter: str = "mock",
        preset: str = "ra-speed6",
    ) -> RdCurve:
        """One operating point per qp, measured under the given metric."""
        points = []
        for qp in qps:
            spec = EncodeSpec(
                clip_id=clip_id,
                qp=qp,
                k1=k1,
                k2=k2,
                chroma_policy=chroma_policy,
                adapter=adapter,
                preset=preset,
            )
            result = self.encode(spec)
            quality = self.quality_of(spec, result, metric)
            points.append(RdPoint(rate_bps=result.bitrate_bps, quality=quality, qp=qp))
        config = f"k1={k1:g},k2={k2:g},co={'on' if chroma_policy else 'off'}"
        return RdCurve.from_points(points, clip_id=clip_id, config=config, metric=metric)

    def available_metrics(self, clip_id: str, adapter: str = "mock") -> tuple[str, ...]:
        backend = self.adapters[adapter]
        if isinstance(backend, MockAdapter):
            return backend.metric_names(clip_id)
        return metrics_mod.ALL_METRICS


DEMO_METRICS = ("de100", "psnrl100", "wpsnr-y", "wpsnr-avg", "ms-ssim", "hdrvqm")


def demo_corpus(
    n_clips: int = 3,
    metrics: Sequence[str] = DEMO_METRICS,
    opt_k1: float = 1.3,
    opt_k2: float = 1.6,
    chroma: bool = False,
) -> dict[str, MockCodecModel]:
    """Deterministic spread of mock clips for demos and end-to-end tests."""
    rng = np.random.default_rng(1234)
    corpus = {}
    for index in range(n_clips):
        lines = {}
        for metric in metrics:
            intercept = 40.0 + 20.0 * rng.random()
            slope = 0.35 + 0.3 * rng.random()
            lines[metric] = (round(intercept, 3), round(slope, 3))
        corpus[f"mock-{index:02d}"] = MockCodecModel(
            base_rate_bps=float(4e6 + 4e6 * rng.random()),
            rate_halving_qp=float(7.0 + 3.0 * rng.random()),
            opt_k1=opt_k1,
            opt_k2=opt_k2,
            curv_k1=0.6 + 0.3 * float(rng.random()),
            curv_k2=0.6 + 0.3 * float(rng.random()),
            quality_lines=lines,
            opt_chroma=ChromaOffsetPolicy(k_offset=-0.49, l_offset=9.26) if chroma else None,
            offset_rate_gain=0.002 if chroma else 0.0,
        )
    return corpus


def harness_from_corpus(
    corpus: Mapping[str, MockCodecModel] | str | Path | None,
    cache_dir: str | Path | None = None,
) -> CodecHarness:
    """Build a mock-adapter harness from models, a corpus JSON file, or the demo."""
    if corpus is None:
        models = demo_corpus()
    elif isinstance(corpus, (str, Path)):
        data = json.loads(Path(corpus).read_text())
        models = {clip: MockCodecModel.from_dict(entry) for clip, entry in data["clips"].items()}
    else:
        models = dict(corpus)
    return CodecHarness({"mock": MockAdapter(models)}, cache_dir=cache_dir)
