"""Factor-matrix plane coder: normalization, DPCM quantization, entropy coding.

A factor matrix becomes a 16-bit grayscale plane via an affine map of its
value range onto [0, 65535]. Planes are coded with a single closed-loop
DPCM chain in column-major scan order (each factor column is traversed
top to bottom, so prediction follows the smooth rank-1 component vectors);
only the very first sample is predicted by 2^15. Residuals are uniformly
quantized with the HEVC-style step 2^((QP-4)/6) and entropy coded with the
adaptive binary range coder. An optional bridge hands packed planes to an
external encoder binary instead.
"""

from __future__ import annotations

import json
import shlex
import subprocess
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BitstreamError, DomainError, ExternalToolError
from .range_coder import RangeDecoder, RangeEncoder, new_contexts
from .tensor_ops import KruskalModel

SAMPLE_MAX = (1 << 16) - 1
FIRST_PRED = float(1 << 15)
MAX_LEVEL_BITS = 20

KIND_INTERNAL = "internal"
KIND_BRIDGED = "bridged"


def qstep_for(qp: int) -> float:
    if not 0 <= qp <= 51:
        raise DomainError(f"qp must be in [0, 51], got {qp}")
    return 2.0 ** ((qp - 4) / 6.0)


def round_half_away(x):
    """Round to nearest with halves away from zero (deterministic)."""
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass
class PackedPlane:
    """Normalized 16-bit plane; value = offset + scale * sample."""

    rows: int
    cols: int
    samples: np.ndarray
    scale: float
    offset: float


@dataclass
class QuantizedPlane:
    """Entropy-coded plane plus everything needed to decode it."""

    rows: int
    cols: int
    scale: float
    offset: float
    qp: int
    payload: bytes
    payload_crc: int
    kind: str = KIND_INTERNAL

    @property
    def qstep(self) -> float:
        return qstep_for(self.qp)


def pack_factor(matrix, weights=None) -> PackedPlane:
    """Map a factor matrix onto integer samples in [0, 65535].

    ``weights`` (column scales) are folded in before normalization when
    given. Constant matrices collapse to sample 0 with the constant stored
    as the offset.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise DomainError(f"plane source must be 2-D, got shape {m.shape}")
    if weights is not None:
        m = m * np.asarray(weights, dtype=np.float64)[None, :]
    if not np.all(np.isfinite(m)):
        raise DomainError("plane source contains non-finite values")
    lo = float(m.min())
    hi = float(m.max())
    if hi == lo:
        samples = np.zeros_like(m)
        return PackedPlane(m.shape[0], m.shape[1], samples, 1.0, lo)
    scale = (hi - lo) / SAMPLE_MAX
    samples = np.clip(round_half_away((m - lo) / scale), 0, SAMPLE_MAX)
    return PackedPlane(m.shape[0], m.shape[1], samples, scale, lo)


def unpack_factor(plane: PackedPlane) -> np.ndarray:
    return plane.offset + plane.scale * plane.samples


class _LevelContexts:
    """Adaptive contexts for one plane: zero flag, sign, magnitude bins."""

    def __init__(self):
        self.zero = new_contexts(2)
        self.sign = new_contexts(1)
        self.length = new_contexts(MAX_LEVEL_BITS)


def _encode_level(enc: RangeEncoder, ctx: _LevelContexts, level: int, prev_nonzero: bool):
    nz = level != 0
    enc.encode_bit(ctx.zero, 1 if prev_nonzero else 0, 1 if nz else 0)
    if not nz:
        return
    enc.encode_bit(ctx.sign, 0, 1 if level < 0 else 0)
    mag = abs(level)
    k = mag.bit_length() - 1
    for i in range(k):
        enc.encode_bit(ctx.length, min(i, MAX_LEVEL_BITS - 1), 1)
    enc.encode_bit(ctx.length, min(k, MAX_LEVEL_BITS - 1), 0)
    for i in range(k - 1, -1, -1):
        enc.encode_bypass((mag >> i) & 1)


def _decode_level(dec: RangeDecoder, ctx: _LevelContexts, prev_nonzero: bool) -> int:
    if not dec.decode_bit(ctx.zero, 1 if prev_nonzero else 0):
        return 0
    negative = dec.decode_bit(ctx.sign, 0)
    k = 0
    while dec.decode_bit(ctx.length, min(k, MAX_LEVEL_BITS - 1)):
        k += 1
        if k > 31:
            raise BitstreamError("level magnitude overflow", offset=dec.pos)
    mag = 1 << k
    for i in range(k - 1, -1, -1):
        if dec.decode_bypass():
            mag |= 1 << i
    return -mag if negative else mag


def encode_plane(plane: PackedPlane, qp: int) -> QuantizedPlane:
    """DPCM + quantize + entropy code one packed plane."""
    q = qstep_for(qp)
    seq = plane.samples.ravel(order="F")
    enc = RangeEncoder()
    ctx = _LevelContexts()
    recon = FIRST_PRED
    prev_nonzero = False
    for s in seq:
        level = int(round_half_away((s - recon) / q))
        _encode_level(enc, ctx, level, prev_nonzero)
        recon += level * q
        prev_nonzero = level != 0
    payload = enc.finish()
    return QuantizedPlane(
        rows=plane.rows,
        cols=plane.cols,
        scale=plane.scale,
        offset=plane.offset,
        qp=qp,
        payload=payload,
        payload_crc=zlib.crc32(payload),
    )


def decode_plane(qplane: QuantizedPlane) -> PackedPlane:
    """Inverse entropy coding, dequantization, and prediction.

    Reconstructed samples are the quantizer's real-valued output (within
    qstep/2 of the source samples); downstream consumers clamp as needed.
    """
    if qplane.kind != KIND_INTERNAL:
        raise ExternalToolError(
            "bridged plane payloads need the external decoder; internal decode unsupported"
        )
    if zlib.crc32(qplane.payload) != qplane.payload_crc:
        raise BitstreamError("payload checksum mismatch", offset=len(qplane.payload))
    q = qplane.qstep
    count = qplane.rows * qplane.cols
    dec = RangeDecoder(qplane.payload)
    ctx = _LevelContexts()
    out = np.empty(count, dtype=np.float64)
    recon = FIRST_PRED
    prev_nonzero = False
    for i in range(count):
        level = _decode_level(dec, ctx, prev_nonzero)
        recon += level * q
        out[i] = recon
        prev_nonzero = level != 0
    samples = out.reshape((qplane.rows, qplane.cols), order="F")
    return PackedPlane(qplane.rows, qplane.cols, samples, qplane.scale, qplane.offset)


@dataclass
class ExternalEncoder:
    """Bridge to an external encoder binary.

    ``template`` is a command line with the substitutable tokens {input},
    {output}, {qp}, {width}, {height} and {frames}. Planes are written as
    16-bit little-endian raw pictures padded to even dimensions, with a JSON
    sidecar describing the geometry; the tool's output bitstream is embedded
    verbatim. A nonzero exit or missing binary raises unless
    ``fallback_internal`` is set.
    """

    template: str
    fallback_internal: bool = False
    timeout: float = field(default=300.0)

    def encode_plane(self, plane: PackedPlane, qp: int) -> QuantizedPlane:
        try:
            payload = self._run(plane, qp)
        except ExternalToolError:
            if self.fallback_internal:
                return encode_plane(plane, qp)
            raise
        return QuantizedPlane(
            rows=plane.rows,
            cols=plane.cols,
            scale=plane.scale,
            offset=plane.offset,
            qp=qp,
            payload=payload,
            payload_crc=zlib.crc32(payload),
            kind=KIND_BRIDGED,
        )

    def _run(self, plane: PackedPlane, qp: int) -> bytes:
        rows = plane.rows + (plane.rows & 1)
        cols = plane.cols + (plane.cols & 1)
        padded = np.pad(
            plane.samples.astype(np.uint16),
            ((0, rows - plane.rows), (0, cols - plane.cols)),
            mode="edge",
        )
        with tempfile.TemporaryDirectory(prefix="tdvc-bridge-") as tmp:
            tmpdir = Path(tmp)
            src = tmpdir / "plane.raw"
            dst = tmpdir / "plane.bin"
            src.write_bytes(padded.astype("<u2").tobytes())
            descriptor = {
                "width": cols,
                "height": rows,
                "frames": 1,
                "bit_depth": 16,
                "byte_order": "little",
                "source_rows": plane.rows,
                "source_cols": plane.cols,
            }
            (tmpdir / "plane.json").write_text(json.dumps(descriptor))
            cmd = [
                part.format(
                    input=str(src),
                    output=str(dst),
                    qp=qp,
                    width=cols,
                    height=rows,
                    frames=1,
                )
                for part in shlex.split(self.template)
            ]
            try:
                proc = subprocess.run(
                    cmd, capture_output=True, text=True, timeout=self.timeout
                )
            except FileNotFoundError as exc:
                raise ExternalToolError(f"bridge binary not found: {cmd[0]}") from exc
            except subprocess.TimeoutExpired as exc:
                raise ExternalToolError(f"bridge timed out after {self.timeout}s") from exc
            if proc.returncode != 0:
                raise ExternalToolError(
                    f"bridge exited with {proc.returncode}: "
                    f"stderr={proc.stderr.strip()!r} stdout={proc.stdout.strip()!r}"
                )
            if not dst.exists():
                raise ExternalToolError("bridge produced no output file")
            return dst.read_bytes()


def encode_model(
    model: KruskalModel, qp: int, bridge: ExternalEncoder | None = None
) -> list[QuantizedPlane]:
    """One coded plane per factor matrix, weights folded into the last mode."""
    planes = []
    last = len(model.factors) - 1
    for n, f in enumerate(model.factors):
        weights = model.weights if n == last else None
        packed = pack_factor(f, weights)
        if bridge is not None:
            planes.append(bridge.encode_plane(packed, qp))
        else:
            planes.append(encode_plane(packed, qp))
    return planes


def decode_model(planes: list[QuantizedPlane]) -> KruskalModel:
    """Rebuild a (weight-folded) model from coded planes."""
    if not planes:
        raise DomainError("cannot decode a model without planes")
    factors = [unpack_factor(decode_plane(p)) for p in planes]
    return KruskalModel(factors)
