"""Versioned bitstream container for coded depth-video streams.

Layout (all integers little-endian, fixed width):

    header (32 bytes):
        magic            4s   b"TDVC"
        version          u32  currently 1
        frame_width      u32
        frame_height     u32
        frames_total     u32
        group_size       u32
        bit_depth_source u32  8 or 16
        group_count      u32  == ceil(frames_total / group_size)

    then group_count group records, each:
        rank             u32
        qp               u32
        exactly 3 plane records:
            rows         u32
            cols         u32
            scale        f64
            offset       f64
            kind         u8   0 = internal, 1 = bridged
            payload_crc  u32
            payload_len  u32
            payload      payload_len bytes

Total stream size is exactly 32 + sum over groups of
(8 + sum over planes of (33 + payload_len)).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

from .errors import BitstreamError, DomainError, FormatError, TdvcError, UnsupportedVersionError

MAGIC = b"TDVC"
VERSION = 1
PLANES_PER_GROUP = 3

_HEADER = struct.Struct("<4sIIIIIII")
_GROUP_HEAD = struct.Struct("<II")
_PLANE_HEAD = struct.Struct("<IIddBII")

HEADER_SIZE = _HEADER.size  # 32
GROUP_OVERHEAD = _GROUP_HEAD.size  # 8
PLANE_OVERHEAD = _PLANE_HEAD.size  # 33

_KIND_CODES = {"internal": 0, "bridged": 1}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


@dataclass
class StreamHeader:
    frame_width: int
    frame_height: int
    frames_total: int
    group_size: int
    bit_depth_source: int
    group_count: int = field(default=None)
    version: int = VERSION

    def __post_init__(self):
        for name in ("frame_width", "frame_height", "frames_total", "group_size"):
            if getattr(self, name) < 1:
                raise DomainError(f"{name} must be >= 1")
        if self.bit_depth_source not in (8, 16):
            raise DomainError(f"bit_depth_source must be 8 or 16, got {self.bit_depth_source}")
        expected = math.ceil(self.frames_total / self.group_size)
        if self.group_count is None:
            self.group_count = expected
        elif self.group_count != expected:
            raise DomainError(
                f"group_count {self.group_count} != ceil({self.frames_total}/{self.group_size})"
            )


@dataclass
class PlaneRecord:
    rows: int
    cols: int
    scale: float
    offset: float
    kind: str
    payload_crc: int
    payload: bytes

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise DomainError("plane dims must be >= 1")
        if self.kind not in _KIND_CODES:
            raise DomainError(f"unknown plane kind {self.kind!r}")


@dataclass
class GroupRecord:
    rank: int
    qp: int
    planes: list[PlaneRecord]

    def __post_init__(self):
        if self.rank < 1:
            raise DomainError(f"rank must be >= 1, got {self.rank}")
        if not 0 <= self.qp <= 51:
            raise DomainError(f"qp must be in [0, 51], got {self.qp}")
        if len(self.planes) != PLANES_PER_GROUP:
            raise DomainError(
                f"group must carry exactly {PLANES_PER_GROUP} planes, got {len(self.planes)}"
            )


def stream_size(header: StreamHeader, groups: list[GroupRecord]) -> int:
    total = HEADER_SIZE
    for g in groups:
        total += GROUP_OVERHEAD
        for p in g.planes:
            total += PLANE_OVERHEAD + len(p.payload)
    return total


def write_stream(header: StreamHeader, groups: list[GroupRecord], sink) -> int:
    """Serialize to a binary file-like sink; returns the byte count."""
    if len(groups) != header.group_count:
        raise DomainError(f"header says {header.group_count} groups, got {len(groups)}")
    written = 0

    def put(data: bytes):
        nonlocal written
        try:
            sink.write(data)
        except OSError as exc:
            raise TdvcError(f"write failed after {written} bytes: {exc}") from exc
        written += len(data)

    put(
        _HEADER.pack(
            MAGIC,
            header.version,
            header.frame_width,
            header.frame_height,
            header.frames_total,
            header.group_size,
            header.bit_depth_source,
            header.group_count,
        )
    )
    for g in groups:
        put(_GROUP_HEAD.pack(g.rank, g.qp))
        for p in g.planes:
            put(
                _PLANE_HEAD.pack(
                    p.rows,
                    p.cols,
                    p.scale,
                    p.offset,
                    _KIND_CODES[p.kind],
                    p.payload_crc,
                    len(p.payload),
                )
            )
            put(p.payload)
    return written


class _Reader:
    def __init__(self, source):
        self.source = source
        self.offset = 0

    def take(self, n: int) -> bytes:
        data = self.source.read(n)
        if data is None or len(data) != n:
            got = 0 if data is None else len(data)
            raise BitstreamError(
                f"stream truncated: wanted {n} bytes, got {got}", offset=self.offset
            )
        self.offset += n
        return data


def read_stream(source) -> tuple[StreamHeader, list[GroupRecord]]:
    """Parse a stream from a binary file-like source; validates structure."""
    r = _Reader(source)
    raw = r.take(HEADER_SIZE)
    magic, version, width, height, frames, group_size, bit_depth, group_count = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version > VERSION:
        raise UnsupportedVersionError(f"stream version {version} > supported {VERSION}")
    if version < 1:
        raise FormatError(f"impossible stream version {version}")
    try:
        header = StreamHeader(
            frame_width=width,
            frame_height=height,
            frames_total=frames,
            group_size=group_size,
            bit_depth_source=bit_depth,
            group_count=group_count,
            version=version,
        )
    except DomainError as exc:
        raise FormatError(f"inconsistent header: {exc}") from exc
    groups = []
    for _ in range(group_count):
        rank, qp = _GROUP_HEAD.unpack(r.take(GROUP_OVERHEAD))
        planes = []
        for _ in range(PLANES_PER_GROUP):
            rows, cols, scale, offset, kind_code, crc, length = _PLANE_HEAD.unpack(
                r.take(PLANE_OVERHEAD)
            )
            if kind_code not in _KIND_NAMES:
                raise BitstreamError(f"unknown plane kind code {kind_code}", offset=r.offset)
            payload = r.take(length)
            try:
                planes.append(
                    PlaneRecord(rows, cols, scale, offset, _KIND_NAMES[kind_code], crc, payload)
                )
            except DomainError as exc:
                raise BitstreamError(f"invalid plane record: {exc}", offset=r.offset) from exc
        try:
            groups.append(GroupRecord(rank, qp, planes))
        except DomainError as exc:
            raise BitstreamError(f"invalid group record: {exc}", offset=r.offset) from exc
    return header, groups


def stream_bitrate_kbps(byte_count: int, frames_total: int, fps: float = 15.0) -> float:
    """Bitrate of a stream covering frames_total frames at the given rate."""
    if frames_total <= 0:
        raise DomainError(f"frames_total must be positive, got {frames_total}")
    if fps <= 0:
        raise DomainError(f"fps must be positive, got {fps}")
    if byte_count < 0:
        raise DomainError("byte_count must be nonnegative")
    duration_s = frames_total / fps
    return byte_count * 8.0 / 1000.0 / duration_s
