import io
import zlib

import numpy as np
import pytest

from tdvc.container import (
    GROUP_OVERHEAD,
    HEADER_SIZE,
    PLANE_OVERHEAD,
    GroupRecord,
    PlaneRecord,
    StreamHeader,
    read_stream,
    stream_bitrate_kbps,
    stream_size,
    write_stream,
)
from tdvc.errors import (
    BitstreamError,
    DomainError,
    FormatError,
    UnsupportedVersionError,
)


def random_stream(rng, max_groups=4):
    width = int(rng.integers(1, 256))
    height = int(rng.integers(1, 256))
    group_size = int(rng.integers(1, 12))
    n_groups = int(rng.integers(0, max_groups + 1))
    if n_groups == 0:
        frames = group_size  # header must still satisfy the ceiling identity
        n_groups = 1
    frames = group_size * (n_groups - 1) + int(rng.integers(1, group_size + 1))
    header = StreamHeader(
        frame_width=width,
        frame_height=height,
        frames_total=frames,
        group_size=group_size,
        bit_depth_source=int(rng.choice([8, 16])),
    )
    groups = []
    for _ in range(header.group_count):
        planes = []
        for _ in range(3):
            payload = bytes(rng.integers(0, 256, size=int(rng.integers(0, 64)), dtype=np.uint8))
            planes.append(
                PlaneRecord(
                    rows=int(rng.integers(1, 64)),
                    cols=int(rng.integers(1, 8)),
                    scale=float(rng.random() + 1e-9),
                    offset=float(rng.standard_normal()),
                    kind=str(rng.choice(["internal", "bridged"])),
                    payload_crc=zlib.crc32(payload),
                    payload=payload,
                )
            )
        groups.append(GroupRecord(rank=int(rng.integers(1, 21)), qp=int(rng.integers(0, 52)), planes=planes))
    return header, groups


def serialize(header, groups):
    buf = io.BytesIO()
    count = write_stream(header, groups, buf)
    return buf.getvalue(), count


class TestWriteRead:
    def test_header_only_stream_is_32_bytes(self):
        header = StreamHeader(64, 48, 4, 8, 16)
        assert header.group_count == 1
        # a single group of empty planes demonstrates the layout arithmetic
        planes = [PlaneRecord(1, 1, 1.0, 0.0, "internal", 0, b"") for _ in range(3)]
        data, count = serialize(header, [GroupRecord(1, 4, planes)])
        assert HEADER_SIZE == 32
        assert count == 32 + GROUP_OVERHEAD + 3 * PLANE_OVERHEAD
        assert len(data) == count

    def test_deterministic_bytes(self):
        rng = np.random.default_rng(1)
        header, groups = random_stream(rng)
        a, _ = serialize(header, groups)
        b, _ = serialize(header, groups)
        assert a == b

    def test_roundtrip_structural_identity(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            header, groups = random_stream(rng)
            data, count = serialize(header, groups)
            assert count == len(data) == stream_size(header, groups)
            back_header, back_groups = read_stream(io.BytesIO(data))
            assert back_header == header
            assert back_groups == groups

    def test_byte_count_identity(self):
        rng = np.random.default_rng(3)
        header, groups = random_stream(rng)
        data, count = serialize(header, groups)
        expected = HEADER_SIZE + sum(
            GROUP_OVERHEAD + sum(PLANE_OVERHEAD + len(p.payload) for p in g.planes)
            for g in groups
        )
        assert count == expected

    def test_group_count_mismatch_rejected(self):
        header = StreamHeader(4, 4, 8, 8, 8)
        with pytest.raises(DomainError):
            write_stream(header, [], io.BytesIO())


class TestReadErrors:
    def test_bad_magic(self):
        rng = np.random.default_rng(4)
        data, _ = serialize(*random_stream(rng))
        bad = b"XXXX" + data[4:]
        with pytest.raises(FormatError):
            read_stream(io.BytesIO(bad))

    def test_future_version_rejected(self):
        rng = np.random.default_rng(5)
        data, _ = serialize(*random_stream(rng))
        bad = data[:4] + (2).to_bytes(4, "little") + data[8:]
        with pytest.raises(UnsupportedVersionError):
            read_stream(io.BytesIO(bad))

    def test_truncation_fuzz_never_crashes(self):
        rng = np.random.default_rng(6)
        header, groups = random_stream(rng, max_groups=3)
        data, _ = serialize(header, groups)
        cuts = sorted(set(rng.integers(0, len(data), size=1000).tolist()))
        for cut in cuts:
            with pytest.raises((BitstreamError, FormatError)):
                read_stream(io.BytesIO(data[:cut]))

    def test_truncation_reports_offset(self):
        rng = np.random.default_rng(7)
        data, _ = serialize(*random_stream(rng))
        with pytest.raises(BitstreamError) as err:
            read_stream(io.BytesIO(data[: len(data) - 1]))
        assert err.value.offset is not None


class TestBitrate:
    def test_reference_value(self):
        assert stream_bitrate_kbps(92549, 100, fps=15) == pytest.approx(111.0588, abs=1e-3)

    def test_zero_bytes(self):
        assert stream_bitrate_kbps(0, 10) == 0.0

    def test_linear_in_bytes(self):
        one = stream_bitrate_kbps(1234, 60)
        two = stream_bitrate_kbps(2468, 60)
        assert two == pytest.approx(2 * one, rel=1e-12)

    def test_zero_frames_rejected(self):
        with pytest.raises(DomainError):
            stream_bitrate_kbps(100, 0)

    def test_configurable_fps(self):
        # the duration convention is a free parameter of the kbps figure
        assert stream_bitrate_kbps(92549, 100, fps=5.0) == pytest.approx(37.0196, abs=1e-3)


class TestValidation:
    def test_header_group_count_checked(self):
        with pytest.raises(DomainError):
            StreamHeader(4, 4, 10, 8, 8, group_count=5)

    def test_bad_bit_depth(self):
        with pytest.raises(DomainError):
            StreamHeader(4, 4, 10, 8, 12)

    def test_group_needs_three_planes(self):
        planes = [PlaneRecord(1, 1, 1.0, 0.0, "internal", 0, b"")] * 2
        with pytest.raises(DomainError):
            GroupRecord(1, 4, planes)
