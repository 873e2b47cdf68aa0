"""Binary encoding of local clusterings and communication-cost bookkeeping.

Frame layout (little-endian)::

    magic "DSTC" | version u16 | site_id u32 | epoch u64 | dim u16 | K u32
    K x ( id u64 | n u64 | cf1x dim*f64 | cf2x dim*f64 | cf1t f64 | cf2t f64 )

so a frame is ``24 + K * (32 + 16 * dim)`` bytes.
"""
from __future__ import annotations

import math
import struct
import threading
from collections import defaultdict
from typing import Sequence

from .core import Clustering, MicroCluster
from .errors import FormatError, LengthError, PreconditionError, ValidationError

MAGIC = b"DSTC"
VERSION = 1
HEADER = struct.Struct("<4sHIQHI")
HEADER_SIZE = HEADER.size  # 24


def record_size(dim: int) -> int:
    return 32 + 16 * dim


def frame_size(dim: int, k: int) -> int:
    return HEADER_SIZE + k * record_size(dim)


def _record_struct(dim: int) -> struct.Struct:
    return struct.Struct(f"<QQ{dim}d{dim}ddd")


def serialize(c: Clustering) -> bytes:
    rec = _record_struct(c.dim)
    parts = [HEADER.pack(MAGIC, VERSION, c.site_id, c.epoch, c.dim, c.k)]
    for mc in c.micro_clusters:
        parts.append(rec.pack(mc.id, mc.n, *mc.cf1x, *mc.cf2x, mc.cf1t, mc.cf2t))
    return b"".join(parts)


def deserialize(data: bytes) -> Clustering:
    data = bytes(data)
    if len(data) < HEADER_SIZE:
        raise LengthError(f"frame of {len(data)} bytes is shorter than the header")
    magic, version, site_id, epoch, dim, k = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported format version {version}")
    if dim < 1:
        raise ValidationError("dim must be positive")
    expected = frame_size(dim, k)
    if len(data) != expected:
        raise LengthError(f"frame is {len(data)} bytes, header implies {expected}")
    rec = _record_struct(dim)
    mcs = []
    for i in range(k):
        fields = rec.unpack_from(data, HEADER_SIZE + i * rec.size)
        mc_id, n = fields[0], fields[1]
        cf1x = fields[2:2 + dim]
        cf2x = fields[2 + dim:2 + 2 * dim]
        cf1t, cf2t = fields[-2], fields[-1]
        if n == 0:
            raise ValidationError(f"micro-cluster {mc_id} has zero count")
        if not all(math.isfinite(v) for v in fields[2:]):
            raise ValidationError(f"micro-cluster {mc_id} has a non-finite field")
        try:
            mcs.append(MicroCluster(cf2x=cf2x, cf1x=cf1x, cf2t=cf2t, cf1t=cf1t, n=n, id=mc_id))
        except PreconditionError as e:
            raise ValidationError(str(e)) from e
    try:
        return Clustering(site_id=site_id, epoch=epoch, dim=dim, micro_clusters=tuple(mcs))
    except (PreconditionError, ValueError) as e:
        raise ValidationError(str(e)) from e


def predicted_cost_bits(k_list: Sequence[int], cf_size_bits: float) -> float:
    """Communication-cost predictor: sum(log2 K_i) + N(N+1)/2 * log2 |CF|.

    Note the N(N+1)/2 coefficient: summing log2(|CF| K_i) over sites would
    give N * log2|CF|. Treat the value as a model; measured bytes are the
    number to trust.
    """
    if not k_list:
        raise PreconditionError("need at least one site")
    if any(k < 1 for k in k_list):
        raise PreconditionError("every K_i must be >= 1")
    if not cf_size_bits > 0:
        raise PreconditionError("cf_size_bits must be positive")
    n = len(k_list)
    # fsum is correctly rounded, so equal K_i give exactly n * log2(K)
    return math.fsum(math.log2(k) for k in k_list) + (n + 1) * n / 2 * math.log2(cf_size_bits)


def cf_size_bits(dim: int) -> int:
    """Bits occupied by one micro-cluster record in the frame."""
    return 8 * record_size(dim)


class WireStats:
    """Per (site, epoch) byte and message counters. Thread-safe."""

    def __init__(self):
        self._lock = threading.Lock()
        self.bytes_sent: dict[tuple[int, int], int] = defaultdict(int)
        self.messages: dict[tuple[int, int], int] = defaultdict(int)
        self.predicted_bits: dict[int, float] = {}

    def record(self, site: int, epoch: int, byte_count: int) -> None:
        if byte_count < 0:
            raise PreconditionError("byte_count must be non-negative")
        with self._lock:
            self.bytes_sent[(site, epoch)] += byte_count
            if byte_count:
                self.messages[(site, epoch)] += 1

    def epoch_bytes(self, epoch: int) -> int:
        with self._lock:
            return sum(b for (s, e), b in self.bytes_sent.items() if e == epoch)

    @property
    def total_bytes(self) -> int:
        with self._lock:
            return sum(self.bytes_sent.values())

    def set_prediction(self, epoch: int, k_list: Sequence[int], dim: int) -> float:
        bits = predicted_cost_bits(k_list, cf_size_bits(dim))
        with self._lock:
            self.predicted_bits[epoch] = bits
        return bits


def record_transfer(stats: WireStats, site: int, epoch: int, byte_count: int) -> WireStats:
    stats.record(site, epoch, byte_count)
    return stats
