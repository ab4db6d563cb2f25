"""Adaptive binary range coder (carry-less, LZMA-style renormalization).

Probabilities are 11-bit fixed point estimating P(bit = 0) and adapt with a
shift-by-5 update. Bytes come out most-significant first and every payload
is self-contained: fresh contexts per payload, no cross-payload state.
"""

from __future__ import annotations

from .errors import BitstreamError

PROB_BITS = 11
PROB_ONE = 1 << PROB_BITS
PROB_INIT = PROB_ONE >> 1
ADAPT_SHIFT = 5
TOP = 1 << 24
MASK32 = 0xFFFFFFFF


def new_contexts(n: int) -> list[int]:
    return [PROB_INIT] * n


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = MASK32
        self.cache = 0
        self.cache_size = 1
        self.out = bytearray()

    def encode_bit(self, probs: list[int], idx: int, bit: int):
        p = probs[idx]
        bound = (self.range >> PROB_BITS) * p
        if bit:
            self.low += bound
            self.range -= bound
            probs[idx] = p - (p >> ADAPT_SHIFT)
        else:
            self.range = bound
            probs[idx] = p + ((PROB_ONE - p) >> ADAPT_SHIFT)
        while self.range < TOP:
            self.range = (self.range << 8) & MASK32
            self._shift_low()

    def encode_bypass(self, bit: int):
        self.range >>= 1
        if bit:
            self.low += self.range
        while self.range < TOP:
            self.range = (self.range << 8) & MASK32
            self._shift_low()

    def _shift_low(self):
        # carry propagates through any cached 0xFF run
        if self.low < 0xFF000000 or self.low > MASK32:
            carry = self.low >> 32
            byte = self.cache
            while True:
                self.out.append((byte + carry) & 0xFF)
                byte = 0xFF
                self.cache_size -= 1
                if self.cache_size == 0:
                    break
            self.cache = (self.low >> 24) & 0xFF
        self.cache_size += 1
        self.low = (self.low & 0x00FFFFFF) << 8

    def finish(self) -> bytes:
        for _ in range(5):
            self._shift_low()
        return bytes(self.out)


class RangeDecoder:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0
        self.range = MASK32
        self.code = 0
        for _ in range(5):
            self.code = ((self.code << 8) | self._byte()) & MASK32

    def _byte(self) -> int:
        if self.pos >= len(self.data):
            raise BitstreamError("coded payload exhausted", offset=self.pos)
        b = self.data[self.pos]
        self.pos += 1
        return b

    def decode_bit(self, probs: list[int], idx: int) -> int:
        p = probs[idx]
        bound = (self.range >> PROB_BITS) * p
        if self.code < bound:
            bit = 0
            self.range = bound
            probs[idx] = p + ((PROB_ONE - p) >> ADAPT_SHIFT)
        else:
            bit = 1
            self.code -= bound
            self.range -= bound
            probs[idx] = p - (p >> ADAPT_SHIFT)
        while self.range < TOP:
            self.code = ((self.code << 8) | self._byte()) & MASK32
            self.range = (self.range << 8) & MASK32
        return bit

    def decode_bypass(self) -> int:
        self.range >>= 1
        if self.code >= self.range:
            self.code -= self.range
            bit = 1
        else:
            bit = 0
        while self.range < TOP:
            self.code = ((self.code << 8) | self._byte()) & MASK32
            self.range = (self.range << 8) & MASK32
        return bit
