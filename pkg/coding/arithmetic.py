"""
arithmetic.py - Non-adaptive binary arithmetic coder

32-bit low/high registers with the classic half/quarter renormalization and
pending-bit (underflow) counting. Probabilities arrive as 16-bit integers
p1 in [1, 65535], meaning P(bit = 1) = p1 / 65536. Bytes are emitted
MSB first.
"""
import numbers

from utils.errors import CorruptStreamError

PRECISION = 32
PROBABILITY_SCALE = 1 << 16
_MASK = (1 << PRECISION) - 1
_HALF = 1 << (PRECISION - 1)
_QUARTER = 1 << (PRECISION - 2)
_THREE_QUARTERS = _HALF + _QUARTER


def _check_probability(p1):
    if not isinstance(p1, numbers.Integral) or not 1 <= p1 < PROBABILITY_SCALE:
        raise ValueError(f"probability must be an int in [1, 65535], got {p1!r}")


def _split(low, high, p1):
    # zero occupies [low, split], one occupies [split + 1, high]
    span = high - low + 1
    return low + ((span * (PROBABILITY_SCALE - p1)) >> 16) - 1


class BinaryArithmeticEncoder:
    def __init__(self):
        self.low = 0
        self.high = _MASK
        self.pending = 0
        self.bits_written = 0
        self._buffer = bytearray()
        self._byte = 0
        self._fill = 0
        self._finished = False

    def _write(self, bit):
        self._byte = (self._byte << 1) | bit
        self._fill += 1
        self.bits_written += 1
        if self._fill == 8:
            self._buffer.append(self._byte)
            self._byte = 0
            self._fill = 0

    def _write_with_pending(self, bit):
        self._write(bit)
        for _ in range(self.pending):
            self._write(bit ^ 1)
        self.pending = 0

    def encode_bit(self, bit, p1):
        """Code one binary decision with P(1) = p1 / 65536."""
        if self._finished:
            raise RuntimeError("encoder already finished")
        _check_probability(p1)
        p1 = int(p1)

        split = _split(self.low, self.high, p1)
        if bit:
            self.low = split + 1
        else:
            self.high = split

        while True:
            if self.high < _HALF:
                self._write_with_pending(0)
            elif self.low >= _HALF:
                self._write_with_pending(1)
                self.low -= _HALF
                self.high -= _HALF
            elif self.low >= _QUARTER and self.high < _THREE_QUARTERS:
                self.pending += 1
                self.low -= _QUARTER
                self.high -= _QUARTER
            else:
                break
            self.low = self.low << 1
            self.high = (self.high << 1) | 1

    def finish(self):
        """Flush two disambiguating bits, zero-pad to a byte and return the stream."""
        if not self._finished:
            self.pending += 1
            self._write_with_pending(0 if self.low < _QUARTER else 1)
            while self._fill:
                self._write(0)
                self.bits_written -= 1
            self._finished = True
        return bytes(self._buffer)


class BinaryArithmeticDecoder:
    """Mirror of BinaryArithmeticEncoder. Bits past the end of `data` read as zero."""

    # The encoder's flush leaves the decoder at most 30 zero bits short.
    MAX_OVERRUN_BITS = PRECISION

    def __init__(self, data):
        self.data = bytes(data)
        self._total_bits = 8 * len(self.data)
        self._position = 0
        self.low = 0
        self.high = _MASK
        self.code = 0
        for _ in range(PRECISION):
            self.code = (self.code << 1) | self._read()

    def _read(self):
        position = self._position
        self._position += 1
        if position >= self._total_bits:
            if position - self._total_bits >= self.MAX_OVERRUN_BITS:
                raise CorruptStreamError(
                    f"arithmetic stream exhausted ({len(self.data)} bytes) while decoding")
            return 0
        return (self.data[position >> 3] >> (7 - (position & 7))) & 1

    def decode_bit(self, p1):
        _check_probability(p1)
        p1 = int(p1)

        split = _split(self.low, self.high, p1)
        if self.code <= split:
            bit = 0
            self.high = split
        else:
            bit = 1
            self.low = split + 1

        while True:
            if self.high < _HALF:
                pass
            elif self.low >= _HALF:
                self.low -= _HALF
                self.high -= _HALF
                self.code -= _HALF
            elif self.low >= _QUARTER and self.high < _THREE_QUARTERS:
                self.low -= _QUARTER
                self.high -= _QUARTER
                self.code -= _QUARTER
            else:
                break
            self.low = self.low << 1
            self.high = (self.high << 1) | 1
            self.code = (self.code << 1) | self._read()
        return bit

    @property
    def bits_consumed(self):
        return min(self._position, self._total_bits)
