"""
container.py - The .bmsh bitstream container

Little-endian, fixed-width header followed by the two arithmetic-coded
segments (z first, then y):

    offset  size  field
    0       4     magic b"BMSH"
    4       1     format version (1)
    5       1     model kind (0 factorized, 1 hyperprior)
    6       4     lambda, float32
    10      16    model identity (truncated SHA-256 of the checkpoint)
    26      2     image width
    28      2     image height
    30      2     padded width
    32      2     padded height
    34      4     z segment length in bytes
    38      4     y segment length in bytes
    42      4     CRC32 of bytes 0..41
    46      -     z segment, y segment
"""
import struct
import zlib
from dataclasses import dataclass

from utils import config
from utils.errors import ConfigurationError, CorruptStreamError

_HEADER = struct.Struct("<4sBBf16sHHHHII")
HEADER_BYTES = _HEADER.size + 4
MODEL_KIND_CODES = {"factorized": 0, "hyperprior": 1}
_KIND_NAMES = {code: kind for kind, code in MODEL_KIND_CODES.items()}


@dataclass
class BitstreamContainer:
    model_kind: str
    lmbda: float
    identity: bytes
    width: int
    height: int
    padded_width: int
    padded_height: int
    z_segment: bytes
    y_segment: bytes
    version: int = 1

    def __post_init__(self):
        if self.model_kind not in MODEL_KIND_CODES:
            raise ConfigurationError(f"unknown model kind '{self.model_kind}'")
        if len(self.identity) != 16:
            raise ConfigurationError("model identity must be 16 bytes")
        for name in ("width", "height", "padded_width", "padded_height"):
            value = getattr(self, name)
            if not 1 <= value <= config.MAX_IMAGE_SIDE:
                raise ConfigurationError(f"{name}={value} outside 1..{config.MAX_IMAGE_SIDE}")
        if self.padded_width < self.width or self.padded_height < self.height:
            raise ConfigurationError("padded extents smaller than the image")

    def header(self) -> bytes:
        body = _HEADER.pack(config.CONTAINER_MAGIC, self.version, MODEL_KIND_CODES[self.model_kind], self.lmbda,
                            self.identity, self.width, self.height, self.padded_width, self.padded_height,
                            len(self.z_segment), len(self.y_segment))
        return body + struct.pack("<I", zlib.crc32(body))

    def to_bytes(self) -> bytes:
        return self.header() + self.z_segment + self.y_segment

    @classmethod
    def from_bytes(cls, data: bytes) -> "BitstreamContainer":
        data = bytes(data)
        if len(data) < HEADER_BYTES:
            raise CorruptStreamError(f"container too short for its header ({len(data)} bytes)")
        body = data[:_HEADER.size]
        (crc,) = struct.unpack("<I", data[_HEADER.size:HEADER_BYTES])
        (magic, version, kind_code, lmbda, identity, width, height, padded_width, padded_height,
         z_length, y_length) = _HEADER.unpack(body)

        if magic != config.CONTAINER_MAGIC:
            raise CorruptStreamError(f"not a bitstream container (magic {magic!r})")
        if version != config.CONTAINER_VERSION:
            raise CorruptStreamError(f"unsupported container version {version}")
        if zlib.crc32(body) != crc:
            raise CorruptStreamError("container header checksum mismatch")
        if kind_code not in _KIND_NAMES:
            raise CorruptStreamError(f"unknown model kind code {kind_code}")
        if len(data) != HEADER_BYTES + z_length + y_length:
            raise CorruptStreamError(
                f"segment lengths ({z_length} + {y_length}) do not match payload of {len(data) - HEADER_BYTES} bytes")

        z_segment = data[HEADER_BYTES:HEADER_BYTES + z_length]
        y_segment = data[HEADER_BYTES + z_length:]
        try:
            return cls(_KIND_NAMES[kind_code], lmbda, identity, width, height, padded_width, padded_height,
                       z_segment, y_segment, version)
        except ConfigurationError as e:
            raise CorruptStreamError(f"invalid container header: {e}") from e

    @property
    def total_bytes(self) -> int:
        return HEADER_BYTES + len(self.z_segment) + len(self.y_segment)

    @property
    def pixels(self) -> int:
        return self.width * self.height

    def overhead(self) -> dict:
        """Byte counts per part; header bytes are the container overhead."""
        return {"header": HEADER_BYTES, "z_segment": len(self.z_segment), "y_segment": len(self.y_segment),
                "total": self.total_bytes}

    def rates(self) -> dict:
        """bpp of each part; bpp_side + bpp_y + bpp_overhead == bpp_total."""
        bits = 8.0 / self.pixels
        return {"bpp_total": self.total_bytes * bits, "bpp_side": len(self.z_segment) * bits,
                "bpp_y": len(self.y_segment) * bits, "bpp_overhead": HEADER_BYTES * bits}
