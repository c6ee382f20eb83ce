"""Binary container framing shared by dataset, sample and checkpoint files.

Layout: ``b"GGAN"``, format version (u8), record kind (u8), payload, CRC-32 of
every preceding byte (u32).  Integers are little-endian.
"""
from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"GGAN"
FORMAT_VERSION = 1

KIND_DATASET = ord("D")
KIND_SAMPLES = ord("S")
KIND_PARAMS = ord("P")


class ContainerError(Exception):
    pass


class VersionError(ContainerError):
    pass


class ChecksumError(ContainerError):
    pass


class TruncatedError(ContainerError):
    pass


class Writer:
    def __init__(self, kind: int):
        self._parts: list[bytes] = [MAGIC, struct.pack("<BB", FORMAT_VERSION, kind)]

    def u8(self, v: int) -> None:
        self._parts.append(struct.pack("<B", v))

    def u16(self, v: int) -> None:
        self._parts.append(struct.pack("<H", v))

    def u32(self, v: int) -> None:
        self._parts.append(struct.pack("<I", v))

    def i64(self, v: int) -> None:
        self._parts.append(struct.pack("<q", v))

    def text(self, s: str) -> None:
        raw = s.encode("utf-8")
        self.u16(len(raw))
        self._parts.append(raw)

    def raw(self, b: bytes) -> None:
        self._parts.append(bytes(b))

    def u8_array(self, a: np.ndarray) -> None:
        self._parts.append(np.ascontiguousarray(a, dtype=np.uint8).tobytes())

    def f64_array(self, a: np.ndarray) -> None:
        self._parts.append(np.ascontiguousarray(a, dtype="<f8").tobytes())

    def getvalue(self) -> bytes:
        body = b"".join(self._parts)
        return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.getvalue())


class Reader:
    def __init__(self, blob: bytes, kind: int, source: str = "<bytes>"):
        self.source = source
        if len(blob) < 10:
            raise TruncatedError(f"{source}: file too short ({len(blob)} bytes)")
        if blob[:4] != MAGIC:
            raise ContainerError(f"{source}: bad magic {blob[:4]!r}")
        version = blob[4]
        if version != FORMAT_VERSION:
            raise VersionError(f"{source}: format version {version}, expected {FORMAT_VERSION}")
        (stored,) = struct.unpack("<I", blob[-4:])
        if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored:
            raise ChecksumError(f"{source}: checksum mismatch")
        if blob[5] != kind:
            raise ContainerError(
                f"{source}: record kind {chr(blob[5])!r}, expected {chr(kind)!r}"
            )
        self._buf = memoryview(blob)[:-4]
        self._pos = 6

    @classmethod
    def open(cls, path: str | Path, kind: int) -> Reader:
        return cls(Path(path).read_bytes(), kind, source=str(path))

    def _take(self, n: int) -> memoryview:
        if self._pos + n > len(self._buf):
            raise TruncatedError(f"{self.source}: truncated at byte {self._pos}")
        out = self._buf[self._pos : self._pos + n]
        self._pos += n
        return out

    def u8(self) -> int:
        return self._take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self._take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def i64(self) -> int:
        return struct.unpack("<q", self._take(8))[0]

    def text(self) -> str:
        n = self.u16()
        return bytes(self._take(n)).decode("utf-8")

    def u8_array(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        return np.frombuffer(self._take(n), dtype=np.uint8).reshape(shape).copy()

    def f64_array(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        return np.frombuffer(self._take(8 * n), dtype="<f8").reshape(shape).astype(np.float64)

    def done(self) -> None:
        if self._pos != len(self._buf):
            raise ContainerError(f"{self.source}: {len(self._buf) - self._pos} trailing bytes")
