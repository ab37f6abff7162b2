"""Little-endian binary framing shared by the corpus, checkpoint and feature files."""

import json
import struct
import zlib

import numpy as np

from h2rat.errors import ChecksumError, FormatError, TruncatedError, VersionError


class Reader:
    def __init__(self, buf, what):
        self.buf = buf
        self.pos = 0
        self.what = what

    def take(self, n):
        if n < 0 or self.pos + n > len(self.buf):
            raise TruncatedError(f"{self.what}: unexpected end of file at byte {self.pos} (wanted {n} more)")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self):
        return self.take(1)[0]

    def u16(self):
        return struct.unpack("<H", self.take(2))[0]

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def f32(self, count):
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float64)

    def text(self):
        raw = self.take(self.u32())
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{self.what}: invalid UTF-8 string") from exc

    def remaining(self):
        return len(self.buf) - self.pos


class Writer:
    def __init__(self):
        self.parts = []

    def raw(self, b):
        self.parts.append(bytes(b))

    def u8(self, v):
        self.parts.append(struct.pack("<B", v))

    def u16(self, v):
        self.parts.append(struct.pack("<H", v))

    def u32(self, v):
        self.parts.append(struct.pack("<I", v))

    def f32(self, arr):
        self.parts.append(np.asarray(arr, dtype="<f4").tobytes())

    def text(self, s):
        b = s.encode("utf-8")
        self.u32(len(b))
        self.parts.append(b)

    def getvalue(self):
        return b"".join(self.parts)


def to_f32(arr):
    """Round to the nearest float32 and return as float64."""
    return np.asarray(arr, dtype=np.float64).astype(np.float32).astype(np.float64)


def open_header(buf, magic, version, what):
    """Check magic and version; returns a Reader positioned after them."""
    if len(buf) == 0:
        raise TruncatedError(f"{what}: file is empty")
    r = Reader(buf, what)
    head = buf[: len(magic)]
    if len(head) < len(magic):
        if magic.startswith(head):
            raise TruncatedError(f"{what}: file ends inside the magic bytes")
        raise FormatError(f"{what}: bad magic {head!r}, expected {magic!r}")
    if head != magic:
        raise FormatError(f"{what}: bad magic {head!r}, expected {magic!r}")
    r.take(len(magic))
    got = r.u32()
    if got != version:
        raise VersionError(f"{what}: unsupported version {got}, expected {version}")
    return r


def read_manifest(r):
    """Length-prefixed UTF-8 JSON document."""
    text = r.text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{r.what}: manifest is not valid JSON: {exc}") from exc


def dump_manifest(doc):
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def seal(body):
    """Append the CRC32 of ``body``."""
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def check_seal(r):
    """Verify that exactly the CRC trailer remains and that it matches."""
    left = r.remaining()
    if left < 4:
        raise TruncatedError(f"{r.what}: missing CRC trailer")
    if left > 4:
        raise FormatError(f"{r.what}: {left - 4} unexpected trailing bytes")
    body = r.buf[: r.pos]
    (stored,) = struct.unpack("<I", r.take(4))
    if zlib.crc32(body) & 0xFFFFFFFF != stored:
        raise ChecksumError(f"{r.what}: CRC32 mismatch")


def crc_ok(buf):
    if len(buf) < 4:
        return False
    (stored,) = struct.unpack("<I", buf[-4:])
    return zlib.crc32(buf[:-4]) & 0xFFFFFFFF == stored
