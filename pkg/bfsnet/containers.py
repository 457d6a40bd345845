"""
Little-endian binary containers shared by datasets, models and traces.

Every container starts with an 8-byte magic whose last byte (for the
versioned families) is the format version.
"""
import hashlib
import struct

import numpy as np

from .errors import BadMagicError, DataError, DimensionMismatchError, TruncatedFileError, VersionMismatchError

F64 = np.dtype("<f8")


def sha256_file(path):
    """Hex digest of a file's content."""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def sha256_arrays(*arrays):
    """Hex digest over the little-endian float64 bytes of several arrays."""
    digest = hashlib.sha256()
    for array in arrays:
        digest.update(np.ascontiguousarray(array, dtype=F64).tobytes())
    return digest.hexdigest()


def pack_floats(values):
    return np.asarray(values, dtype=F64).tobytes()


def pack_float_list(values):
    """Length-prefixed (u32) list of f64."""
    values = np.asarray(values, dtype=F64)
    return struct.pack("<I", values.size) + values.tobytes()


class ContainerReader:
    """
    Sequential reader over a container's bytes.

    Args:
        data: Raw file content
        path: Source path, used in error messages
    """

    def __init__(self, data, path="<memory>"):
        self.data = data
        self.path = path
        self.offset = 0

    @classmethod
    def open(cls, path, magic, family_prefix=None):
        """
        Read a whole file and check its magic.

        Args:
            path: File to read
            magic: Expected 8-byte magic
            family_prefix: Leading bytes shared by all versions of the format;
                a file that matches the prefix but not the magic is a
                version mismatch rather than a bad magic

        Returns:
            ContainerReader positioned after the magic
        """
        try:
            with open(path, "rb") as f:
                data = f.read()
        except FileNotFoundError as e:
            raise DataError(f"{path}: no such file") from e
        reader = cls(data, str(path))
        head = reader.take(len(magic))
        if head != magic:
            if family_prefix and head.startswith(family_prefix):
                raise VersionMismatchError(
                    f"{path}: unsupported version {head!r}, expected {magic!r}"
                )
            raise BadMagicError(f"{path}: bad magic {head!r}, expected {magic!r}")
        return reader

    def take(self, size):
        end = self.offset + size
        if end > len(self.data):
            raise TruncatedFileError(
                f"{self.path}: truncated, needed {size} bytes at offset {self.offset}, "
                f"only {len(self.data) - self.offset} left"
            )
        chunk = self.data[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, count):
        return np.frombuffer(self.take(count * F64.itemsize), dtype=F64).astype(np.float64)

    def float_list(self):
        (count,) = self.unpack("<I")
        return self.floats(count)

    def finish(self):
        """Fail if bytes remain after the declared content."""
        extra = len(self.data) - self.offset
        if extra:
            raise DimensionMismatchError(
                f"{self.path}: {extra} unexpected trailing bytes after declared content"
            )
