"""Binary checkpoint container.

Layout (little-endian): b"LGCK", u32 version, u32 round, u32 hash length,
hash bytes, u32 tensor count, then per tensor: u32 name length, name
(UTF-8), u32 rank, rank x u32 dims, float64 payload.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"LGCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    config_hash: str = ""
    round: int = 0
    version: int = VERSION

    def to_bytes(self) -> bytes:
        h = self.config_hash.encode()
        out = [MAGIC, struct.pack("<III", self.version, self.round, len(h)), h,
               struct.pack("<I", len(self.tensors))]
        for name in sorted(self.tensors):
            arr = np.asarray(self.tensors[name], dtype="<f8")
            nb = name.encode()
            out.append(struct.pack("<I", len(nb)) + nb)
            out.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
            out.append(arr.tobytes(order="C"))
        return b"".join(out)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Checkpoint":
        if buf[:4] != MAGIC:
            raise CheckpointError("not a checkpoint (bad magic bytes)")
        try:
            pos = 4
            version, rnd, hlen = struct.unpack_from("<III", buf, pos)
            pos += 12
            if version != VERSION:
                raise CheckpointError(f"unsupported checkpoint version {version}")
            chash = buf[pos:pos + hlen].decode()
            pos += hlen
            (count,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            tensors = {}
            for _ in range(count):
                (nlen,) = struct.unpack_from("<I", buf, pos)
                pos += 4
                name = buf[pos:pos + nlen].decode()
                pos += nlen
                (rank,) = struct.unpack_from("<I", buf, pos)
                pos += 4
                dims = struct.unpack_from(f"<{rank}I", buf, pos)
                pos += 4 * rank
                n = int(np.prod(dims)) if rank else 1
                if pos + 8 * n > len(buf):
                    raise CheckpointError(f"truncated checkpoint: tensor {name!r} payload incomplete")
                tensors[name] = np.frombuffer(buf, dtype="<f8", count=n, offset=pos).reshape(dims).astype(np.float64)
                pos += 8 * n
        except struct.error as exc:
            raise CheckpointError(f"truncated checkpoint: {exc}") from None
        if pos != len(buf):
            raise CheckpointError("trailing bytes after checkpoint table")
        return cls(tensors, chash, rnd, version)

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())
