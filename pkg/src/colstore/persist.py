"""Durable engine metadata: block transaction log, checkpoints and manifest.

All integers are big-endian. Layouts are described in docs/data_dir.md.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from typing import Iterator, Optional

from .fileio import replace_durable
from .hashing import HASH_LEN, H

DYN, WAIT, RUN = 0, 1, 2


class CorruptCheckpoint(RuntimeError):
    pass


# -- transaction log --------------------------------------------------------

_BLOCK_HEAD = struct.Struct(">QI")
_PUT = 64
_COMMIT = b"CMIT"


class TxLog:
    """Append-only log of committed blocks: (blk, puts) records, each closed
    by a commit marker. A record without its marker is an uncommitted tail."""

    def __init__(self, path: str, durable: bool = True):
        self.path = path
        self.durable = durable
        self.index: list[tuple[int, int, int]] = []  # (blk, start, end)
        if not os.path.exists(path):
            open(path, "wb").close()
        self._scan()
        self._f = open(path, "r+b")
        self._f.seek(0, os.SEEK_END)

    def _scan(self) -> None:
        size = os.path.getsize(self.path)
        good = 0
        with open(self.path, "rb") as f:
            while True:
                head = f.read(_BLOCK_HEAD.size)
                if len(head) < _BLOCK_HEAD.size:
                    break
                blk, n = _BLOCK_HEAD.unpack(head)
                body = n * _PUT
                if good + _BLOCK_HEAD.size + body + len(_COMMIT) > size:
                    break
                f.seek(body, os.SEEK_CUR)
                if f.read(len(_COMMIT)) != _COMMIT:
                    break
                end = good + _BLOCK_HEAD.size + body + len(_COMMIT)
                self.index.append((blk, good, end))
                good = end
        if good != size:
            with open(self.path, "r+b") as f:
                f.truncate(good)

    @property
    def last_block(self) -> Optional[int]:
        return self.index[-1][0] if self.index else None

    def append(self, blk: int, puts: list[tuple[bytes, bytes]]) -> None:
        if self.index and blk <= self.index[-1][0]:
            raise ValueError("blocks must be appended in increasing order")
        start = self._f.tell()
        self._f.write(_BLOCK_HEAD.pack(blk, len(puts)) + b"".join(a + v for a, v in puts) + _COMMIT)
        self._f.flush()
        if self.durable:
            os.fsync(self._f.fileno())
        self.index.append((blk, start, self._f.tell()))

    def blocks(self, lo: int, hi: Optional[int] = None) -> Iterator[tuple[int, list[tuple[bytes, bytes]]]]:
        """Committed blocks with lo <= blk <= hi, in order."""
        with open(self.path, "rb") as f:
            for blk, start, end in self.index:
                if blk < lo or (hi is not None and blk > hi):
                    continue
                f.seek(start)
                raw = f.read(end - start)
                _, n = _BLOCK_HEAD.unpack_from(raw, 0)
                base = _BLOCK_HEAD.size
                yield blk, [(raw[base + i * _PUT:base + i * _PUT + 32], raw[base + i * _PUT + 32:base + (i + 1) * _PUT])
                            for i in range(n)]

    def truncate_after(self, blk: int) -> None:
        """Drop every block above ``blk``."""
        keep = [r for r in self.index if r[0] <= blk]
        end = keep[-1][2] if keep else 0
        self._f.truncate(end)
        self._f.seek(end)
        self._f.flush()
        os.fsync(self._f.fileno())
        self.index = keep

    def size(self) -> int:
        return self.index[-1][2] if self.index else 0

    def close(self) -> None:
        self._f.close()


# -- checkpoints ------------------------------------------------------------

_REF = struct.Struct(">BBI32sQQ")


@dataclass(frozen=True)
class TierRef:
    kind: int       # DYN, WAIT or RUN
    level: int
    run_id: int
    hash: bytes
    first_blk: int  # block range covered by the tier; first > last when empty
    last_blk: int


@dataclass(frozen=True)
class Checkpoint:
    """The root hash list as it stood at the end of block ``height``."""

    height: int
    entries: tuple

    @property
    def hashes(self) -> list[bytes]:
        return [e.hash for e in self.entries]

    @property
    def digest(self) -> bytes:
        return H(b"".join(self.hashes))

    def encode(self) -> bytes:
        body = struct.pack(">QH", self.height, len(self.entries))
        body += b"".join(_REF.pack(e.kind, e.level, e.run_id, e.hash, e.first_blk, e.last_blk)
                         for e in self.entries)
        return struct.pack(">I", len(body)) + body + H(body)[:4]

    @classmethod
    def decode_all(cls, data: bytes) -> tuple[list["Checkpoint"], int]:
        """Checkpoints in ``data`` and the byte length of the valid prefix."""
        out = []
        off = 0
        while off + 4 <= len(data):
            (n,) = struct.unpack_from(">I", data, off)
            end = off + 4 + n + 4
            if end > len(data):
                break
            body = data[off + 4:off + 4 + n]
            if H(body)[:4] != data[off + 4 + n:end]:
                break
            height, count = struct.unpack_from(">QH", body, 0)
            if len(body) != 10 + count * _REF.size:
                break
            refs = tuple(TierRef(*_REF.unpack_from(body, 10 + i * _REF.size)) for i in range(count))
            out.append(cls(height, refs))
            off = end
        return out, off


class CheckpointStore:
    def __init__(self, path: str):
        self.path = path
        self.items: list[Checkpoint] = []
        if os.path.exists(path):
            with open(path, "rb") as f:
                self.items, _ = Checkpoint.decode_all(f.read())

    def keep(self, count: int) -> None:
        """Drop records beyond the first ``count`` (uncommitted tail)."""
        if count > len(self.items):
            raise CorruptCheckpoint(f"manifest expects {count} checkpoints, found {len(self.items)}")
        if count < len(self.items) or os.path.getsize(self.path) != self._size(count):
            self.items = self.items[:count]
            self._rewrite()

    def _size(self, count: int) -> int:
        return sum(len(c.encode()) for c in self.items[:count])

    def _rewrite(self) -> None:
        replace_durable(self.path, b"".join(c.encode() for c in self.items))

    def append(self, ckpt: Checkpoint) -> None:
        with open(self.path, "ab") as f:
            f.write(ckpt.encode())
            f.flush()
            os.fsync(f.fileno())
        self.items.append(ckpt)

    def replace_from(self, idx: int, new: list[Checkpoint]) -> None:
        self.items = self.items[:idx] + list(new)
        self._rewrite()

    def size(self) -> int:
        return os.path.getsize(self.path) if os.path.exists(self.path) else 0


# -- manifest ---------------------------------------------------------------

_MAGIC = b"CLSM"
_RUNREF = struct.Struct(">BIQQ32s")
_NONE = 2**64 - 1


@dataclass(frozen=True)
class RunRef:
    level: int
    run_id: int
    first_blk: int
    last_blk: int
    root: bytes


@dataclass
class Manifest:
    """Which files make up the committed index, and the group boundaries."""

    dyn_from: int
    wait_range: Optional[tuple[int, int]]
    blocked: bool
    n_checkpoints: int
    next_run_id: int
    runs: list = field(default_factory=list)  # RunRef, oldest first within a level
    log_limit: Optional[int] = None  # log blocks above this are void (reorg in progress)

    def encode(self) -> bytes:
        w0, w1 = self.wait_range if self.wait_range else (_NONE, _NONE)
        limit = _NONE if self.log_limit is None else self.log_limit
        body = _MAGIC + struct.pack(">QQQBIIQ", self.dyn_from, w0, w1, int(self.blocked),
                                    self.n_checkpoints, self.next_run_id, limit)
        body += struct.pack(">I", len(self.runs))
        body += b"".join(_RUNREF.pack(r.level, r.run_id, r.first_blk, r.last_blk, r.root) for r in self.runs)
        return body + H(body)

    @classmethod
    def decode(cls, data: bytes) -> "Manifest":
        body, check = data[:-HASH_LEN], data[-HASH_LEN:]
        if len(data) < HASH_LEN + 4 or H(body) != check or body[:4] != _MAGIC:
            raise CorruptCheckpoint("manifest checksum mismatch")
        try:
            dyn_from, w0, w1, blocked, nck, nxt, limit = struct.unpack_from(">QQQBIIQ", body, 4)
            off = 4 + struct.calcsize(">QQQBIIQ")
            (nr,) = struct.unpack_from(">I", body, off)
            off += 4
            runs = [RunRef(*_RUNREF.unpack_from(body, off + i * _RUNREF.size)) for i in range(nr)]
        except struct.error as exc:
            raise CorruptCheckpoint(str(exc)) from None
        wait = None if w0 == _NONE else (w0, w1)
        return cls(dyn_from, wait, bool(blocked), nck, nxt, runs, None if limit == _NONE else limit)

    def save(self, path: str) -> None:
        replace_durable(path, self.encode())

    @classmethod
    def load(cls, path: str) -> "Manifest":
        with open(path, "rb") as f:
            return cls.decode(f.read())

