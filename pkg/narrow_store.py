"""Vector fingerprints, the chunk membership filter, and the deduplicated narrow TD-table."""

import hashlib
import math
from collections import Counter
from dataclasses import dataclass, field

import mmh3
import numpy as np
import structlog
from bitarray import bitarray

from errors import UsageError
from td_table import INVALID, TdTable, _IdPool, index_bits

logger = structlog.get_logger(__name__)

MIN_DIGEST_BITS = 160
DEFAULT_FINGERPRINT = "sha1"


def check_algorithm(algorithm: str) -> None:
    """Reject unknown or short (< 160-bit) hash algorithms."""
    try:
        digest_size = hashlib.new(algorithm).digest_size
    except (ValueError, TypeError):
        raise UsageError(f"Unknown fingerprint algorithm: '{algorithm}'")
    if digest_size * 8 < MIN_DIGEST_BITS:
        raise UsageError(
            f"Fingerprint algorithm '{algorithm}' has {digest_size * 8} bits, "
            f"need at least {MIN_DIGEST_BITS}"
        )


def fingerprint(vector: np.ndarray, algorithm: str = DEFAULT_FINGERPRINT) -> bytes:
    """Digest of a cell vector's canonical big-endian int32 serialization."""
    data = np.asarray(vector, dtype=">i4").tobytes()
    return hashlib.new(algorithm, data).digest()


class MembershipFilter:
    """
    Bloom filter over fingerprints (bitarray + seeded murmur3).

    Answers "definitely new" or "maybe seen"; never gives false negatives.
    Bits are never cleared, so reclaimed chunks only cost extra index probes.
    """

    def __init__(self, capacity: int, error_rate: float = 0.01):
        capacity = max(capacity, 1)
        self.size = max(8, math.ceil(-capacity * math.log(error_rate) / math.log(2) ** 2))
        self.hash_count = max(1, round(self.size / capacity * math.log(2)))
        self.seeds = list(range(self.hash_count))
        self.bits = bitarray(self.size)
        self.bits.setall(0)

    def _positions(self, key: bytes):
        for seed in self.seeds:
            yield mmh3.hash(key, seed, signed=False) % self.size

    def add(self, key: bytes) -> None:
        for i in self._positions(key):
            self.bits[i] = 1

    def __contains__(self, key: bytes) -> bool:
        return all(self.bits[i] for i in self._positions(key))


class VectorInterner:
    """Assigns one id per distinct vector; digest matches are byte-verified."""

    def __init__(self, algorithm: str = DEFAULT_FINGERPRINT):
        check_algorithm(algorithm)
        self.algorithm = algorithm
        self.vectors: list[np.ndarray] = []
        self._index: dict[bytes, list[int]] = {}
        self.byte_checks = 0

    def __len__(self) -> int:
        return len(self.vectors)

    def intern(self, vector: np.ndarray) -> int:
        digest = fingerprint(vector, self.algorithm)
        for ident in self._index.get(digest, []):
            self.byte_checks += 1
            if np.array_equal(self.vectors[ident], vector):
                return ident
        ident = len(self.vectors)
        self.vectors.append(np.array(vector, dtype=np.int32))
        self._index.setdefault(digest, []).append(ident)
        return ident


@dataclass
class DedupStats:
    chunks: int = 0
    filter_negatives: int = 0
    filter_false_positives: int = 0
    duplicates: int = 0
    byte_checks: int = 0

    def as_dict(self) -> dict[str, int]:
        return dict(self.__dict__)


@dataclass
class NarrowStore:
    """
    Fixed-width chunks of TD-table rows stored once each.

    `catalog[(row, chunk)]` names the narrow row holding cells
    `chunk * width .. chunk * width + width - 1` of `row`; the tail chunk is
    padded with INVALID.
    """

    width: int
    algorithm: str = DEFAULT_FINGERPRINT
    capacity: int = 1024
    narrow_td: dict[int, np.ndarray] = field(default_factory=dict)
    catalog: dict[tuple[int, int], int] = field(default_factory=dict)
    narrow_index: dict[bytes, list[int]] = field(default_factory=dict)
    refcounts: Counter = field(default_factory=Counter)
    stats: DedupStats = field(default_factory=DedupStats)
    chunk_count: int = 0

    def __post_init__(self):
        if self.width < 1:
            raise UsageError(f"Narrow width must be >= 1, got: {self.width}")
        check_algorithm(self.algorithm)
        self.filter = MembershipFilter(self.capacity)
        self._ids = _IdPool()

    @classmethod
    def from_table(cls, td: TdTable, width: int, algorithm: str = DEFAULT_FINGERPRINT) -> "NarrowStore":
        """Scan assigned rows in id order, chunk by chunk."""
        chunk_count = math.ceil(td.physical_cols / width) if width >= 1 else 0
        capacity = max(1, td.row_count * chunk_count)
        store = cls(width, algorithm, capacity)
        store.chunk_count = chunk_count
        for row in td.assigned_rows:
            for chunk in range(chunk_count):
                store._place(row, chunk, store._chunk(td, row, chunk))
        logger.debug(
            "narrow_store_built",
            width=width,
            chunks=store.stats.chunks,
            narrow_rows=len(store.narrow_td),
        )
        return store

    def _chunk(self, td: TdTable, row: int, chunk: int) -> np.ndarray:
        start = chunk * self.width
        vector = np.full(self.width, INVALID, dtype=np.int32)
        segment = td.cells[row, start : start + self.width]
        vector[: len(segment)] = segment
        return vector

    def _find(self, vector: np.ndarray, digest: bytes) -> int | None:
        if digest not in self.filter:
            self.stats.filter_negatives += 1
            return None
        for ident in self.narrow_index.get(digest, []):
            self.stats.byte_checks += 1
            if np.array_equal(self.narrow_td[ident], vector):
                return ident
        self.stats.filter_false_positives += 1
        return None

    def _place(self, row: int, chunk: int, vector: np.ndarray) -> tuple[int, int]:
        """Point (row, chunk) at a narrow row holding `vector`; returns (catalog, narrow) writes."""
        old = self.catalog.get((row, chunk))
        if old is not None and np.array_equal(self.narrow_td[old], vector):
            return 0, 0

        self.stats.chunks += 1
        digest = fingerprint(vector, self.algorithm)
        ident = self._find(vector, digest)
        narrow_writes = 0
        if ident is None:
            ident = self._ids.allocate()
            self.narrow_td[ident] = vector
            self.narrow_index.setdefault(digest, []).append(ident)
            self.filter.add(digest)
            narrow_writes = 1
        else:
            self.stats.duplicates += 1

        self.catalog[(row, chunk)] = ident
        self.refcounts[ident] += 1
        if old is not None:
            self._release(old)
        return 1, narrow_writes

    def _release(self, ident: int) -> None:
        self.refcounts[ident] -= 1
        if self.refcounts[ident]:
            return
        del self.refcounts[ident]
        vector = self.narrow_td.pop(ident)
        digest = fingerprint(vector, self.algorithm)
        self.narrow_index[digest].remove(ident)
        if not self.narrow_index[digest]:
            del self.narrow_index[digest]
        self._ids.release(ident)

    def lookup(self, row: int, col: int) -> int:
        ident = self.catalog.get((row, col // self.width))
        if ident is None:
            raise UsageError(f"No catalog entry for row {row}, column {col}")
        return int(self.narrow_td[ident][col % self.width])

    def refresh(self, td: TdTable) -> tuple[int, int]:
        """Bring the store in line with `td` after updates; returns (catalog, narrow) writes."""
        dirty, released = td.take_dirty()
        catalog_writes = narrow_writes = 0

        for row in released:
            for key in [k for k in self.catalog if k[0] == row]:
                self._release(self.catalog.pop(key))
                catalog_writes += 1

        self.chunk_count = max(self.chunk_count, math.ceil(td.physical_cols / self.width))
        pending = {(r, c // self.width) for r, c in dirty if td.is_row(r)}
        for row in td.assigned_rows:
            for chunk in range(self.chunk_count):
                if (row, chunk) not in self.catalog:
                    pending.add((row, chunk))

        for row, chunk in sorted(pending):
            c, n = self._place(row, chunk, self._chunk(td, row, chunk))
            catalog_writes += c
            narrow_writes += n
        return catalog_writes, narrow_writes

    def reconstruct(self, row: int, cols: int) -> np.ndarray:
        return np.array([self.lookup(row, c) for c in range(cols)], dtype=np.int32)

    def stored_bits(self, cell_bits: int) -> dict[str, int]:
        narrow = len(self.narrow_td) * self.width * cell_bits
        catalog = len(self.catalog) * index_bits(len(self.narrow_td))
        return {"narrow": narrow, "catalog": catalog}


def narrow_lookup(store: NarrowStore, row: int, col: int) -> int:
    return store.lookup(row, col)
