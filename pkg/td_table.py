"""TD-table cell storage and the index-to-next-hop mapping table."""

from __future__ import annotations

import heapq
import math
from collections import Counter
from typing import Callable, Iterable

import numpy as np

from errors import CorruptionError, UsageError

# Cell state for "no index value"; valid indexes are >= 0.
INVALID = -1

CellObserver = Callable[[int, int, int], None]


def index_bits(count: int) -> int:
    """Bits needed to address `count` distinct values; one bit minimum once anything is stored."""
    if count <= 0:
        return 0
    return max(1, math.ceil(math.log2(count)))


class _IdPool:
    """Lowest-first recyclable id allocator."""

    def __init__(self):
        self._free: list[int] = []
        self.high_water = 0
        self.assigned: set[int] = set()

    def allocate(self) -> int:
        if self._free:
            ident = heapq.heappop(self._free)
        else:
            ident = self.high_water
            self.high_water += 1
        self.assigned.add(ident)
        return ident

    def release(self, ident: int) -> None:
        if ident not in self.assigned:
            raise UsageError(f"Id {ident} is not assigned")
        self.assigned.remove(ident)
        heapq.heappush(self._free, ident)


class TdTable:
    """
    Two-dimensional array of action indexes addressed by (row id, column id).

    Row and column ids come from separate lowest-first pools. Released rows
    and columns are reset to INVALID so a recycled id always starts clean.
    """

    def __init__(self, rows: int = 0, cols: int = 0):
        self.cells = np.full((max(rows, 4), max(cols, 4)), INVALID, dtype=np.int32)
        self._rows = _IdPool()
        self._cols = _IdPool()
        self.on_write: CellObserver | None = None
        self.track_dirty = False
        self.dirty: set[tuple[int, int]] = set()
        self.released_rows: set[int] = set()

    @property
    def assigned_rows(self) -> list[int]:
        return sorted(self._rows.assigned)

    @property
    def assigned_cols(self) -> list[int]:
        return sorted(self._cols.assigned)

    @property
    def row_count(self) -> int:
        return len(self._rows.assigned)

    @property
    def col_count(self) -> int:
        return len(self._cols.assigned)

    @property
    def physical_cols(self) -> int:
        """Column ids ever handed out; chunking works over this span."""
        return self._cols.high_water

    def _grow(self, rows: int, cols: int) -> None:
        cur_r, cur_c = self.cells.shape
        if rows <= cur_r and cols <= cur_c:
            return
        new_r = cur_r if rows <= cur_r else max(rows, cur_r * 2)
        new_c = cur_c if cols <= cur_c else max(cols, cur_c * 2)
        grown = np.full((new_r, new_c), INVALID, dtype=np.int32)
        grown[:cur_r, :cur_c] = self.cells
        self.cells = grown

    def allocate_row(self) -> int:
        row = self._rows.allocate()
        self._grow(row + 1, self.cells.shape[1])
        return row

    def allocate_col(self) -> int:
        col = self._cols.allocate()
        self._grow(self.cells.shape[0], col + 1)
        return col

    def release_row(self, row: int) -> None:
        self._rows.release(row)
        self.cells[row, :] = INVALID
        if self.track_dirty:
            self.released_rows.add(row)
            self.dirty = {(r, c) for r, c in self.dirty if r != row}

    def release_col(self, col: int) -> None:
        self._cols.release(col)
        self.cells[:, col] = INVALID
        if self.track_dirty:
            self.dirty.update((r, col) for r in self._rows.assigned)

    def is_row(self, row: int) -> bool:
        return row in self._rows.assigned

    def is_col(self, col: int) -> bool:
        return col in self._cols.assigned

    def get(self, row: int, col: int) -> int:
        return int(self.cells[row, col])

    def set(self, row: int, col: int, value: int) -> None:
        self.cells[row, col] = value
        if self.track_dirty:
            self.dirty.add((row, col))
        if self.on_write is not None:
            self.on_write(row, col, value)

    def row_vector(self, row: int, cols: Iterable[int] | None = None) -> np.ndarray:
        cols = self.assigned_cols if cols is None else list(cols)
        return self.cells[row, cols].copy()

    def col_vector(self, col: int, rows: Iterable[int] | None = None) -> np.ndarray:
        rows = self.assigned_rows if rows is None else list(rows)
        return self.cells[rows, col].copy()

    def matrix(self) -> np.ndarray:
        """Assigned rows by assigned columns, in id order."""
        return self.cells[np.ix_(self.assigned_rows, self.assigned_cols)].copy()

    def take_dirty(self) -> tuple[set[tuple[int, int]], set[int]]:
        dirty, released = self.dirty, self.released_rows
        self.dirty, self.released_rows = set(), set()
        return dirty, released


class MappingTable:
    """
    Interned next-hop payloads with reference counts.

    An index is reclaimed when its last reference is released; new actions
    take the lowest free index.
    """

    def __init__(self):
        self._by_index: dict[int, str] = {}
        self._by_action: dict[str, int] = {}
        self._refs: Counter = Counter()
        self._pool = _IdPool()

    def __len__(self) -> int:
        return len(self._by_index)

    def __contains__(self, action: object) -> bool:
        return action in self._by_action

    def index_of(self, action: str) -> int | None:
        return self._by_action.get(action)

    def acquire(self, action: str) -> tuple[int, bool]:
        """Take a reference to `action`; returns (index, newly interned)."""
        index = self._by_action.get(action)
        created = index is None
        if created:
            index = self._pool.allocate()
            self._by_action[action] = index
            self._by_index[index] = action
        self._refs[index] += 1
        return index, created

    def release(self, index: int) -> bool:
        """Drop one reference; returns True if the index was reclaimed."""
        if self._refs[index] <= 0:
            raise CorruptionError(f"Mapping index {index} has no references")
        self._refs[index] -= 1
        if self._refs[index]:
            return False
        del self._refs[index]
        action = self._by_index.pop(index)
        del self._by_action[action]
        self._pool.release(index)
        return True

    def refcount(self, index: int) -> int:
        return self._refs[index]

    def resolve(self, index: int) -> str:
        try:
            return self._by_index[index]
        except KeyError:
            raise CorruptionError(f"Cell holds unmapped index {index}")

    def items(self) -> list[tuple[int, str]]:
        return sorted(self._by_index.items())

    def copy(self) -> "MappingTable":
        other = MappingTable()
        for index, action in self.items():
            other._by_index[index] = action
            other._by_action[action] = index
            other._refs[index] = self._refs[index]
            other._pool.assigned.add(index)
        other._pool.high_water = self._pool.high_water
        other._pool._free = [i for i in range(other._pool.high_water) if i not in other._by_index]
        heapq.heapify(other._pool._free)
        return other
