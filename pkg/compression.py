"""
Table compression: one-dimensional ORTC, destination/source TCAM minimization,
duplicate row/column elimination, and fixed-block deduplication.

Every stage produces a new frozen table; the input is never modified.
"""

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Hashable

import numpy as np
import structlog

from errors import UsageError
from fist_engine import DestUnit, FistTable, SrcUnit
from narrow_store import NarrowStore, VectorInterner, narrow_lookup
from prefix_core import Prefix
from td_table import INVALID

logger = structlog.get_logger(__name__)

__all__ = [
    "CompressionReport",
    "apply_fixed_block",
    "comp_tcam",
    "compression_report",
    "dedup_fixed_block",
    "dedup_rows_cols",
    "destination_keys",
    "narrow_lookup",
    "ortc",
    "source_keys",
]

# Destination key of addresses no destination prefix covers.
MISS_KEY: tuple = (None, None)

_UNSET = object()


class _OrtcNode:
    __slots__ = ("prefix", "action", "zero", "one", "candidates")

    def __init__(self, prefix: Prefix, action: Hashable = _UNSET):
        self.prefix = prefix
        self.action = action
        self.zero: _OrtcNode | None = None
        self.one: _OrtcNode | None = None
        self.candidates: frozenset = frozenset()

    @property
    def is_leaf(self) -> bool:
        return self.zero is None and self.one is None


def _pick(
    candidates: frozenset,
    preferred: Hashable = _UNSET,
    allowed: Callable[[Hashable], bool] | None = None,
) -> Hashable:
    if allowed is not None:
        candidates = frozenset(c for c in candidates if allowed(c)) or candidates
    if preferred is not _UNSET and preferred in candidates:
        return preferred
    return min(candidates, key=repr)


def ortc(
    entries: dict[Prefix, Hashable],
    width: int,
    root_action: Hashable = _UNSET,
    prefer_root: Hashable = _UNSET,
    root_filter: Callable[[Hashable], bool] | None = None,
) -> dict[Prefix, Hashable]:
    """
    Smallest prefix table that resolves every address to the same action
    as `entries` under longest-match-first.

    Actions are opaque hashable values. The full wildcard must be present
    in `entries` or `root_action` must be given. Among equally small tables
    the wildcard takes a candidate passing `root_filter` when one exists,
    and `prefer_root` among those when it qualifies.
    """
    wildcard = Prefix.wildcard(width)
    if wildcard in entries:
        root_action = entries[wildcard]
    if root_action is _UNSET:
        raise UsageError("ORTC needs a root action: the wildcard prefix or a designated default")

    root = _OrtcNode(wildcard, root_action)
    for prefix, action in entries.items():
        if prefix.width != width:
            raise UsageError(f"Prefix {prefix} does not have width {width}")
        node = root
        for i in range(prefix.length):
            attr = "one" if prefix.bit(i) else "zero"
            child = getattr(node, attr)
            if child is None:
                child = _OrtcNode(node.prefix.child(prefix.bit(i)))
                setattr(node, attr, child)
            node = child
        node.action = action

    # Pass 1: push actions down so every internal node has two children
    # and every leaf carries the action it resolves to.
    stack: list[tuple[_OrtcNode, Hashable]] = [(root, root_action)]
    while stack:
        node, inherited = stack.pop()
        if node.action is _UNSET:
            node.action = inherited
        if node.is_leaf:
            continue
        if node.zero is None:
            node.zero = _OrtcNode(node.prefix.child(0), node.action)
        if node.one is None:
            node.one = _OrtcNode(node.prefix.child(1), node.action)
        stack.append((node.zero, node.action))
        stack.append((node.one, node.action))

    # Pass 2: candidate sets bottom-up, intersect else union.
    order: list[_OrtcNode] = []
    stack2 = [root]
    while stack2:
        node = stack2.pop()
        order.append(node)
        if not node.is_leaf:
            stack2.extend((node.zero, node.one))
    for node in reversed(order):
        if node.is_leaf:
            node.candidates = frozenset([node.action])
        else:
            a, b = node.zero.candidates, node.one.candidates
            node.candidates = (a & b) or (a | b)

    # Pass 3: choose top-down, emitting only where the inherited action changes.
    result: dict[Prefix, Hashable] = {}
    chosen = _pick(root.candidates, prefer_root, root_filter)
    result[wildcard] = chosen
    stack3: list[tuple[_OrtcNode, Hashable]] = []
    if not root.is_leaf:
        stack3 = [(root.one, chosen), (root.zero, chosen)]
    while stack3:
        node, inherited = stack3.pop()
        if inherited in node.candidates:
            current = inherited
        else:
            current = _pick(node.candidates)
            result[node.prefix] = current
        if not node.is_leaf:
            stack3.append((node.one, current))
            stack3.append((node.zero, current))
    return result


def _require_saturated(t: FistTable) -> None:
    if not t.frozen and t.saturate(dry_run=True):
        raise UsageError("Compression needs a saturated table")


def _reachable_sources(t: FistTable) -> list[Prefix]:
    """Source prefixes that are the longest match of at least one address."""
    reachable = []
    for src, _ in t.src_trie.items():
        span = 1 << (t.width_s - src.length)
        covered = sum(1 << (t.width_s - c.length) for c in t.src_trie.children_of(src))
        if covered < span:
            reachable.append(src)
    return reachable


def _covers_source_space(t: FistTable) -> bool:
    """True when every source address matches some stored source prefix."""
    span = sum(1 << (t.width_s - root.length) for root in t.src_trie.roots())
    return span == 1 << t.width_s


def _resolved_row(t: FistTable, unit: DestUnit, cols: list[int]) -> np.ndarray:
    """Row cells over `cols`, with invalid cells replaced by the default they fall back to."""
    row = t.td.cells[unit.row, cols].astype(np.int32)
    if unit.default_index is not None:
        row[row == INVALID] = unit.default_index
    return row


@dataclass
class _DestinationKeys:
    keys: dict[Prefix, tuple]
    interner: VectorInterner
    columns: list[Prefix]
    full_cover: bool


def _behaviour_key(
    t: FistTable,
    unit: DestUnit,
    col_ids: list[int],
    full_cover: bool,
    interner: VectorInterner,
) -> tuple:
    default = unit.default_index
    if unit.row is None or not col_ids:
        return (default, None)
    row = _resolved_row(t, unit, col_ids)
    if full_cover:
        # the default is only reached through invalid cells, which are resolved already
        if (row == row[0]).all():
            return (None if row[0] == INVALID else int(row[0]), None)
        return (None, interner.intern(row))
    if (row == (INVALID if default is None else default)).all():
        return (default, None)
    return (default, interner.intern(row))


def _destination_keys(t: FistTable) -> _DestinationKeys:
    columns = _reachable_sources(t)
    col_ids = [t.src_trie[s].column for s in columns]
    full_cover = _covers_source_space(t)
    interner = VectorInterner(t.options.fingerprint)
    keys = {dest: _behaviour_key(t, unit, col_ids, full_cover, interner) for dest, unit in t.dest_trie.items()}
    return _DestinationKeys(keys, interner, columns, full_cover)


def destination_keys(t: FistTable) -> dict[Prefix, tuple]:
    """
    Per-destination behaviour key: (default index, row id or None).

    Two destinations share a key exactly when every source address gets
    the same answer through them. Addresses matching no destination behave
    like MISS_KEY. Row ids name resolved rows, where an invalid cell shows
    the default it falls back to.
    """
    return _destination_keys(t).keys


def _compressed_destinations(t: FistTable, dk: _DestinationKeys) -> dict[Prefix, tuple]:
    entries = ortc(dk.keys, t.width_d, root_action=MISS_KEY, prefer_root=MISS_KEY)
    wildcard = Prefix.wildcard(t.width_d)
    if entries.get(wildcard) == MISS_KEY:
        del entries[wildcard]
    return entries


@dataclass
class _SourceLabels:
    """What each source region answers for every row-bearing destination key."""

    classes: list[tuple]
    labels: dict[Prefix, tuple]
    # answers for source addresses no stored source covers; None under full cover
    uncovered: tuple | None

    @cached_property
    def miss_positions(self) -> list[int]:
        """Classes that miss somewhere; their default has to stay empty."""
        seen = list(self.labels.values())
        if self.uncovered is not None:
            seen.append(self.uncovered)
        return [j for j in range(len(self.classes)) if any(label[j] == INVALID for label in seen)]

    def default_capable(self, label: tuple) -> bool:
        """True when `label` can be served by destination defaults alone."""
        return all(label[j] == INVALID for j in self.miss_positions)


def _source_labels(dk: _DestinationKeys, dest_entries: dict[Prefix, tuple]) -> _SourceLabels:
    classes = sorted({k for k in dest_entries.values() if k[1] is not None}, key=repr)
    rows = [dk.interner.vectors[k[1]] for k in classes]
    labels = {src: tuple(int(r[i]) for r in rows) for i, src in enumerate(dk.columns)}
    uncovered = None if dk.full_cover else tuple(INVALID if k[0] is None else k[0] for k in classes)
    return _SourceLabels(classes, labels, uncovered)


def source_keys(t: FistTable) -> dict[Prefix, tuple]:
    """
    Per-source key: what the source's region answers for every
    row-bearing destination key that survives destination compression.
    """
    dk = _destination_keys(t)
    return _source_labels(dk, _compressed_destinations(t, dk)).labels


def _assemble(
    t: FistTable,
    dests: dict[Prefix, tuple[int | None, Hashable | None]],
    srcs: dict[Prefix, Hashable],
    cell: Callable[[Hashable, Hashable], int],
) -> FistTable:
    """Frozen table whose destinations share rows by row key and sources share columns by column key."""
    out = FistTable(t.width_d, t.width_s, t.options)
    out.mapping = t.mapping.copy()

    rows: dict[Hashable, int] = {}
    for dest in sorted(dests, key=lambda p: p.sort_key):
        default, row_key = dests[dest]
        row = None
        if row_key is not None:
            if row_key not in rows:
                rows[row_key] = out.td.allocate_row()
            row = rows[row_key]
        out.dest_layout.insert(dest)
        out.dest_trie.insert(dest, DestUnit(indicator=0 if row is None else 1, row=row, default_index=default))

    cols: dict[Hashable, int] = {}
    for src in sorted(srcs, key=lambda p: p.sort_key):
        col_key = srcs[src]
        if col_key not in cols:
            cols[col_key] = out.td.allocate_col()
        out.src_layout.insert(src)
        out.src_trie.insert(src, SrcUnit(cols[col_key]))

    for row_key, row in rows.items():
        for col_key, col in cols.items():
            value = cell(row_key, col_key)
            if value != INVALID:
                out.td.set(row, col, value)

    out.frozen = True
    if out.options.dedup:
        out.attach_narrow_store()
    return out


def comp_tcam(t: FistTable) -> FistTable:
    """
    Minimize the destination and source tables.

    Destinations are compressed by ORTC over their behaviour keys, then
    sources by ORTC over what each source region answers per surviving
    row-bearing key. The source wildcard is dropped whenever its answers
    can live in the destination defaults instead; keys that miss somewhere
    keep an empty default, since an invalid cell cannot express a miss
    next to one.
    """
    _require_saturated(t)
    dk = _destination_keys(t)
    dest_entries = _compressed_destinations(t, dk)

    sl = _source_labels(dk, dest_entries)
    root = sl.uncovered if sl.uncovered is not None else tuple([INVALID] * len(sl.classes))
    src_entries = ortc(sl.labels, t.width_s, root_action=root, prefer_root=root, root_filter=sl.default_capable)

    defaults = [k[0] for k in sl.classes]
    wildcard = Prefix.wildcard(t.width_s)
    if sl.default_capable(src_entries[wildcard]):
        label = src_entries.pop(wildcard)
        defaults = [None if v == INVALID else v for v in label]

    position = {k: j for j, k in enumerate(sl.classes)}
    dests = {
        dest: key if key[1] is None else (defaults[position[key]], position[key])
        for dest, key in dest_entries.items()
    }

    def cell(j: int, label: tuple) -> int:
        return INVALID if label[j] == defaults[j] else label[j]

    out = _assemble(t, dests, src_entries, cell)
    logger.info(
        "comp_tcam_done",
        dest_before=len(t.dest_trie),
        dest_after=len(out.dest_trie),
        src_before=len(t.src_trie),
        src_after=len(out.src_trie),
    )
    return out


def dedup_rows_cols(t: FistTable) -> FistTable:
    """Share one row per distinct row vector and one column per distinct column vector."""
    _require_saturated(t)
    cols = t.td.assigned_cols

    row_ids = VectorInterner(t.options.fingerprint)
    row_keys: dict[int, int] = {}
    for row in t.td.assigned_rows:
        row_keys[row] = row_ids.intern(t.td.row_vector(row, cols))

    col_ids = VectorInterner(t.options.fingerprint)
    col_keys: dict[int, int] = {}
    for i, col in enumerate(cols):
        col_keys[col] = col_ids.intern(np.array([v[i] for v in row_ids.vectors], dtype=np.int32))

    dests = {
        dest: (unit.default_index, None if unit.row is None else row_keys[unit.row])
        for dest, unit in t.dest_trie.items()
    }
    srcs = {src: col_keys[unit.column] for src, unit in t.src_trie.items()}
    out = _assemble(t, dests, srcs, lambda r, c: int(col_ids.vectors[c][r]))
    logger.info(
        "dedup_rows_cols_done",
        rows_before=t.td.row_count,
        rows_after=out.td.row_count,
        cols_before=t.td.col_count,
        cols_after=out.td.col_count,
    )
    return out


def dedup_fixed_block(t: FistTable, width: int) -> NarrowStore:
    """Cut every row into `width`-cell chunks and store each distinct chunk once."""
    _require_saturated(t)
    return NarrowStore.from_table(t.td, width, t.options.fingerprint)


def apply_fixed_block(t: FistTable, width: int) -> FistTable:
    """Attach a fixed-block narrow store to `t` so lookups read through the catalog."""
    _require_saturated(t)
    t.options = replace(t.options, dedup_width=width)
    t.attach_narrow_store()
    return t


@dataclass
class CompressionReport:
    tcam_bits_before: int
    tcam_bits_after: int
    sram_bits_before: int
    sram_bits_after: int
    dest_before: int
    dest_after: int
    src_before: int
    src_after: int
    rows_before: int
    rows_after: int
    cols_before: int
    cols_after: int
    narrow_rows: int | None = None
    chunks: int | None = None
    extra: dict[str, object] = field(default_factory=dict)

    @property
    def dedup_ratio(self) -> float | None:
        if not self.narrow_rows or self.chunks is None:
            return None
        return round(self.chunks / self.narrow_rows, 4)

    def as_dict(self) -> dict[str, object]:
        out: dict[str, object] = {
            "tcam_bits_before": self.tcam_bits_before,
            "tcam_bits_after": self.tcam_bits_after,
            "sram_bits_before": self.sram_bits_before,
            "sram_bits_after": self.sram_bits_after,
            "dest_before": self.dest_before,
            "dest_after": self.dest_after,
            "src_before": self.src_before,
            "src_after": self.src_after,
            "rows_before": self.rows_before,
            "rows_after": self.rows_after,
            "cols_before": self.cols_before,
            "cols_after": self.cols_after,
        }
        if self.narrow_rows is not None:
            out["narrow_rows"] = self.narrow_rows
            out["dedup_ratio"] = self.dedup_ratio
        out.update(self.extra)
        return out

    def render(self, fmt: str = "text") -> str:
        values = self.as_dict()
        if fmt == "kv":
            return "\n".join(f"compress.{k}={v}" for k, v in values.items())
        width = max(len(k) for k in values)
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in values.items())


def compression_report(before: FistTable, after: FistTable) -> CompressionReport:
    narrow = after.narrow
    return CompressionReport(
        tcam_bits_before=before.tcam_bits(),
        tcam_bits_after=after.tcam_bits(),
        sram_bits_before=before.sram_bits(),
        sram_bits_after=after.sram_bits(),
        dest_before=len(before.dest_trie),
        dest_after=len(after.dest_trie),
        src_before=len(before.src_trie),
        src_after=len(after.src_trie),
        rows_before=before.td.row_count,
        rows_after=after.td.row_count,
        cols_before=before.td.col_count,
        cols_after=after.td.col_count,
        narrow_rows=None if narrow is None else len(narrow.narrow_td),
        chunks=None if narrow is None else len(narrow.catalog),
    )
