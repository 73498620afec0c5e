"""FIST forwarding state: destination and source tables, TD-table, mapping table, saturation and lookup."""

from collections import Counter
from dataclasses import dataclass

import structlog

from acl_oracle import MISS, Match, MatchKind, Rule, RuleSet
from cost_model import AccessLedger, SramRegion, TcamLayout
from errors import CorruptionError, UsageError
from narrow_store import DEFAULT_FINGERPRINT, NarrowStore, check_algorithm
from prefix_core import Address, Prefix, PrefixTrie
from td_table import INVALID, MappingTable, TdTable, index_bits

logger = structlog.get_logger(__name__)

DEFAULT_LAYOUT_PREALLOC = 1000


@dataclass
class BuildOptions:
    """Structural switches for a table build."""

    isolation: bool = True
    non_homogeneous: bool = True
    dedup_width: int | None = None
    entry_width: int | None = None
    double_tcam_request: bool = False
    layout_prealloc: int = DEFAULT_LAYOUT_PREALLOC
    fingerprint: str = DEFAULT_FINGERPRINT

    def __post_init__(self):
        if self.dedup_width is not None and self.dedup_width < 1:
            raise UsageError(f"dedup_width must be >= 1, got: {self.dedup_width}")
        if self.entry_width is not None and self.entry_width < 1:
            raise UsageError(f"entry_width must be >= 1, got: {self.entry_width}")
        if self.layout_prealloc < 1:
            raise UsageError(f"layout_prealloc must be >= 1, got: {self.layout_prealloc}")
        check_algorithm(self.fingerprint)

    @property
    def dedup(self) -> bool:
        return self.dedup_width is not None


@dataclass
class DestUnit:
    """SRAM unit behind a destination entry."""

    indicator: int
    row: int | None
    default_index: int | None


@dataclass
class SrcUnit:
    column: int


class FistTable:
    """
    The whole forwarding state.

    Destination prefixes point at a DestUnit (indicator bit, TD row, default
    index); source prefixes at a SrcUnit (TD column). `blacks[dest][src]`
    holds the index of every explicit rule. Tables produced by compression
    share rows and columns between prefixes and are frozen.
    """

    def __init__(self, width_d: int, width_s: int, options: BuildOptions | None = None):
        self.width_d = width_d
        self.width_s = width_s
        self.options = options or BuildOptions()
        self.dest_trie = PrefixTrie(width_d)
        self.src_trie = PrefixTrie(width_s)
        self.dest_layout = TcamLayout(width_d, self.options.layout_prealloc)
        self.src_layout = TcamLayout(width_s, self.options.layout_prealloc)
        self.td = TdTable()
        self.mapping = MappingTable()
        self.blacks: dict[Prefix, dict[Prefix, int]] = {}
        self.src_refs: Counter = Counter()
        self.narrow: NarrowStore | None = None
        self.frozen = False

    # ---- structure queries

    @property
    def entry_width(self) -> int:
        return self.options.entry_width or max(self.width_d, self.width_s)

    @property
    def wildcard_src(self) -> Prefix:
        return Prefix.wildcard(self.width_s)

    @property
    def has_wildcard_column(self) -> bool:
        return self.wildcard_src in self.src_trie

    def dest_unit(self, dest: Prefix) -> DestUnit | None:
        return self.dest_trie.get(dest)

    def src_unit(self, src: Prefix) -> SrcUnit | None:
        return self.src_trie.get(src)

    def row_of(self, dest: Prefix) -> int | None:
        unit = self.dest_unit(dest)
        return unit.row if unit else None

    def col_of(self, src: Prefix) -> int | None:
        unit = self.src_unit(src)
        return unit.column if unit else None

    def row_dests(self) -> list[Prefix]:
        return [d for d, u in self.dest_trie.items() if u.row is not None]

    def cell(self, dest: Prefix, src: Prefix) -> int:
        row, col = self.row_of(dest), self.col_of(src)
        if row is None or col is None:
            raise UsageError(f"No cell for ({dest}, {src})")
        return self.td.get(row, col)

    def effective_blacks(self, dest: Prefix) -> dict[Prefix, int]:
        """Black nodes of the colored tree of `dest`; the wildcard is black when it carries the default."""
        blacks = dict(self.blacks.get(dest, {}))
        if not self.options.isolation:
            unit = self.dest_unit(dest)
            if unit is not None and unit.default_index is not None:
                blacks[self.wildcard_src] = unit.default_index
        return blacks

    def governing_value(self, dest: Prefix, src: Prefix, skip: Prefix | None = None) -> int:
        """Index of the longest black prefix of `src` (inclusive), ignoring `skip`."""
        blacks = self.effective_blacks(dest)
        node: Prefix | None = src
        while node is not None:
            if node != skip and node in blacks:
                return blacks[node]
            node = self.src_trie.parent_of(node)
        return INVALID

    def tcam_entry_count(self) -> int:
        return len(self.dest_trie) + len(self.src_trie)

    def tcam_bits(self) -> int:
        return self.tcam_entry_count() * self.entry_width

    def cell_bits(self) -> int:
        return index_bits(len(self.mapping))

    def sram_breakdown(self) -> dict[str, int]:
        cell_bits = self.cell_bits()
        out = {"cells": 0, "catalog": 0, "narrow": 0, "units": 0}
        if self.narrow is not None:
            out.update(self.narrow.stored_bits(cell_bits))
        else:
            out["cells"] = self.td.row_count * self.td.col_count * cell_bits
        if len(self.dest_trie) or len(self.src_trie):
            row_bits = index_bits(self.td.row_count)
            col_bits = index_bits(self.td.col_count)
            out["units"] = len(self.dest_trie) * (1 + row_bits + cell_bits) + len(self.src_trie) * col_bits
        return out

    def sram_bits(self) -> int:
        return sum(self.sram_breakdown().values())

    def to_ruleset(self) -> RuleSet:
        """The rule set this (unfrozen) table currently implements."""
        if self.frozen:
            raise UsageError("Compressed tables no longer carry their rules")
        rules = []
        defaults: dict[Prefix, str | None] = {}
        for dest, unit in self.dest_trie.items():
            defaults[dest] = (
                self.mapping.resolve(unit.default_index) if unit.default_index is not None else None
            )
            for src, index in self.blacks.get(dest, {}).items():
                rules.append(Rule(dest, src, self.mapping.resolve(index)))
        return RuleSet(self.width_d, self.width_s, rules, defaults)

    # ---- mutation primitives, shared by build and the update engine

    def check_mutable(self) -> None:
        if self.frozen:
            raise UsageError("Table is frozen (compressed tables are read-only)")

    def add_dest(
        self,
        dest: Prefix,
        default_index: int | None,
        ledger: AccessLedger | None = None,
        row: int | None = None,
    ) -> DestUnit:
        """Publish `dest`, pointing at an already staged `row` when one is given."""
        self.check_mutable()
        unit = DestUnit(indicator=0 if row is None else 1, row=row, default_index=default_index)
        writes = self.dest_layout.insert(dest)
        self.dest_trie.insert(dest, unit)
        if ledger is not None:
            ledger.charge_sram_write(SramRegion.UNITS)
            ledger.charge_tcam_write(writes, moves=self.dest_layout.last_moves)
        return unit

    def remove_dest(self, dest: Prefix, ledger: AccessLedger | None = None) -> None:
        self.check_mutable()
        writes = self.dest_layout.delete(dest)
        unit = self.dest_trie.remove(dest)
        self.blacks.pop(dest, None)
        if ledger is not None:
            ledger.charge_tcam_write(writes)
        if unit.row is not None:
            self.td.release_row(unit.row)

    def stage_row(self, init: dict[int, int], ledger: AccessLedger | None = None) -> tuple[int, int]:
        """Allocate and fill a row no unit points at yet; returns (row, bulk writes)."""
        self.check_mutable()
        row = self.td.allocate_row()
        bulk = 0
        for col, value in init.items():
            if value != INVALID:
                self.td.set(row, col, value)
                bulk += 1
        if ledger is not None:
            ledger.charge_sram_write(SramRegion.TD_BULK, bulk)
        return row, bulk

    def assign_row(self, dest: Prefix, init: dict[int, int], ledger: AccessLedger | None = None) -> tuple[int, int]:
        """Stage a row, then point the unit at it; returns (row, bulk writes)."""
        unit = self.dest_trie[dest]
        row, bulk = self.stage_row(init, ledger)
        unit.row = row
        unit.indicator = 1
        if ledger is not None:
            ledger.charge_sram_write(SramRegion.UNITS)
        return row, bulk

    def clear_row(self, dest: Prefix, ledger: AccessLedger | None = None) -> None:
        """Turn `dest` back into a destination-only entry and reclaim its row."""
        self.check_mutable()
        unit = self.dest_trie[dest]
        row = unit.row
        unit.indicator = 0
        unit.row = None
        if ledger is not None:
            ledger.charge_sram_write(SramRegion.UNITS)
        if row is not None:
            self.td.release_row(row)

    def set_default(self, dest: Prefix, index: int | None, ledger: AccessLedger | None = None) -> None:
        self.check_mutable()
        self.dest_trie[dest].default_index = index
        if ledger is not None:
            ledger.charge_sram_write(SramRegion.UNITS)

    def add_source(self, src: Prefix, ledger: AccessLedger | None = None) -> tuple[int, int]:
        """
        Allocate a column for `src`, copied from its parent's column, then
        publish it in the source table. Returns (column, bulk writes).
        """
        self.check_mutable()
        col = self.td.allocate_col()
        parent = self.src_trie.parent_of(src)
        bulk = 0
        if parent is not None:
            parent_col = self.src_trie[parent].column
            for row in self.td.assigned_rows:
                value = self.td.get(row, parent_col)
                if value != INVALID:
                    self.td.set(row, col, value)
                    bulk += 1
        writes = self.src_layout.insert(src)
        self.src_trie.insert(src, SrcUnit(col))
        if ledger is not None:
            ledger.charge_sram_write(SramRegion.TD_BULK, bulk)
            ledger.charge_sram_write(SramRegion.UNITS)
            ledger.charge_tcam_write(writes, moves=self.src_layout.last_moves)
        return col, bulk

    def remove_source(self, src: Prefix, ledger: AccessLedger | None = None) -> None:
        self.check_mutable()
        writes = self.src_layout.delete(src)
        unit = self.src_trie.remove(src)
        if ledger is not None:
            ledger.charge_tcam_write(writes)
        self.td.release_col(unit.column)

    def write_cell(self, row: int, col: int, value: int, ledger: AccessLedger | None = None) -> None:
        self.td.set(row, col, value)
        if ledger is not None:
            ledger.charge_sram_write(SramRegion.TD_CELLS)

    def attach_narrow_store(self) -> NarrowStore:
        self.td.track_dirty = True
        self.td.take_dirty()
        self.narrow = NarrowStore.from_table(
            self.td, self.options.dedup_width, self.options.fingerprint
        )
        return self.narrow

    def sync_narrow(self, ledger: AccessLedger | None = None) -> None:
        if self.narrow is None:
            return
        catalog_writes, narrow_writes = self.narrow.refresh(self.td)
        if ledger is not None:
            ledger.charge_sram_write(SramRegion.CATALOG, catalog_writes)
            ledger.charge_sram_write(SramRegion.NARROW, narrow_writes)

    # ---- saturation and lookup

    def saturate(
        self, ledger: AccessLedger | None = None, rewrite_all: bool = False, dry_run: bool = False
    ) -> int:
        """
        Fill every non-explicit cell with the index of the longest black
        prefix of its source, or INVALID. Returns non-explicit cells written.

        With `dry_run` nothing is written and the return value counts cells
        (explicit ones included) that disagree with a saturated table.
        """
        if not dry_run:
            self.check_mutable()
        order = list(self.src_trie.walk())
        writes = 0
        for dest, unit in self.dest_trie.items():
            if unit.row is None:
                continue
            blacks = self.effective_blacks(dest)
            values: dict[Prefix, int] = {}
            for src, src_unit, ancestor in order:
                explicit = src in blacks
                if explicit:
                    value = blacks[src]
                else:
                    value = values[ancestor] if ancestor is not None else INVALID
                values[src] = value
                current = self.td.get(unit.row, src_unit.column)
                if dry_run:
                    writes += current != value
                    continue
                if explicit:
                    if current != value:
                        self.td.set(unit.row, src_unit.column, value)
                    continue
                if rewrite_all or current != value:
                    self.td.set(unit.row, src_unit.column, value)
                    writes += 1
        if ledger is not None and not dry_run:
            ledger.charge_sram_write(SramRegion.TD_CELLS, writes)
        return writes

    def lookup(self, d: Address, s: Address, ledger: AccessLedger | None = None) -> Match:
        """
        Pipelined lookup. Charges a fixed 1 TCAM + 3 SRAM reads (4 with the
        narrow store) no matter which stage produces the answer.
        """
        if ledger is not None:
            ledger.charge_tcam_read(2 if self.options.double_tcam_request else 1)
            ledger.charge_sram_read(SramRegion.UNITS)
            if self.narrow is not None:
                ledger.charge_sram_read(SramRegion.CATALOG)
                ledger.charge_sram_read(SramRegion.NARROW)
            else:
                ledger.charge_sram_read(SramRegion.TD_CELLS)
            ledger.charge_sram_read(SramRegion.MAPPING)

        dest_entry = self.dest_trie.lmf_entry(d)
        if dest_entry is None:
            return MISS
        unit: DestUnit = dest_entry[1]
        if unit.indicator == 0:
            return self._default(unit)

        src_entry = self.src_trie.lmf_entry(s)
        if src_entry is None:
            return self._default(unit)
        col = src_entry[1].column
        if self.narrow is not None:
            value = self.narrow.lookup(unit.row, col)
        else:
            value = self.td.get(unit.row, col)
        if value == INVALID:
            return self._default(unit)
        return Match(self.mapping.resolve(value), MatchKind.RULE)

    def _default(self, unit: DestUnit) -> Match:
        if unit.default_index is None:
            return MISS
        return Match(self.mapping.resolve(unit.default_index), MatchKind.DEFAULT)

    # ---- consistency and serialization

    def check_invariants(self) -> None:
        for dest, unit in self.dest_trie.items():
            if (unit.indicator == 1) != (unit.row is not None):
                raise CorruptionError(f"Indicator and row disagree for {dest}")
            if unit.row is not None and not self.td.is_row(unit.row):
                raise CorruptionError(f"{dest} points at unassigned row {unit.row}")
        for src, unit in self.src_trie.items():
            if not self.td.is_col(unit.column):
                raise CorruptionError(f"{src} points at unassigned column {unit.column}")
        if self.options.isolation and self.has_wildcard_column and not self.frozen:
            raise CorruptionError("Wildcard source stored while isolation is on")
        if len(self.dest_layout) != len(self.dest_trie) or len(self.src_layout) != len(self.src_trie):
            raise CorruptionError("TCAM layout and prefix tables disagree")
        if not self.frozen:
            rows = [u.row for _, u in self.dest_trie.items() if u.row is not None]
            if len(rows) != len(set(rows)) or len(rows) != self.td.row_count:
                raise CorruptionError("Rows are not owned by exactly one destination")

    def dump(self, fixed_width: bool = False) -> str:
        """Byte-stable text serialization; `fixed_width` prints cells as binary with an all-ones invalid sentinel."""
        lines = ["[dest]"]
        for dest, unit in self.dest_trie.items():
            lines.append(
                f"{dest} indicator={unit.indicator} "
                f"row={_dash(unit.row)} default={_dash(unit.default_index)}"
            )
        lines.append("[src]")
        for src, unit in self.src_trie.items():
            lines.append(f"{src} col={unit.column}")

        rows, cols = self.td.assigned_rows, self.td.assigned_cols
        lines.append("[td]")
        lines.append(f"rows={len(rows)} cols={len(cols)}")
        if rows and cols:
            bits = index_bits(len(self.mapping) + 1)
            lines.append("col " + " ".join(str(c) for c in cols))
            for row in rows:
                cells = [self.td.get(row, c) for c in cols]
                if fixed_width:
                    text = [("1" * bits) if v == INVALID else format(v, f"0{bits}b") for v in cells]
                else:
                    text = ["-" if v == INVALID else str(v) for v in cells]
                lines.append(f"{row}: " + " ".join(text))
        lines.append("[mapping]")
        for index, action in self.mapping.items():
            lines.append(f"{index} {action}")
        return "\n".join(lines) + "\n"


def _dash(value: int | None) -> str:
    return "-" if value is None else str(value)


def build(rs: RuleSet, options: BuildOptions | None = None, ledger: AccessLedger | None = None) -> FistTable:
    """
    Build and saturate a table for `rs`.

    Actions are interned in first-appearance order (rules, then defaults).
    Rows and columns are assigned in rule order; destinations without
    source-specific rules get a row only when non-homogeneous handling is off.
    """
    options = options or BuildOptions()
    t = FistTable(rs.width_d, rs.width_s, options)

    for rule in rs.rules:
        index, _ = t.mapping.acquire(rule.action)
        t.blacks.setdefault(rule.dest, {})[rule.src] = index
        t.src_refs[rule.src] += 1
    default_index = {}
    for dest, action in rs.defaults.items():
        default_index[dest] = t.mapping.acquire(action)[0] if action is not None else None

    dest_order = list(dict.fromkeys([r.dest for r in rs.rules] + rs.destinations))
    with_rows = [d for d in dest_order if d in t.blacks or not options.non_homogeneous]

    if not options.isolation and with_rows:
        t.add_source(t.wildcard_src, ledger)
    for dest in dest_order:
        t.add_dest(dest, default_index[dest], ledger)
    for dest in with_rows:
        t.assign_row(dest, {}, ledger)
    for src in dict.fromkeys(r.src for r in rs.rules):
        t.add_source(src, ledger)

    explicit = 0
    for dest in with_rows:
        row = t.row_of(dest)
        for src, index in t.effective_blacks(dest).items():
            t.write_cell(row, t.col_of(src), index, ledger)
            explicit += 1
    filled = t.saturate(ledger)

    if options.dedup:
        t.attach_narrow_store()
    logger.info(
        "table_built",
        dest_entries=len(t.dest_trie),
        src_entries=len(t.src_trie),
        rows=t.td.row_count,
        cols=t.td.col_count,
        explicit_cells=explicit,
        saturated_cells=filled,
    )
    return t


def expected_tcam_entries(rs: RuleSet, options: BuildOptions | None = None) -> int:
    """Distinct destinations plus distinct non-wildcard sources, plus the wildcard column if present."""
    options = options or BuildOptions()
    srcs = {r.src for r in rs.rules}
    has_rows = bool(rs.rules) or (not options.non_homogeneous and bool(rs.destinations))
    wildcard = 0 if options.isolation or not has_rows else 1
    return len(rs.destinations) + len(srcs) + wildcard


def saturate(t: FistTable, ledger: AccessLedger | None = None) -> int:
    return t.saturate(ledger)


def lookup(t: FistTable, d: Address, s: Address, ledger: AccessLedger | None = None) -> Match:
    return t.lookup(d, s, ledger)


def tcam_bits(t: FistTable) -> int:
    return t.tcam_bits()


def sram_bits(t: FistTable) -> int:
    return t.sram_bits()
