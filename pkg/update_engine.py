"""Colored forests, domains, and minimal-write incremental insert/delete/update."""

from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable

import structlog

from acl_oracle import Rule, RuleSet
from cost_model import AccessLedger, LedgerCounts, SramRegion
from errors import FistError, PrefixParseError, RuleConflictError, RuleNotFoundError, RuleParseError, TraceError, UsageError
from fist_engine import FistTable
from prefix_core import Prefix
from td_table import INVALID

logger = structlog.get_logger(__name__)


class Color(str, Enum):
    BLACK = "black"
    WHITE = "white"


class ColoredForest:
    """
    Source-table prefixes colored for one destination.

    Black nodes are sources with an explicit rule (plus the wildcard root
    when it carries the default and isolation is off). Edges follow the
    stored-prefix parent relation of the source table.
    """

    def __init__(self, t: FistTable, dest: Prefix):
        self.t = t
        self.dest = dest
        self.blacks = t.effective_blacks(dest)

    def color(self, src: Prefix) -> Color:
        return Color.BLACK if src in self.blacks else Color.WHITE

    def parent(self, src: Prefix) -> Prefix | None:
        return self.t.src_trie.parent_of(src)

    def children(self, src: Prefix) -> list[Prefix]:
        return self.t.src_trie.children_of(src)

    def roots(self) -> list[Prefix]:
        return self.t.src_trie.roots()

    def nearest_black_ancestor(self, src: Prefix) -> Prefix | None:
        node = self.parent(src)
        while node is not None and node not in self.blacks:
            node = self.parent(node)
        return node

    def value(self, src: Prefix) -> int:
        """Index every cell governed by `src`'s nearest black (inclusive) should hold."""
        node = src if src in self.blacks else self.nearest_black_ancestor(src)
        return INVALID if node is None else self.blacks[node]

    def domain(self, src: Prefix) -> list[Prefix]:
        """`src` plus white descendants reachable without crossing another black node, in preorder."""
        result = [src]
        stack = list(reversed(self.children(src)))
        while stack:
            node = stack.pop()
            if node in self.blacks:
                continue
            result.append(node)
            stack.extend(reversed(self.children(node)))
        return result


def domain(t: FistTable, dest: Prefix, src: Prefix, pending: bool = False) -> set[Prefix]:
    """The cell set an update of (dest, src) must rewrite."""
    forest = ColoredForest(t, dest)
    if src not in t.src_trie:
        raise UsageError(f"Source {src} is not in the source table")
    if not pending and forest.color(src) is not Color.BLACK:
        raise UsageError(f"Source {src} is not black for destination {dest}")
    return set(forest.domain(src))


@dataclass
class UpdateOutcome:
    """Accesses charged by one update."""

    cell_writes: int = 0
    bulk_writes: int = 0
    tcam_writes: int = 0
    tcam_moves: int = 0
    domain_size: int = 0

    @classmethod
    def from_delta(cls, delta: LedgerCounts, domain_size: int = 0) -> "UpdateOutcome":
        return cls(
            cell_writes=delta.sram_writes[SramRegion.TD_CELLS],
            bulk_writes=delta.sram_writes[SramRegion.TD_BULK],
            tcam_writes=delta.tcam_writes,
            tcam_moves=delta.tcam_moves,
            domain_size=domain_size,
        )


def _ensure_row(t: FistTable, dest: Prefix, ledger: AccessLedger) -> int:
    """Give `dest` a row initialized to the values its current colored tree implies."""
    if not t.options.isolation and not t.has_wildcard_column:
        t.add_source(t.wildcard_src, ledger)
    init = {unit.column: t.governing_value(dest, src) for src, unit in t.src_trie.items()}
    row, _ = t.assign_row(dest, init, ledger)
    return row


def _drop_unused_wildcard(t: FistTable, ledger: AccessLedger) -> None:
    if not t.options.isolation and t.has_wildcard_column and t.td.row_count == 0:
        t.remove_source(t.wildcard_src, ledger)


def _release_action(t: FistTable, index: int, ledger: AccessLedger) -> None:
    if t.mapping.release(index):
        ledger.charge_sram_write(SramRegion.MAPPING)


def _acquire_action(t: FistTable, action: str, ledger: AccessLedger) -> int:
    index, created = t.mapping.acquire(action)
    if created:
        ledger.charge_sram_write(SramRegion.MAPPING)
    return index


def _write_domain(t: FistTable, row: int, cells: Iterable[Prefix], value: int, ledger: AccessLedger) -> None:
    for src in cells:
        t.write_cell(row, t.col_of(src), value, ledger)


class _Charged:
    """Runs an update against a ledger (a scratch one if none given) and reports the delta."""

    def __init__(self, ledger: AccessLedger | None):
        self.ledger = ledger if ledger is not None else AccessLedger()
        self.before = self.ledger.totals.copy()

    def outcome(self, domain_size: int = 0) -> UpdateOutcome:
        return UpdateOutcome.from_delta(self.ledger.totals - self.before, domain_size)


def _upsert_default(t: FistTable, dest: Prefix, action: str, ledger: AccessLedger, must_be_new: bool) -> int:
    unit = t.dest_unit(dest)
    if must_be_new and unit is not None and unit.default_index is not None:
        raise RuleConflictError(f"Destination {dest} already has a default", dest=dest, src=t.wildcard_src)
    index = _acquire_action(t, action, ledger)

    if unit is None:
        t.add_dest(dest, index, ledger)
        if not t.options.non_homogeneous:
            _ensure_row(t, dest, ledger)
        return 0

    old = unit.default_index
    t.set_default(dest, index, ledger)
    cells = 0
    if not t.options.isolation and unit.row is not None:
        governed = ColoredForest(t, dest).domain(t.wildcard_src)
        _write_domain(t, unit.row, governed, index, ledger)
        cells = len(governed)
    if old is not None:
        _release_action(t, old, ledger)
    return cells


def _delete_default(t: FistTable, dest: Prefix, ledger: AccessLedger) -> int:
    unit = t.dest_unit(dest)
    if unit is None or unit.default_index is None:
        raise RuleNotFoundError(f"No default for {dest}", dest=dest, src=t.wildcard_src)
    old = unit.default_index
    cells = 0
    if not t.blacks.get(dest):
        t.remove_dest(dest, ledger)
        _drop_unused_wildcard(t, ledger)
    else:
        if not t.options.isolation and unit.row is not None:
            governed = ColoredForest(t, dest).domain(t.wildcard_src)
            _write_domain(t, unit.row, governed, INVALID, ledger)
            cells = len(governed)
        t.set_default(dest, None, ledger)
    _release_action(t, old, ledger)
    return cells


def insert(t: FistTable, dest: Prefix, src: Prefix, action: str, ledger: AccessLedger | None = None) -> UpdateOutcome:
    """
    Add rule (dest, src, action).

    Destination-only entries get a row initialized from their colored tree;
    new sources get a column copied from their parent's column. Then exactly
    the domain of src is set to the new index. A brand-new destination has
    its row written before its TCAM entry appears, so no lookup sees it half
    built.
    """
    t.check_mutable()
    run = _Charged(ledger)
    if src.is_wildcard:
        size = _upsert_default(t, dest, action, run.ledger, must_be_new=True)
        t.sync_narrow(run.ledger)
        return run.outcome(size)
    if src in t.blacks.get(dest, {}):
        raise RuleConflictError(f"Rule ({dest}, {src}) already exists", dest=dest, src=src)

    index = _acquire_action(t, action, run.ledger)
    unit = t.dest_unit(dest)
    if unit is None:
        if not t.options.isolation and not t.has_wildcard_column:
            t.add_source(t.wildcard_src, run.ledger)
    elif unit.row is None:
        _ensure_row(t, dest, run.ledger)
    if src not in t.src_trie:
        t.add_source(src, run.ledger)
    t.src_refs[src] += 1

    cells = ColoredForest(t, dest).domain(src)
    t.blacks.setdefault(dest, {})[src] = index
    if unit is None:
        # a new destination is published only once its row is complete
        row, _ = t.stage_row({}, run.ledger)
        _write_domain(t, row, cells, index, run.ledger)
        t.add_dest(dest, None, run.ledger, row=row)
    else:
        _write_domain(t, unit.row, cells, index, run.ledger)
    t.sync_narrow(run.ledger)
    logger.debug("rule_inserted", dest=str(dest), src=str(src), domain=len(cells))
    return run.outcome(len(cells))


def delete(t: FistTable, dest: Prefix, src: Prefix, ledger: AccessLedger | None = None) -> UpdateOutcome:
    """
    Remove rule (dest, src).

    The domain of src falls back to its nearest black ancestor's index (or
    INVALID). Rows and columns left without rules are reclaimed after their
    TCAM entry or indicator is cleared, and their cells are not rewritten.
    """
    t.check_mutable()
    run = _Charged(ledger)
    if src.is_wildcard:
        size = _delete_default(t, dest, run.ledger)
        t.sync_narrow(run.ledger)
        return run.outcome(size)
    index = t.blacks.get(dest, {}).get(src)
    if index is None:
        raise RuleNotFoundError(f"No rule for ({dest}, {src})", dest=dest, src=src)

    unit = t.dest_unit(dest)
    forest = ColoredForest(t, dest)
    cells = forest.domain(src)
    ancestor = forest.nearest_black_ancestor(src)
    fallback = INVALID if ancestor is None else forest.blacks[ancestor]

    last_rule = len(t.blacks[dest]) == 1
    drop_dest = last_rule and unit.default_index is None
    drop_row = drop_dest or (last_rule and t.options.non_homogeneous)
    drop_src = t.src_refs[src] == 1

    del t.blacks[dest][src]
    if not t.blacks[dest]:
        del t.blacks[dest]

    if not drop_row:
        _write_domain(t, unit.row, [c for c in cells if not (drop_src and c == src)], fallback, run.ledger)

    if drop_dest:
        t.remove_dest(dest, run.ledger)
    elif drop_row:
        t.clear_row(dest, run.ledger)

    t.src_refs[src] -= 1
    if drop_src:
        del t.src_refs[src]
        t.remove_source(src, run.ledger)
    _drop_unused_wildcard(t, run.ledger)
    _release_action(t, index, run.ledger)
    t.sync_narrow(run.ledger)
    logger.debug("rule_deleted", dest=str(dest), src=str(src), domain=len(cells), row_reclaimed=drop_row)
    return run.outcome(len(cells))


def update(t: FistTable, dest: Prefix, src: Prefix, action: str, ledger: AccessLedger | None = None) -> UpdateOutcome:
    """Change a rule's action, rewriting its domain once; inserts when the rule is absent."""
    t.check_mutable()
    if src.is_wildcard:
        run = _Charged(ledger)
        size = _upsert_default(t, dest, action, run.ledger, must_be_new=False)
        t.sync_narrow(run.ledger)
        return run.outcome(size)
    old = t.blacks.get(dest, {}).get(src)
    if old is None:
        return insert(t, dest, src, action, ledger)

    run = _Charged(ledger)
    index = _acquire_action(t, action, run.ledger)
    cells = ColoredForest(t, dest).domain(src)
    t.blacks[dest][src] = index
    _write_domain(t, t.row_of(dest), cells, index, run.ledger)
    _release_action(t, old, run.ledger)
    t.sync_narrow(run.ledger)
    return run.outcome(len(cells))


# ---- traces


class OpKind(str, Enum):
    INSERT = "I"
    DELETE = "D"
    UPDATE = "U"


@dataclass(frozen=True)
class TraceOp:
    kind: OpKind
    dest: Prefix
    src: Prefix
    action: str | None = None

    def __str__(self) -> str:
        parts = [self.kind.value, str(self.dest), str(self.src)]
        if self.action is not None:
            parts.append(self.action)
        return " ".join(parts)


def parse_trace(lines: Iterable[str], width_d: int, width_s: int) -> list[TraceOp]:
    """`I <dest> <src> <action>`, `D <dest> <src>`, `U <dest> <src> <action>`; '#' comments."""
    ops = []
    for number, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        try:
            kind = OpKind(fields[0])
        except ValueError:
            raise RuleParseError(f"unknown trace op '{fields[0]}'", line_number=number, line=raw)
        expected = 3 if kind is OpKind.DELETE else 4
        if len(fields) != expected:
            raise RuleParseError(
                f"'{kind.value}' takes {expected - 1} arguments", line_number=number, line=raw
            )
        try:
            dest = Prefix.parse(fields[1], width_d)
            src = Prefix.parse(fields[2], width_s)
        except PrefixParseError as e:
            raise RuleParseError(str(e), line_number=number, line=raw) from e
        ops.append(TraceOp(kind, dest, src, fields[3] if expected == 4 else None))
    return ops


def load_trace(path: str | Path, width_d: int, width_s: int) -> list[TraceOp]:
    with open(path, "r") as f:
        return parse_trace(f, width_d, width_s)


def format_trace(ops: Iterable[TraceOp]) -> str:
    return "".join(f"{op}\n" for op in ops)


def apply_op(t: FistTable, op: TraceOp, ledger: AccessLedger | None = None) -> UpdateOutcome:
    if op.kind is OpKind.INSERT:
        return insert(t, op.dest, op.src, op.action, ledger)
    if op.kind is OpKind.DELETE:
        return delete(t, op.dest, op.src, ledger)
    return update(t, op.dest, op.src, op.action, ledger)


def apply_to_ruleset(rs: RuleSet, op: TraceOp) -> RuleSet:
    """The same operation on the flat rule set, for oracle comparisons."""
    if op.kind is OpKind.DELETE:
        return rs.without_rule(op.dest, op.src)
    if op.kind is OpKind.INSERT:
        exists = rs.default_of(op.dest) is not None if op.src.is_wildcard else rs.get(op.dest, op.src)
        if exists:
            raise RuleConflictError(f"Rule ({op.dest}, {op.src}) already exists", dest=op.dest, src=op.src)
    return rs.with_rule(Rule(op.dest, op.src, op.action))


def _apply_saturating(t: FistTable, op: TraceOp, ledger: AccessLedger) -> UpdateOutcome:
    """
    Apply `op` as a full re-saturation would: structural changes as usual,
    one explicit cell write, then every non-explicit cell rewritten.
    """
    scratch = AccessLedger()
    apply_op(t, op, scratch)
    s = scratch.totals
    ledger.charge_tcam_write(s.tcam_writes, moves=s.tcam_moves)
    for region in (SramRegion.TD_BULK, SramRegion.UNITS, SramRegion.MAPPING, SramRegion.CATALOG, SramRegion.NARROW):
        ledger.charge_sram_write(region, s.sram_writes[region])
    explicit = 1 if not op.src.is_wildcard and op.kind is not OpKind.DELETE else 0
    ledger.charge_sram_write(SramRegion.TD_CELLS, explicit)
    rewritten = t.saturate(ledger, rewrite_all=True)
    t.sync_narrow(ledger)
    return UpdateOutcome(
        cell_writes=explicit + rewritten,
        bulk_writes=s.sram_writes[SramRegion.TD_BULK],
        tcam_writes=s.tcam_writes,
        tcam_moves=s.tcam_moves,
    )


def replay(
    t: FistTable,
    ops: Iterable[TraceOp],
    ledger: AccessLedger,
    saturation_baseline: bool = False,
) -> list[UpdateOutcome]:
    """Apply a trace, recording one ledger snapshot per operation."""
    outcomes = []
    for i, op in enumerate(ops):
        with ledger.operation(op.kind.value):
            try:
                if saturation_baseline:
                    outcomes.append(_apply_saturating(t, op, ledger))
                else:
                    outcomes.append(apply_op(t, op, ledger))
            except FistError as e:
                raise TraceError(f"{op}: {e}", i, cause=e) from e
    logger.info("trace_replayed", ops=len(outcomes), saturation_baseline=saturation_baseline)
    return outcomes


# ---- rebuild oracle


def saturated_action(rs: RuleSet, dest: Prefix, src: Prefix, isolation: bool) -> str | None:
    """
    The action a saturated cell (dest, src) stands for, derived from the
    flat rule set alone: the rule of dest with the longest source that is a
    prefix of src, else the default when the wildcard column carries it.
    """
    best: Rule | None = None
    for candidate, rule in rs.rules_for(dest).items():
        if candidate.is_prefix_of(src) and (best is None or candidate.length > best.src.length):
            best = rule
    if best is not None:
        return best.action
    if not isolation:
        return rs.default_of(dest)
    return None


def rebuild_diff(before: RuleSet, t: FistTable) -> int:
    """Cells of `t` whose saturated meaning differs from what `before` implies."""
    diff = 0
    for dest, unit in t.dest_trie.items():
        if unit.row is None:
            continue
        for src, src_unit in t.src_trie.items():
            value = t.td.get(unit.row, src_unit.column)
            after = None if value == INVALID else t.mapping.resolve(value)
            if saturated_action(before, dest, src, t.options.isolation) != after:
                diff += 1
    return diff
