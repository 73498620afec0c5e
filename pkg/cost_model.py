"""Memory-access accounting, TCAM placement, and latency estimation."""

import bisect
import heapq
from collections import Counter
from contextlib import contextmanager
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator

import structlog
from pydantic import BaseModel, Field, model_validator

from errors import CapacityError, UsageError
from prefix_core import Address, Prefix

logger = structlog.get_logger(__name__)

# Worst case quoted for a router with 10,000 source prefixes seeing 500
# default-next-hop updates per second.
REFERENCE_UPDATE_RATE = 500
REFERENCE_SOURCE_COUNT = 10_000

SERIES_WINDOW = 100


class SramRegion(str, Enum):
    """SRAM structures that reads and writes are attributed to."""

    TD_CELLS = "td_cells"
    TD_BULK = "td_bulk"
    CATALOG = "catalog"
    NARROW = "narrow"
    UNITS = "units"
    MAPPING = "mapping"


TD_REGIONS = (SramRegion.TD_CELLS, SramRegion.TD_BULK)


@dataclass
class LedgerCounts:
    """A set of access counters; used both for totals and per-operation deltas."""

    tcam_reads: int = 0
    tcam_writes: int = 0
    tcam_moves: int = 0
    sram_reads: Counter = field(default_factory=Counter)
    sram_writes: Counter = field(default_factory=Counter)

    @property
    def sram_read_total(self) -> int:
        return sum(self.sram_reads.values())

    @property
    def sram_write_total(self) -> int:
        return sum(self.sram_writes.values())

    @property
    def td_writes(self) -> int:
        """Writes that land in the TD-table (domain writes plus bulk copies)."""
        return sum(self.sram_writes[r] for r in TD_REGIONS)

    def copy(self) -> "LedgerCounts":
        return LedgerCounts(
            self.tcam_reads,
            self.tcam_writes,
            self.tcam_moves,
            Counter(self.sram_reads),
            Counter(self.sram_writes),
        )

    def __sub__(self, other: "LedgerCounts") -> "LedgerCounts":
        reads = Counter(self.sram_reads)
        reads.subtract(other.sram_reads)
        writes = Counter(self.sram_writes)
        writes.subtract(other.sram_writes)
        return LedgerCounts(
            self.tcam_reads - other.tcam_reads,
            self.tcam_writes - other.tcam_writes,
            self.tcam_moves - other.tcam_moves,
            +reads,
            +writes,
        )

    def __add__(self, other: "LedgerCounts") -> "LedgerCounts":
        return LedgerCounts(
            self.tcam_reads + other.tcam_reads,
            self.tcam_writes + other.tcam_writes,
            self.tcam_moves + other.tcam_moves,
            self.sram_reads + other.sram_reads,
            self.sram_writes + other.sram_writes,
        )

    def as_dict(self) -> dict[str, int]:
        """Flat, stably ordered key-value view."""
        out = {
            "tcam_reads": self.tcam_reads,
            "tcam_writes": self.tcam_writes,
            "tcam_moves": self.tcam_moves,
            "sram_reads": self.sram_read_total,
            "sram_writes": self.sram_write_total,
        }
        for region in SramRegion:
            out[f"sram_reads.{region.value}"] = self.sram_reads[region]
        for region in SramRegion:
            out[f"sram_writes.{region.value}"] = self.sram_writes[region]
        return out


@dataclass
class OpSnapshot:
    name: str
    delta: LedgerCounts


class AccessLedger:
    """
    Counts TCAM and SRAM accesses charged by lookups and updates.

    Counters only grow. Charges made inside `operation()` are also recorded
    as a per-operation delta, so a replay's totals equal the sum of its
    snapshots.
    """

    def __init__(self):
        self.totals = LedgerCounts()
        self.snapshots: list[OpSnapshot] = []

    def charge_tcam_read(self, count: int = 1) -> None:
        self.totals.tcam_reads += count

    def charge_tcam_write(self, count: int = 1, moves: int = 0) -> None:
        """`count` includes the `moves` that made room for the write."""
        self.totals.tcam_writes += count
        self.totals.tcam_moves += moves

    def charge_sram_read(self, region: SramRegion, count: int = 1) -> None:
        self.totals.sram_reads[region] += count

    def charge_sram_write(self, region: SramRegion, count: int = 1) -> None:
        if count:
            self.totals.sram_writes[region] += count

    @contextmanager
    def operation(self, name: str) -> Iterator[None]:
        before = self.totals.copy()
        try:
            yield
        finally:
            self.snapshots.append(OpSnapshot(name, self.totals - before))

    def snapshot_sum(self) -> LedgerCounts:
        total = LedgerCounts()
        for snap in self.snapshots:
            total = total + snap.delta
        return total

    def series(self, window: int = SERIES_WINDOW) -> list[LedgerCounts]:
        """Per-window sums of operation snapshots (the last window may be short)."""
        if window < 1:
            raise UsageError(f"Series window must be >= 1, got: {window}")
        out = []
        for start in range(0, len(self.snapshots), window):
            acc = LedgerCounts()
            for snap in self.snapshots[start : start + window]:
                acc = acc + snap.delta
            out.append(acc)
        return out

    def report(self, fmt: str = "text") -> str:
        values = self.totals.as_dict()
        if fmt == "kv":
            return "\n".join(f"ledger.{k}={v}" for k, v in values.items())
        width = max(len(k) for k in values)
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in values.items())


class CycleCosts(BaseModel):
    """Per-access cycle times; SRAM must be faster than TCAM."""

    tcam_cycle_ns: float = Field(default=6.0, gt=0)
    sram_cycle_ns: float = Field(default=1.5, gt=0)
    cycles_per_mem_op: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def check_sram_faster(self) -> "CycleCosts":
        if self.sram_cycle_ns >= self.tcam_cycle_ns:
            raise ValueError(
                f"sram_cycle_ns ({self.sram_cycle_ns}) must be smaller than "
                f"tcam_cycle_ns ({self.tcam_cycle_ns})"
            )
        return self


@dataclass
class LatencyEstimate:
    tcam_accesses: int
    sram_accesses: int
    ns: float
    packets_per_second: float

    @property
    def lookup_cycles(self) -> tuple[int, int]:
        return (self.tcam_accesses, self.sram_accesses)


def lookup_access_counts(
    dedup: bool = False, acl_baseline: bool = False, double_tcam_request: bool = False
) -> tuple[int, int]:
    """TCAM and SRAM accesses of one pipelined lookup."""
    tcam = 2 if double_tcam_request else 1
    if acl_baseline:
        return tcam, 1
    return tcam, 4 if dedup else 3


def latency_estimate(
    dedup: bool = False,
    acl_baseline: bool = False,
    double_tcam_request: bool = False,
    costs: CycleCosts | None = None,
) -> LatencyEstimate:
    """
    Latency of one lookup and pipelined throughput.

    The pipeline accepts a new packet every TCAM cycle, so throughput only
    depends on how many TCAM requests one lookup needs.
    """
    costs = costs or CycleCosts()
    tcam, sram = lookup_access_counts(dedup, acl_baseline, double_tcam_request)
    ns = (tcam * costs.tcam_cycle_ns + sram * costs.sram_cycle_ns) * costs.cycles_per_mem_op
    pps = 1e9 / (costs.tcam_cycle_ns * costs.cycles_per_mem_op * tcam)
    return LatencyEstimate(tcam, sram, ns, pps)


@dataclass
class BudgetReport:
    update_rate: float
    source_count: int
    sram_ops_per_sec: float
    worst_case_writes_per_sec: float
    reference_worst_case: int
    measured_writes_per_sec: float | None = None

    @property
    def passes(self) -> bool:
        return self.worst_case_writes_per_sec <= self.sram_ops_per_sec

    @property
    def measured_passes(self) -> bool | None:
        if self.measured_writes_per_sec is None:
            return None
        return self.measured_writes_per_sec <= self.sram_ops_per_sec

    def as_dict(self) -> dict[str, object]:
        out: dict[str, object] = {
            "update_rate": self.update_rate,
            "source_count": self.source_count,
            "sram_ops_per_sec": self.sram_ops_per_sec,
            "worst_case_writes_per_sec": self.worst_case_writes_per_sec,
            "worst_case_pass": self.passes,
            "reference_worst_case": self.reference_worst_case,
        }
        if self.measured_writes_per_sec is not None:
            out["measured_writes_per_sec"] = self.measured_writes_per_sec
            out["measured_pass"] = self.measured_passes
        return out


def sram_write_budget_check(
    update_rate: float,
    source_count: int,
    sram_ops_per_sec: float,
    measured_writes_per_update: float | None = None,
) -> BudgetReport:
    """
    Compare worst-case TD-table write pressure against an SRAM budget.

    Every update may rewrite a full row, i.e. one write per source prefix.
    `measured_writes_per_update` (from a ledger replay) gives the actual rate.
    """
    if update_rate < 0 or source_count < 0 or sram_ops_per_sec < 0:
        raise UsageError("Budget inputs must be non-negative")
    measured = None
    if measured_writes_per_update is not None:
        measured = update_rate * measured_writes_per_update
    return BudgetReport(
        update_rate=update_rate,
        source_count=source_count,
        sram_ops_per_sec=sram_ops_per_sec,
        worst_case_writes_per_sec=update_rate * source_count,
        reference_worst_case=REFERENCE_UPDATE_RATE * REFERENCE_SOURCE_COUNT,
        measured_writes_per_sec=measured,
    )


class TcamLayout:
    """
    Priority-ordered TCAM slots with prefixes clustered by length.

    Cluster c holds prefixes of length `width - c`, so the longest prefixes
    sit at the lowest slot numbers and the first match in slot order is the
    longest match. Each cluster starts with `prealloc` slots; a full cluster
    borrows a boundary slot from its neighbours, shifting one entry per
    intervening full cluster.
    """

    def __init__(self, width: int, prealloc: int = 1000):
        if prealloc < 1:
            raise UsageError(f"TCAM preallocation must be >= 1, got: {prealloc}")
        self.width = width
        self.prealloc = prealloc
        clusters = width + 1
        self.slots: list[Prefix | None] = [None] * (clusters * prealloc)
        # cluster c occupies slots [bounds[c], bounds[c + 1])
        self.bounds = [c * prealloc for c in range(clusters + 1)]
        self.positions: dict[Prefix, int] = {}
        self._occupied = [0] * clusters
        self._free: list[list[int]] = [
            list(range(c * prealloc, (c + 1) * prealloc)) for c in range(clusters)
        ]
        self.last_moves = 0

    @property
    def capacity(self) -> int:
        return len(self.slots)

    def __len__(self) -> int:
        return len(self.positions)

    def __contains__(self, prefix: object) -> bool:
        return prefix in self.positions

    def cluster_of_prefix(self, prefix: Prefix) -> int:
        return self.width - prefix.length

    def cluster_of_slot(self, slot: int) -> int:
        return bisect.bisect_right(self.bounds, slot) - 1

    def _size(self, c: int) -> int:
        return self.bounds[c + 1] - self.bounds[c]

    def _has_free(self, c: int) -> bool:
        return self._occupied[c] < self._size(c)

    def _pop_free(self, c: int) -> int:
        heap = self._free[c]
        while heap:
            slot = heapq.heappop(heap)
            if self.bounds[c] <= slot < self.bounds[c + 1] and self.slots[slot] is None:
                return slot
        raise CapacityError(f"Cluster {c} has no free slot", capacity=self.capacity)

    def _move(self, src: int, dst: int) -> None:
        prefix = self.slots[src]
        self.slots[dst] = prefix
        self.slots[src] = None
        self.positions[prefix] = dst

    def _shift_cost(self, c: int, j: int) -> int:
        if j > c:
            donors = [self.bounds[k] for k in range(c + 1, j + 1) if self._size(k) > 0]
        else:
            donors = [self.bounds[k + 1] - 1 for k in range(j, c) if self._size(k) > 0]
        return sum(1 for slot in donors if self.slots[slot] is not None)

    def _borrow_from_below(self, c: int, j: int) -> int:
        """Move one slot boundary per cluster c+1..j so cluster c grows by one."""
        moves = 0
        if self.slots[self.bounds[j]] is not None:
            target = self._pop_free(j)
            self._move(self.bounds[j], target)
            moves += 1
        acquired = self.bounds[j]
        self.bounds[j] += 1
        for k in range(j - 1, c, -1):
            first = self.bounds[k]
            if first != acquired:
                if self.slots[first] is not None:
                    self._move(first, acquired)
                    moves += 1
                else:
                    heapq.heappush(self._free[k], acquired)
            acquired = first
            self.bounds[k] += 1
        heapq.heappush(self._free[c], acquired)
        return moves

    def _borrow_from_above(self, c: int, j: int) -> int:
        """Move one slot boundary per cluster j..c-1 so cluster c grows by one."""
        moves = 0
        last = self.bounds[j + 1] - 1
        if self.slots[last] is not None:
            target = self._pop_free(j)
            self._move(last, target)
            moves += 1
        acquired = last
        self.bounds[j + 1] -= 1
        for k in range(j + 1, c):
            last = self.bounds[k + 1] - 1
            if last != acquired:
                if self.slots[last] is not None:
                    self._move(last, acquired)
                    moves += 1
                else:
                    heapq.heappush(self._free[k], acquired)
            acquired = last
            self.bounds[k + 1] -= 1
        heapq.heappush(self._free[c], acquired)
        return moves

    def _open_gap(self, c: int) -> int:
        clusters = len(self._occupied)
        below = next((j for j in range(c + 1, clusters) if self._has_free(j)), None)
        above = next((j for j in range(c - 1, -1, -1) if self._has_free(j)), None)
        if below is None and above is None:
            raise CapacityError(capacity=self.capacity)

        cost_below = self._shift_cost(c, below) if below is not None else None
        cost_above = self._shift_cost(c, above) if above is not None else None
        # ties go toward the shorter-prefix clusters
        if cost_above is None or (cost_below is not None and cost_below <= cost_above):
            return self._borrow_from_below(c, below)
        return self._borrow_from_above(c, above)

    def insert(self, prefix: Prefix) -> int:
        """Place `prefix`; returns TCAM writes including entry moves."""
        if prefix.width != self.width:
            raise UsageError(f"Width mismatch: layout {self.width} vs {prefix.width}")
        if prefix in self.positions:
            raise UsageError(f"Prefix {prefix} already placed")
        c = self.cluster_of_prefix(prefix)
        moves = 0
        if not self._has_free(c):
            moves = self._open_gap(c)
            logger.debug("tcam_cluster_shift", cluster=c, moves=moves)
        slot = self._pop_free(c)
        self.slots[slot] = prefix
        self.positions[prefix] = slot
        self._occupied[c] += 1
        self.last_moves = moves
        return moves + 1

    def delete(self, prefix: Prefix) -> int:
        slot = self.positions.pop(prefix, None)
        if slot is None:
            raise UsageError(f"Prefix {prefix} is not placed")
        self.slots[slot] = None
        c = self.cluster_of_slot(slot)
        self._occupied[c] -= 1
        heapq.heappush(self._free[c], slot)
        self.last_moves = 0
        return 1

    def first_match(self, address: Address) -> Prefix | None:
        """Priority-order scan: the entry a real TCAM would report."""
        for prefix in self.slots:
            if prefix is not None and prefix.matches(address):
                return prefix
        return None

    def check(self) -> None:
        """Every placed prefix lies inside its own length cluster."""
        for prefix, slot in self.positions.items():
            c = self.cluster_of_prefix(prefix)
            if not (self.bounds[c] <= slot < self.bounds[c + 1]):
                raise CapacityError(f"Prefix {prefix} outside its cluster at slot {slot}")


def layout_insert(layout: TcamLayout, prefix: Prefix) -> int:
    return layout.insert(prefix)


def layout_delete(layout: TcamLayout, prefix: Prefix) -> int:
    return layout.delete(prefix)
