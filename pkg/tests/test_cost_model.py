"""Tests for the access ledger, TCAM layout, latency model and write budget."""

import pytest
import sys
from pathlib import Path

from pydantic import ValidationError

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from cost_model import (
    AccessLedger,
    CycleCosts,
    SramRegion,
    TcamLayout,
    latency_estimate,
    layout_delete,
    layout_insert,
    lookup_access_counts,
    sram_write_budget_check,
)
from errors import CapacityError, UsageError
from prefix_core import Address, Prefix


def P(text: str, width: int = 4) -> Prefix:
    return Prefix.parse(text, width)


class TestAccessLedger:
    """Tests for AccessLedger."""

    def test_operation_snapshots(self):
        """Should record one delta per operation."""
        ledger = AccessLedger()
        with ledger.operation("I"):
            ledger.charge_sram_write(SramRegion.TD_CELLS, 3)
        with ledger.operation("D"):
            ledger.charge_tcam_write(2, moves=1)
        assert [s.name for s in ledger.snapshots] == ["I", "D"]
        assert ledger.snapshots[0].delta.sram_write_total == 3
        assert ledger.snapshots[1].delta.tcam_moves == 1
        assert ledger.snapshot_sum().as_dict() == ledger.totals.as_dict()

    def test_zero_writes_are_not_recorded(self):
        """Should ignore zero-count SRAM writes."""
        ledger = AccessLedger()
        ledger.charge_sram_write(SramRegion.NARROW, 0)
        assert SramRegion.NARROW not in ledger.totals.sram_writes

    def test_td_writes_include_bulk(self):
        """Should count domain writes and bulk copies as TD-table writes."""
        ledger = AccessLedger()
        ledger.charge_sram_write(SramRegion.TD_CELLS, 2)
        ledger.charge_sram_write(SramRegion.TD_BULK, 5)
        ledger.charge_sram_write(SramRegion.UNITS, 1)
        assert ledger.totals.td_writes == 7
        assert ledger.totals.sram_write_total == 8

    def test_series_windows(self):
        """Should sum snapshots per window with a short tail."""
        ledger = AccessLedger()
        for _ in range(5):
            with ledger.operation("U"):
                ledger.charge_sram_write(SramRegion.TD_CELLS)
        assert [w.sram_write_total for w in ledger.series(2)] == [2, 2, 1]

    def test_series_rejects_bad_window(self):
        """Should reject windows below one."""
        with pytest.raises(UsageError):
            AccessLedger().series(0)

    def test_kv_report(self):
        """Should print ledger.key=value lines."""
        ledger = AccessLedger()
        ledger.charge_tcam_read()
        report = ledger.report("kv")
        assert "ledger.tcam_reads=1" in report.splitlines()


class TestLatency:
    """Tests for the lookup latency model."""

    def test_access_counts(self):
        """Should count 1 TCAM plus 3 SRAM accesses, 4 with dedup."""
        assert lookup_access_counts() == (1, 3)
        assert lookup_access_counts(dedup=True) == (1, 4)
        assert lookup_access_counts(acl_baseline=True) == (1, 1)
        assert lookup_access_counts(double_tcam_request=True) == (2, 3)

    def test_default_costs(self):
        """Should give 10.5 ns and one packet per TCAM cycle."""
        est = latency_estimate()
        assert est.lookup_cycles == (1, 3)
        assert est.ns == pytest.approx(6.0 + 3 * 1.5)
        assert est.packets_per_second == pytest.approx(1e9 / 6.0)

    def test_dedup_adds_latency_not_throughput(self):
        """Should cost one more SRAM cycle with dedup at the same throughput."""
        plain, dedup = latency_estimate(), latency_estimate(dedup=True)
        assert dedup.ns - plain.ns == pytest.approx(1.5)
        assert dedup.packets_per_second == plain.packets_per_second

    def test_double_request_halves_throughput(self):
        """Should halve throughput with two sequential TCAM requests."""
        assert latency_estimate(double_tcam_request=True).packets_per_second == pytest.approx(1e9 / 12.0)

    def test_sram_must_be_faster(self):
        """Should reject SRAM cycles that are not below the TCAM cycle."""
        with pytest.raises(ValidationError, match="must be smaller than"):
            CycleCosts(tcam_cycle_ns=2.0, sram_cycle_ns=2.0)


class TestBudget:
    """Tests for the SRAM write budget check."""

    def test_reference_worst_case(self):
        """Should quote 5,000,000 writes per second for the reference router."""
        report = sram_write_budget_check(500, 10_000, 2e8)
        assert report.worst_case_writes_per_sec == 5_000_000
        assert report.reference_worst_case == 5_000_000
        assert report.passes

    def test_failing_budget(self):
        """Should fail when the worst case exceeds the SRAM budget."""
        assert not sram_write_budget_check(500, 10_000, 1e6).passes

    def test_measured_rate(self):
        """Should scale measured writes per update by the update rate."""
        report = sram_write_budget_check(500, 10_000, 1e6, measured_writes_per_update=2.0)
        assert report.measured_writes_per_sec == 1000.0
        assert report.measured_passes is True
        assert report.as_dict()["measured_pass"] is True

    def test_negative_inputs(self):
        """Should reject negative inputs."""
        with pytest.raises(UsageError):
            sram_write_budget_check(-1, 10, 10)


class TestTcamLayout:
    """Tests for the length-clustered TCAM layout."""

    def test_insert_and_first_match(self):
        """Should report the longest matching prefix first."""
        layout = TcamLayout(4, prealloc=2)
        for text in ["1***", "****", "101*", "10**"]:
            assert layout_insert(layout, P(text)) == 1
        assert layout.first_match(Address(4, 0b1011)) == P("101*")
        assert layout.first_match(Address(4, 0b1100)) == P("1***")
        assert layout.first_match(Address(4, 0b0000)) == P("****")
        layout.check()

    def test_borrow_without_moves(self):
        """Should grow a full cluster from an empty neighbour for free."""
        layout = TcamLayout(4, prealloc=1)
        layout.insert(P("1***"))
        assert layout.insert(P("0***")) == 1
        assert layout.last_moves == 0
        layout.check()

    def test_borrow_with_moves(self):
        """Should shift one entry per full cluster between the gap and the free slot."""
        layout = TcamLayout(2, prealloc=2)
        for text in ["1*", "0*", "**", "00", "01"]:
            layout.insert(P(text, 2))
        assert layout.insert(P("11", 2)) == 3
        assert layout.last_moves == 2
        layout.check()
        assert layout.first_match(Address(2, 0b11)) == P("11", 2)
        assert layout.first_match(Address(2, 0b10)) == P("1*", 2)

    def test_capacity_exhausted(self):
        """Should raise CapacityError when every slot is used."""
        layout = TcamLayout(2, prealloc=1)
        for text in ["10", "1*", "**"]:
            layout.insert(P(text, 2))
        with pytest.raises(CapacityError):
            layout.insert(P("11", 2))

    def test_delete_frees_slot(self):
        """Should reuse a deleted slot without moves."""
        layout = TcamLayout(2, prealloc=1)
        layout.insert(P("10", 2))
        assert layout_delete(layout, P("10", 2)) == 1
        assert layout.insert(P("11", 2)) == 1
        assert len(layout) == 1

    def test_delete_missing(self):
        """Should reject deleting an unplaced prefix."""
        with pytest.raises(UsageError):
            TcamLayout(2).delete(P("10", 2))

    def test_many_inserts_keep_clusters(self):
        """Should keep every prefix inside its cluster under repeated borrowing."""
        layout = TcamLayout(4, prealloc=3)
        prefixes = [Prefix.make(4, 3, b << 1) for b in range(8)] + [Prefix.make(4, 2, b << 2) for b in range(4)]
        for p in prefixes:
            layout.insert(p)
        layout.check()
        for p in prefixes[:4]:
            layout.delete(p)
        for b in range(4):
            layout.insert(Prefix.make(4, 4, b))
        layout.check()
        assert len(layout) == 12
