"""Tests for fingerprints, the membership filter and the narrow TD-table."""

import pytest
import sys
from pathlib import Path

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from errors import UsageError
from fist_engine import BuildOptions, build
from narrow_store import MembershipFilter, NarrowStore, VectorInterner, check_algorithm, fingerprint, narrow_lookup
from td_table import INVALID, TdTable


def table_from(rows: list[list[int]]) -> TdTable:
    td = TdTable()
    for _ in rows:
        td.allocate_row()
    for _ in rows[0]:
        td.allocate_col()
    for r, values in enumerate(rows):
        for c, value in enumerate(values):
            td.set(r, c, value)
    return td


class TestFingerprint:
    """Tests for fingerprints and algorithm checks."""

    def test_equal_vectors_share_digest(self):
        """Should depend only on the cell values."""
        a = np.array([1, INVALID, 3], dtype=np.int32)
        b = np.array([1, -1, 3], dtype=np.int64)
        assert fingerprint(a) == fingerprint(b)
        assert len(fingerprint(a)) == 20

    def test_order_matters(self):
        """Should distinguish permutations."""
        assert fingerprint(np.array([1, 2])) != fingerprint(np.array([2, 1]))

    def test_rejects_short_and_unknown_algorithms(self):
        """Should accept sha1 and sha256 only among these."""
        check_algorithm("sha1")
        check_algorithm("sha256")
        with pytest.raises(UsageError, match="need at least 160"):
            check_algorithm("md5")
        with pytest.raises(UsageError, match="Unknown"):
            check_algorithm("not-a-hash")


class TestMembershipFilter:
    """Tests for the bloom filter."""

    def test_no_false_negatives(self):
        """Should report every added key as maybe present."""
        f = MembershipFilter(100)
        keys = [fingerprint(np.array([i])) for i in range(100)]
        for key in keys:
            f.add(key)
        assert all(key in f for key in keys)

    def test_mostly_negative_for_new_keys(self):
        """Should reject most keys that were never added."""
        f = MembershipFilter(100)
        for i in range(100):
            f.add(fingerprint(np.array([i])))
        unseen = sum(fingerprint(np.array([i])) in f for i in range(1000, 2000))
        assert unseen < 100


class TestVectorInterner:
    """Tests for VectorInterner."""

    def test_assigns_ids_in_first_seen_order(self):
        """Should reuse the id of an equal vector after a byte check."""
        interner = VectorInterner()
        assert interner.intern(np.array([1, 2])) == 0
        assert interner.intern(np.array([3, 4])) == 1
        assert interner.intern(np.array([1, 2])) == 0
        assert interner.byte_checks == 1
        assert len(interner) == 2


class TestNarrowStore:
    """Tests for NarrowStore."""

    def test_worked_example_blocks(self, worked_rules):
        """Should store four distinct two-cell blocks behind eight catalog entries."""
        t = build(worked_rules)
        store = NarrowStore.from_table(t.td, 2)
        assert store.chunk_count == 2
        assert len(store.catalog) == 8
        assert len(store.narrow_td) == 4
        assert store.catalog[(2, 1)] == store.catalog[(1, 0)]
        assert store.catalog[(3, 0)] == store.catalog[(3, 1)]
        assert store.stats.duplicates == 4

    def test_worked_example_block_contents(self, worked_rules):
        """Should hold the four distinct blocks and map every (row, chunk) onto them."""
        x = INVALID
        t = build(worked_rules)
        store = NarrowStore.from_table(t.td, 2)
        assert {k: v.tolist() for k, v in store.narrow_td.items()} == {
            0: [0, 1],
            1: [x, x],
            2: [2, x],
            3: [3, x],
        }
        assert store.catalog == {
            (0, 0): 0, (0, 1): 1,
            (1, 0): 2, (1, 1): 1,
            (2, 0): 2, (2, 1): 2,
            (3, 0): 3, (3, 1): 3,
        }
        assert store.refcounts == {0: 1, 1: 2, 2: 3, 3: 2}

    def test_tail_chunk_is_padded(self):
        """Should pad the last chunk with INVALID."""
        store = NarrowStore.from_table(table_from([[1, 2, 3]]), 2)
        assert store.narrow_td[store.catalog[(0, 1)]].tolist() == [3, INVALID]

    def test_lookup_reconstructs_rows(self, worked_rules):
        """Should rebuild every row exactly from the catalog."""
        t = build(worked_rules)
        store = NarrowStore.from_table(t.td, 2)
        for row in t.td.assigned_rows:
            assert store.reconstruct(row, 3).tolist() == t.td.row_vector(row).tolist()
            assert narrow_lookup(store, row, 2) == t.td.get(row, 2)

    def test_lookup_unknown_row(self):
        """Should raise UsageError outside the catalog."""
        store = NarrowStore.from_table(table_from([[1, 2]]), 2)
        with pytest.raises(UsageError):
            store.lookup(5, 0)

    def test_refresh_after_write(self):
        """Should repoint a changed chunk and reclaim the unused narrow row."""
        td = table_from([[1, 2], [3, 4]])
        td.track_dirty = True
        store = NarrowStore.from_table(td, 2)
        td.set(1, 0, 1)
        td.set(1, 1, 2)
        catalog_writes, narrow_writes = store.refresh(td)
        assert (catalog_writes, narrow_writes) == (1, 0)
        assert store.catalog[(1, 0)] == store.catalog[(0, 0)]
        assert len(store.narrow_td) == 1

    def test_refresh_after_row_release(self):
        """Should drop catalog entries of released rows."""
        td = table_from([[1, 2], [3, 4]])
        td.track_dirty = True
        store = NarrowStore.from_table(td, 2)
        td.release_row(1)
        store.refresh(td)
        assert (1, 0) not in store.catalog
        assert len(store.narrow_td) == 1

    def test_stored_bits(self, worked_rules):
        """Should size narrow rows and catalog pointers."""
        t = build(worked_rules)
        store = NarrowStore.from_table(t.td, 2)
        assert store.stored_bits(2) == {"narrow": 4 * 2 * 2, "catalog": 8 * 2}

    def test_rejects_bad_width(self):
        """Should reject narrow widths below one."""
        with pytest.raises(UsageError):
            NarrowStore(0)

    def test_table_with_store_tracks_updates(self, worked_rules):
        """Should keep the narrow view in sync through table updates."""
        from update_engine import delete, insert
        from prefix_core import Prefix

        t = build(worked_rules, BuildOptions(dedup_width=2))
        insert(t, Prefix.parse("0***", 4), Prefix.parse("100*", 4), "1.0.0.3")
        delete(t, Prefix.parse("111*", 4), Prefix.parse("100*", 4))
        for row in t.td.assigned_rows:
            for col in t.td.assigned_cols:
                assert t.narrow.lookup(row, col) == t.td.get(row, col)

    @settings(max_examples=30, deadline=None)
    @given(
        st.lists(st.lists(st.integers(-1, 3), min_size=5, max_size=5), min_size=1, max_size=6),
        st.integers(1, 5),
    )
    def test_round_trip(self, rows, width):
        """Should reproduce every cell for any narrow width."""
        td = table_from(rows)
        store = NarrowStore.from_table(td, width)
        for r, values in enumerate(rows):
            assert store.reconstruct(r, 5).tolist() == values

    @pytest.mark.slow
    @pytest.mark.parametrize("width", [1, 2, 4, 8])
    def test_hundred_random_tables(self, width):
        """Should answer every cell of 100 random tables through the catalog."""
        rng = np.random.default_rng(width)
        for _ in range(100):
            rows, cols = rng.integers(1, 24, size=2)
            cells = rng.integers(-1, 6, size=(rows, cols)).tolist()
            td = table_from(cells)
            store = NarrowStore.from_table(td, width)
            for r, values in enumerate(cells):
                assert store.reconstruct(r, int(cols)).tolist() == values
                assert [narrow_lookup(store, r, c) for c in range(int(cols))] == values
