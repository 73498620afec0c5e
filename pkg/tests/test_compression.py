"""Tests for ORTC, TCAM minimization and TD-table deduplication."""

import itertools
import pytest
import sys
from pathlib import Path
from typing import Callable, Hashable

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from acl_oracle import Rule, RuleSet, oracle_lookup
from compression import (
    apply_fixed_block,
    comp_tcam,
    compression_report,
    dedup_fixed_block,
    dedup_rows_cols,
    destination_keys,
    ortc,
    source_keys,
)
from errors import UsageError
from fist_engine import BuildOptions, build
from prefix_core import Address, Prefix
from td_table import INVALID
from workload_gen import random_ruleset


def P(text: str, width: int = 4) -> Prefix:
    return Prefix.parse(text, width)


def resolve(table: dict, address: Address):
    best = None
    for prefix in table:
        if prefix.matches(address) and (best is None or prefix.length > best.length):
            best = prefix
    return None if best is None else table[best]


def all_prefixes(width: int) -> list[Prefix]:
    return [
        Prefix.make(width, length, bits << (width - length))
        for length in range(width + 1)
        for bits in range(1 << length)
    ]


def brute_force_minimum(function: dict[int, str], width: int) -> int:
    """Smallest prefix table reproducing `function` on every address."""
    actions = sorted(set(function.values()))
    prefixes = all_prefixes(width)
    addresses = list(Address.all_addresses(width))
    for size in range(1, len(prefixes) + 1):
        for chosen in itertools.combinations(prefixes, size):
            for assignment in itertools.product(actions, repeat=size):
                table = dict(zip(chosen, assignment))
                if all(resolve(table, a) == function[a.bits] for a in addresses):
                    return size
    raise AssertionError("no table found")


def smallest_grouping(behaviour: dict[int, Hashable], width: int, unmatched_ok: Callable[[Hashable], bool]) -> int:
    """
    Fewest prefixes such that addresses sharing a longest match share a
    behaviour, and addresses matching nothing share one `unmatched_ok` accepts.
    """
    prefixes = all_prefixes(width)
    addresses = list(Address.all_addresses(width))
    for size in range(len(prefixes) + 1):
        for chosen in itertools.combinations(prefixes, size):
            groups: dict = {}
            for a in addresses:
                best = None
                for prefix in chosen:
                    if prefix.matches(a) and (best is None or prefix.length > best.length):
                        best = prefix
                if groups.setdefault(best, behaviour[a.bits]) != behaviour[a.bits]:
                    break
            else:
                if None not in groups or unmatched_ok(groups[None]):
                    return size
    raise AssertionError("no grouping found")


def assert_equivalent(t, rs: RuleSet) -> None:
    for d in Address.all_addresses(t.width_d):
        for s in Address.all_addresses(t.width_s):
            assert t.lookup(d, s).action == oracle_lookup(rs, d, s).action, (str(d), str(s))


class TestOrtc:
    """Tests for one-dimensional ORTC."""

    def test_collapses_uniform_children(self):
        """Should replace two children with the same action by one root entry."""
        entries = {P("**", 2): "a", P("0*", 2): "b", P("1*", 2): "b"}
        assert ortc(entries, 2) == {P("**", 2): "b"}

    def test_minimal_table(self):
        """Should express three a's and one b with two entries."""
        entries = {P("00", 2): "a", P("01", 2): "a", P("10", 2): "a", P("11", 2): "b"}
        assert ortc(entries, 2, root_action="c") == {P("**", 2): "a", P("11", 2): "b"}

    def test_prefers_designated_root(self):
        """Should keep the preferred root action when it costs nothing."""
        entries = {P("0*", 2): "a", P("1*", 2): "b"}
        result = ortc(entries, 2, root_action="m", prefer_root="b")
        assert result == {P("**", 2): "b", P("0*", 2): "a"}

    def test_requires_root(self):
        """Should refuse a table without a wildcard or root action."""
        with pytest.raises(UsageError, match="root action"):
            ortc({P("0*", 2): "a"}, 2)

    def test_width_mismatch(self):
        """Should refuse prefixes of another width."""
        with pytest.raises(UsageError):
            ortc({P("0***"): "a"}, 2, root_action="a")

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 3), st.sampled_from("abc")), max_size=6))
    def test_equivalent_and_minimal(self, raw):
        """Should keep every lookup and match the brute-force minimum size."""
        entries = {Prefix.make(2, length, bits): action for length, bits, action in raw}
        result = ortc(entries, 2, root_action="a")
        function = {}
        for address in Address.all_addresses(2):
            expected = resolve(entries, address)
            function[address.bits] = "a" if expected is None else expected
            assert resolve(result, address) == function[address.bits]
        assert len(result) == brute_force_minimum(function, 2)


class TestCompTcam:
    """Tests for destination and source table minimization."""

    def test_worked_example(self, worked_rules):
        """Should shrink 5 + 3 entries to 4 + 3 and keep every lookup."""
        t = build(worked_rules)
        out = comp_tcam(t)
        assert len(out.dest_trie) == 4
        assert len(out.src_trie) == 3
        assert out.tcam_entry_count() == 7
        assert out.frozen
        assert_equivalent(out, worked_rules)

    def test_input_is_untouched(self, worked_rules):
        """Should leave the source table as it was."""
        t = build(worked_rules)
        before = t.dump()
        comp_tcam(t)
        assert t.dump() == before

    def test_destination_keys(self, worked_rules):
        """Should fold rows that only repeat the default."""
        keys = destination_keys(build(worked_rules))
        assert keys[P("10**")] == (3, None)
        assert keys[P("11**")] == (0, None)
        assert keys[P("111*")][1] is not None

    def test_source_keys_cover_reachable_sources(self, worked_rules):
        """Should key every reachable source."""
        keys = source_keys(build(worked_rules))
        assert set(keys) == {P("111*"), P("100*"), P("11**")}

    def test_shadowed_source_is_ignored(self):
        """Should drop a source fully covered by its stored descendants."""
        rs = RuleSet(
            4,
            4,
            [
                Rule(P("1***"), P("0***"), "x"),
                Rule(P("1***"), P("00**"), "y"),
                Rule(P("1***"), P("01**"), "y"),
            ],
            {P("1***"): "d"},
        )
        out = comp_tcam(build(rs))
        assert P("0***") in out.src_trie
        assert P("00**") not in out.src_trie
        assert len(out.src_trie) == 1
        assert_equivalent(out, rs)

    def test_rejects_unsaturated(self, worked_rules):
        """Should refuse a table whose cells drifted from saturation."""
        t = build(worked_rules)
        t.td.set(t.row_of(P("101*")), t.col_of(P("111*")), INVALID)
        with pytest.raises(UsageError, match="saturated"):
            comp_tcam(t)

    def test_compressed_table_is_read_only(self, worked_rules):
        """Should refuse updates after compression."""
        from update_engine import insert

        out = comp_tcam(build(worked_rules))
        with pytest.raises(UsageError, match="frozen"):
            insert(out, P("0***"), P("0***"), "x")

    @pytest.mark.parametrize("seed", range(6))
    @pytest.mark.parametrize(
        "options",
        [BuildOptions(), BuildOptions(isolation=False), BuildOptions(non_homogeneous=False)],
        ids=["default", "no-isolation", "homogeneous"],
    )
    def test_random_sets_stay_equivalent(self, seed, options):
        """Should never grow the TCAM and never change a lookup."""
        rs = random_ruleset(seed, 5, 30)
        t = build(rs, options)
        out = comp_tcam(t)
        assert out.tcam_entry_count() <= t.tcam_entry_count()
        assert_equivalent(out, rs)


class TestCompTcamMinimality:
    """Tests comparing comp_tcam against an exhaustive search over three-bit tables."""

    WIDTH = 3

    def behaviours(self, rs: RuleSet) -> tuple[dict, dict]:
        dests = list(Address.all_addresses(self.WIDTH))
        srcs = list(Address.all_addresses(self.WIDTH))
        answer = {(d.bits, s.bits): oracle_lookup(rs, d, s).action for d in dests for s in srcs}
        by_dest = {d.bits: tuple(answer[d.bits, s.bits] for s in srcs) for d in dests}
        by_src = {s.bits: tuple(answer[d.bits, s.bits] for d in dests) for s in srcs}
        return by_dest, by_src

    @pytest.mark.parametrize("seed", range(8))
    @pytest.mark.parametrize(
        "options",
        [BuildOptions(), BuildOptions(isolation=False, non_homogeneous=False)],
        ids=["default", "flat"],
    )
    def test_matches_exhaustive_minimum(self, seed, options):
        """Should use the fewest destination and source entries any equivalent table can."""
        rs = random_ruleset(seed, self.WIDTH, 10)
        by_dest, by_src = self.behaviours(rs)
        miss_everywhere = tuple([None] * (1 << self.WIDTH))
        # a destination that misses somewhere cannot carry a default
        missing = [d for d, answers in sorted(by_dest.items()) if None in answers]
        dest_min = smallest_grouping(by_dest, self.WIDTH, lambda b: b == miss_everywhere)
        src_min = smallest_grouping(by_src, self.WIDTH, lambda b: all(b[d] is None for d in missing))

        out = comp_tcam(build(rs, options))
        assert (len(out.dest_trie), len(out.src_trie)) == (dest_min, src_min)
        assert_equivalent(out, rs)

    def test_defaults_absorb_the_source_root(self):
        """Should drop a covering source wildcard when destination defaults can answer for it."""
        rs = RuleSet(
            4,
            4,
            [
                Rule(P("1***"), P("0***"), "a"),
                Rule(P("1***"), P("1***"), "b"),
                Rule(P("0***"), P("0***"), "a"),
                Rule(P("0***"), P("1***"), "c"),
            ],
            {P("1***"): "x", P("0***"): "y"},
        )
        out = comp_tcam(build(rs))
        assert len(out.src_trie) == 1
        assert_equivalent(out, rs)

    def test_equal_behaviour_under_full_cover_shares_a_key(self):
        """Should ignore unreachable defaults when every source address is covered."""
        rs = RuleSet(
            4,
            4,
            [
                Rule(P("1***"), P("0***"), "a"),
                Rule(P("1***"), P("1***"), "b"),
                Rule(P("0***"), P("0***"), "a"),
                Rule(P("0***"), P("1***"), "b"),
            ],
            {P("1***"): "x", P("0***"): "y"},
        )
        keys = destination_keys(build(rs))
        assert keys[P("1***")] == keys[P("0***")]
        out = comp_tcam(build(rs))
        assert len(out.dest_trie) == 1
        assert_equivalent(out, rs)


class TestDedup:
    """Tests for row/column sharing and fixed-block deduplication."""

    @pytest.mark.parametrize("seed", range(6))
    def test_dims_equal_distinct_vectors(self, seed):
        """Should keep exactly one row per distinct row and one column per distinct column."""
        rs = random_ruleset(seed, 5, 40)
        t = build(rs)
        matrix = t.td.matrix()
        out = dedup_rows_cols(t)
        assert out.td.row_count == np.unique(matrix, axis=0).shape[0]
        assert out.td.col_count == np.unique(matrix, axis=1).shape[1]
        assert_equivalent(out, rs)

    def test_identical_rows_share(self):
        """Should point destinations with equal rows at one row."""
        rs = RuleSet(
            4,
            4,
            [
                Rule(P("1***"), P("00**"), "a"),
                Rule(P("0***"), P("00**"), "a"),
                Rule(P("1***"), P("11**"), "b"),
                Rule(P("0***"), P("11**"), "b"),
            ],
        )
        t = build(rs)
        out = dedup_rows_cols(t)
        assert (t.td.row_count, out.td.row_count) == (2, 1)
        assert out.row_of(P("1***")) == out.row_of(P("0***"))
        assert out.td.col_count == 2
        assert_equivalent(out, rs)

    def test_identical_columns_share(self):
        """Should point sources with equal columns at one column."""
        rs = RuleSet(4, 4, [Rule(P("1***"), P("00**"), "a"), Rule(P("1***"), P("11**"), "a")])
        out = dedup_rows_cols(build(rs))
        assert out.td.col_count == 1
        assert out.col_of(P("00**")) == out.col_of(P("11**"))
        assert_equivalent(out, rs)

    def test_fixed_block_on_worked_example(self, worked_rules):
        """Should find four distinct two-cell blocks."""
        store = dedup_fixed_block(build(worked_rules), 2)
        assert len(store.narrow_td) == 4
        assert len(store.catalog) == 8

    def test_apply_fixed_block_keeps_lookups(self, worked_rules):
        """Should answer through the catalog exactly like the wide table."""
        t = apply_fixed_block(build(worked_rules), 2)
        assert t.narrow is not None
        assert t.options.dedup_width == 2
        assert_equivalent(t, worked_rules)

    def test_pipeline_report(self, worked_rules):
        """Should report sizes before and after every stage."""
        t = build(worked_rules)
        final = apply_fixed_block(dedup_rows_cols(comp_tcam(t)), 2)
        report = compression_report(t, final)
        assert (report.dest_before, report.dest_after) == (5, 4)
        assert report.tcam_bits_after < report.tcam_bits_before
        assert report.narrow_rows == len(final.narrow.narrow_td)
        assert report.dedup_ratio == round(report.chunks / report.narrow_rows, 4)
        assert "compress.dest_after=4" in report.render("kv").splitlines()
        assert_equivalent(final, worked_rules)
