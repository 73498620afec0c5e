"""Tests for synthetic workloads, the greedy exit balancer and fuzzing helpers."""

import random
import pytest
import sys
from pathlib import Path

from hypothesis import given, settings
from hypothesis import strategies as st
from pydantic import ValidationError

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from acl_oracle import RuleSet, oracle_lookup
from errors import RuleParseError, UsageError
from fist_engine import build
from prefix_core import Address, Prefix
from update_engine import OpKind, apply_to_ruleset, replay
from cost_model import AccessLedger
from workload_gen import (
    MacroFlow,
    Profile,
    ScenarioSpec,
    default_update_trace,
    exit_action,
    format_flows,
    gen_flows,
    gen_load_balance,
    gen_policy,
    optimal_makespan,
    parse_flows,
    random_prefixes,
    random_ruleset,
    random_trace,
)


def flows_with(volumes: list[float], width: int = 8) -> list[MacroFlow]:
    dest = Prefix.make(width, 4, 0b1010 << (width - 4))
    return [MacroFlow(dest, Prefix.make(width, width, i), v) for i, v in enumerate(volumes)]


class TestScenarioSpec:
    """Tests for ScenarioSpec validation."""

    def test_defaults(self):
        """Should default to the dense policy profile at width 32."""
        spec = ScenarioSpec()
        assert (spec.width, spec.profile, spec.exits) == (32, Profile.DENSE_POLICY, 2)

    def test_rule_count_bound(self):
        """Should reject more rules than destination-source pairs."""
        with pytest.raises(ValidationError, match="exceeds"):
            ScenarioSpec(dest_count=2, src_count=2, rule_count=5)

    def test_variation_range(self):
        """Should reject variation outside [0, 1]."""
        with pytest.raises(ValidationError):
            ScenarioSpec(variation=1.5)


class TestRandomPrefixes:
    """Tests for random_prefixes."""

    def test_distinct_and_in_range(self):
        """Should draw distinct prefixes inside the length range."""
        prefixes = random_prefixes(random.Random(1), 16, 50, 4, 12)
        assert len(set(prefixes)) == 50
        assert all(4 <= p.length <= 12 for p in prefixes)

    def test_dense_draw_uses_whole_space(self):
        """Should draw every prefix when asked for all of them."""
        prefixes = random_prefixes(random.Random(1), 3, 15, 0, 3)
        assert len(set(prefixes)) == 15

    def test_infeasible(self):
        """Should refuse more prefixes than exist."""
        with pytest.raises(UsageError, match="Cannot draw"):
            random_prefixes(random.Random(1), 2, 8, 0, 2)


class TestGenPolicy:
    """Tests for the dense policy generator."""

    def test_deterministic(self):
        """Should produce identical output for the same seed."""
        spec = ScenarioSpec(width=16, dest_count=20, src_count=5, seed=3)
        a, trace_a = gen_policy(spec)
        b, trace_b = gen_policy(spec)
        assert a.dump() == b.dump()
        assert trace_a == trace_b

    def test_full_cross_product(self):
        """Should write a rule for every destination and source group."""
        rs, trace = gen_policy(ScenarioSpec(width=16, dest_count=20, src_count=5))
        assert len(rs) == 100
        assert all(a is not None for a in rs.defaults.values())
        assert len(trace) == 20 + 100

    def test_sampled_rule_count(self):
        """Should sample exactly rule_count pairs."""
        rs, _ = gen_policy(ScenarioSpec(width=16, dest_count=20, src_count=5, rule_count=30))
        assert len(rs) == 30

    def test_zero_variation_shares_group_actions(self):
        """Should give every rule of a source group the same action."""
        rs, _ = gen_policy(ScenarioSpec(width=16, dest_count=20, src_count=5, action_count=8))
        by_source = {}
        for rule in rs.rules:
            by_source.setdefault(rule.src, set()).add(rule.action)
        assert all(len(actions) == 1 for actions in by_source.values())

    def test_trace_rebuilds_the_table(self):
        """Should replay into a table that answers like the generated rule set."""
        spec = ScenarioSpec(width=6, dest_count=6, src_count=4, seed=2)
        rs, trace = gen_policy(spec)
        t = build(RuleSet(6, 6))
        replay(t, trace, AccessLedger())
        for d in Address.all_addresses(6):
            for s in Address.all_addresses(6):
                assert t.lookup(d, s).action == oracle_lookup(rs, d, s).action


class TestLoadBalance:
    """Tests for the greedy exit balancer."""

    def test_single_flow_goes_to_first_exit(self):
        """Should place one flow on exit 1 without diverting rules."""
        result = gen_load_balance(flows_with([5.0]))
        assert result.assignment == [1]
        assert len(result.ruleset) == 0
        assert result.ruleset.default_of(result.flows[0].dest) == exit_action(1)

    def test_greedy_in_input_order(self):
        """Should reach 7 on {3, 3, 2, 2, 2}, within twice the optimum of 6."""
        volumes = [3.0, 3.0, 2.0, 2.0, 2.0]
        result = gen_load_balance(flows_with(volumes))
        assert result.assignment == [1, 2, 1, 2, 1]
        assert result.makespan == 7.0
        assert optimal_makespan(volumes) == 6.0
        assert result.makespan <= 2 * optimal_makespan(volumes)

    def test_sorted_order(self):
        """Should consider the largest flows first when sorting."""
        result = gen_load_balance(flows_with([1.0, 4.0, 3.0]), sort_descending=True)
        assert result.assignment == [2, 1, 2]
        assert result.loads == [4.0, 4.0]

    def test_diverted_rules(self):
        """Should emit one rule per flow off the primary exit."""
        result = gen_load_balance(flows_with([3.0, 3.0, 2.0, 2.0, 2.0]))
        assert len(result.ruleset) == 2
        assert {r.action for r in result.ruleset.rules} == {"exit2"}

    def test_unequal_capacities(self):
        """Should balance utilization rather than load."""
        result = gen_load_balance(flows_with([2.0, 2.0, 2.0]), capacities=(2.0, 1.0))
        assert result.assignment == [1, 1, 2]
        assert result.utilization == [2.0, 2.0]

    def test_rejects_duplicates_and_bad_capacities(self):
        """Should refuse duplicate flows and non-positive capacities."""
        flows = flows_with([1.0])
        with pytest.raises(UsageError, match="Duplicate"):
            gen_load_balance(flows + flows)
        with pytest.raises(UsageError):
            gen_load_balance(flows, capacities=(1.0, 0.0))
        with pytest.raises(UsageError):
            gen_load_balance(flows, capacities=(1.0,))
        with pytest.raises(UsageError):
            gen_load_balance([])

    def test_negative_volume(self):
        """Should refuse negative or infinite volumes."""
        with pytest.raises(UsageError):
            flows_with([-1.0])
        with pytest.raises(UsageError):
            flows_with([float("inf")])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0.0, 100.0), min_size=1, max_size=8), st.booleans())
    def test_within_twice_optimum(self, volumes, sort_descending):
        """Should stay within twice the optimal makespan on equal capacities."""
        result = gen_load_balance(flows_with(volumes), sort_descending=sort_descending)
        assert result.makespan <= 2 * optimal_makespan(volumes) + 1e-9

    @pytest.mark.slow
    def test_within_twice_optimum_on_many_seeds(self):
        """Should stay within twice the optimum for 500 seeded sets of up to 12 flows."""
        for seed in range(500):
            rng = random.Random(seed)
            volumes = [rng.uniform(0.0, 100.0) for _ in range(rng.randint(1, 12))]
            bound = 2 * optimal_makespan(volumes) + 1e-9
            for sort_descending in (False, True):
                result = gen_load_balance(flows_with(volumes), sort_descending=sort_descending)
                assert result.makespan <= bound, (seed, volumes)

    def test_generated_flows(self):
        """Should draw rule_count distinct flows with heavy-tailed volumes."""
        spec = ScenarioSpec(width=16, dest_count=10, src_count=10, rule_count=25, profile=Profile.SPARSE_LB)
        flows = gen_flows(spec)
        assert len(flows) == 25
        assert len({(f.dest, f.src) for f in flows}) == 25
        assert all(f.volume >= 1.0 for f in flows)


class TestFlowFiles:
    """Tests for the flow file format."""

    def test_format_then_parse(self):
        """Should read back what it writes."""
        flows = flows_with([1.5, 2.0])
        assert parse_flows(format_flows(flows).splitlines(), 8, 8) == flows

    def test_bad_volume(self):
        """Should report unparseable volumes with the line number."""
        with pytest.raises(RuleParseError, match="line 1: invalid volume"):
            parse_flows(["1******* 0******* lots"], 8, 8)

    def test_duplicate_flow(self):
        """Should reject the same flow twice."""
        with pytest.raises(RuleParseError, match="duplicate flow"):
            parse_flows(["1******* 0******* 1", "1******* 0******* 2"], 8, 8)


class TestFuzzHelpers:
    """Tests for random rule sets and traces."""

    def test_random_ruleset_is_deterministic(self):
        """Should depend on the seed only."""
        assert random_ruleset(4, 8, 50).dump() == random_ruleset(4, 8, 50).dump()
        assert random_ruleset(4, 8, 50).dump() != random_ruleset(5, 8, 50).dump()

    def test_random_ruleset_size(self):
        """Should contain the requested number of rules."""
        assert len(random_ruleset(0, 8, 50)) == 50

    def test_random_trace_is_valid(self):
        """Should replay cleanly against the shadow rule set."""
        rs = random_ruleset(1, 4, 12)
        ops = random_trace(rs, 60, 1)
        assert len(ops) == 60
        for op in ops:
            rs = apply_to_ruleset(rs, op)

    def test_default_update_trace(self):
        """Should change the default action on every op."""
        rs = random_ruleset(1, 6, 20)
        ops = default_update_trace(rs, 30, 1)
        current = {d: a for d, a in rs.defaults.items() if a is not None}
        for op in ops:
            assert op.kind is OpKind.UPDATE and op.src.is_wildcard
            assert current[op.dest] != op.action
            current[op.dest] = op.action
