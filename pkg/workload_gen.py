"""
Synthetic workloads: dense policy tables, sparse load-balancing flow sets,
the greedy exit balancer, and random rule sets and traces for fuzzing.

Everything here is a pure function of its arguments and seed.
"""

import itertools
import math
import random
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import structlog
from pydantic import BaseModel, Field, ValidationInfo, field_validator

from acl_oracle import Rule, RuleSet
from errors import PrefixParseError, RuleParseError, UsageError
from prefix_core import Prefix
from update_engine import OpKind, TraceOp, apply_to_ruleset

logger = structlog.get_logger(__name__)

PRIMARY_EXIT = 1


class Profile(str, Enum):
    DENSE_POLICY = "dense-policy"
    SPARSE_LB = "sparse-lb"


class ScenarioSpec(BaseModel):
    """Parameters of one generated scenario."""

    width: int = Field(default=32, ge=1, le=128)
    dest_count: int = Field(default=100, ge=1)
    src_count: int = Field(default=10, ge=1)
    rule_count: int | None = Field(default=None, ge=1)
    action_count: int = Field(default=4, ge=1)
    profile: Profile = Profile.DENSE_POLICY
    variation: float = Field(default=0.0, ge=0.0, le=1.0)
    exits: int = Field(default=2, ge=2)
    seed: int = 0

    @field_validator("rule_count")
    @classmethod
    def check_rule_count(cls, v: int | None, info: ValidationInfo) -> int | None:
        if v is None:
            return v
        dests, srcs = info.data.get("dest_count"), info.data.get("src_count")
        if dests is not None and srcs is not None and v > dests * srcs:
            raise ValueError(f"rule_count {v} exceeds dest_count * src_count ({dests * srcs})")
        return v


@dataclass(frozen=True)
class MacroFlow:
    """Traffic aggregated by (destination prefix, source prefix)."""

    dest: Prefix
    src: Prefix
    volume: float

    def __post_init__(self):
        if not math.isfinite(self.volume) or self.volume < 0:
            raise UsageError(f"Flow volume must be finite and non-negative, got: {self.volume}")


def action_names(count: int) -> list[str]:
    return [f"nh{i}" for i in range(count)]


def _length_range(width: int) -> tuple[int, int]:
    if width < 8:
        return 1, width
    return width // 4, (3 * width) // 4


def random_prefixes(
    rng: random.Random,
    width: int,
    count: int,
    min_len: int = 1,
    max_len: int | None = None,
    exclude: Iterable[Prefix] = (),
) -> list[Prefix]:
    """`count` distinct prefixes with lengths drawn uniformly from [min_len, max_len]."""
    max_len = width if max_len is None else max_len
    if not 0 <= min_len <= max_len <= width:
        raise UsageError(f"Invalid prefix length range [{min_len}, {max_len}] for width {width}")
    taken = set(exclude)
    capacity = sum(1 << length for length in range(min_len, max_len + 1))
    available = capacity - sum(1 for p in taken if min_len <= p.length <= max_len)
    if count > available:
        raise UsageError(
            f"Cannot draw {count} distinct prefixes of length {min_len}-{max_len} at width {width}"
        )

    if count * 2 > available:
        universe = [
            Prefix.make(width, length, bits << (width - length))
            for length in range(min_len, max_len + 1)
            for bits in range(1 << length)
        ]
        universe = [p for p in universe if p not in taken]
        return rng.sample(universe, count)

    out: list[Prefix] = []
    while len(out) < count:
        length = rng.randint(min_len, max_len)
        prefix = Prefix.make(width, length, rng.getrandbits(width))
        if prefix in taken:
            continue
        taken.add(prefix)
        out.append(prefix)
    return out


def gen_policy(spec: ScenarioSpec) -> tuple[RuleSet, list[TraceOp]]:
    """
    Dense policy table: every destination carries a rule for each source
    group (or `rule_count` sampled pairs), with the group's shared action
    perturbed per rule with probability `variation`.

    Also returns the insertion-only trace that builds the same table from
    empty: defaults first, then rules destination by destination.
    """
    rng = random.Random(spec.seed)
    low, high = _length_range(spec.width)
    dests = random_prefixes(rng, spec.width, spec.dest_count, low, high)
    srcs = random_prefixes(rng, spec.width, spec.src_count, low, high)
    actions = action_names(spec.action_count)
    group_action = [rng.choice(actions) for _ in srcs]

    pairs = [(d, g) for d in range(len(dests)) for g in range(len(srcs))]
    if spec.rule_count is not None:
        pairs = sorted(rng.sample(pairs, spec.rule_count))

    rules = []
    for d, g in pairs:
        action = group_action[g]
        if spec.variation and rng.random() < spec.variation:
            action = rng.choice(actions)
        rules.append(Rule(dests[d], srcs[g], action))
    defaults = {dest: rng.choice(actions) for dest in dests}

    wildcard = Prefix.wildcard(spec.width)
    trace = [TraceOp(OpKind.INSERT, dest, wildcard, action) for dest, action in defaults.items()]
    trace += [TraceOp(OpKind.INSERT, r.dest, r.src, r.action) for r in rules]

    rs = RuleSet(spec.width, spec.width, rules, defaults)
    logger.info(
        "policy_generated",
        destinations=len(dests),
        sources=len(srcs),
        rules=len(rules),
        seed=spec.seed,
    )
    return rs, trace


def heavy_tail_volumes(rng: random.Random, count: int, alpha: float = 1.5, scale: float = 1.0) -> list[float]:
    """Pareto-distributed volumes, rounded to three decimals."""
    return [round(scale * rng.paretovariate(alpha), 3) for _ in range(count)]


def gen_flows(spec: ScenarioSpec) -> list[MacroFlow]:
    """Sparse macro-flow set: `rule_count` (default `dest_count`) random (dest, src) pairs."""
    rng = random.Random(spec.seed)
    low, high = _length_range(spec.width)
    dests = random_prefixes(rng, spec.width, spec.dest_count, low, high)
    srcs = random_prefixes(rng, spec.width, spec.src_count, low, high)
    count = spec.rule_count or spec.dest_count
    pairs = rng.sample([(d, s) for d in dests for s in srcs], count)
    volumes = heavy_tail_volumes(rng, count)
    return [MacroFlow(d, s, v) for (d, s), v in zip(pairs, volumes)]


@dataclass
class BalanceResult:
    """Greedy exit assignment; `assignment[i]` is the 1-based exit of flow i."""

    flows: list[MacroFlow]
    capacities: tuple[float, ...]
    assignment: list[int]
    loads: list[float]
    ruleset: RuleSet

    @property
    def utilization(self) -> list[float]:
        return [load / cap for load, cap in zip(self.loads, self.capacities)]

    @property
    def makespan(self) -> float:
        return max(self.utilization)

    def as_dict(self) -> dict[str, object]:
        out: dict[str, object] = {"flows": len(self.flows), "makespan": round(self.makespan, 6)}
        for i, (load, util) in enumerate(zip(self.loads, self.utilization), start=1):
            out[f"exit{i}.load"] = round(load, 6)
            out[f"exit{i}.utilization"] = round(util, 6)
        out["diverted_rules"] = len(self.ruleset)
        return out


def exit_action(exit_number: int) -> str:
    return f"exit{exit_number}"


def _check_capacities(capacities: Sequence[float]) -> tuple[float, ...]:
    capacities = tuple(float(c) for c in capacities)
    if len(capacities) < 2:
        raise UsageError("Load balancing needs at least two exits")
    if any(not math.isfinite(c) or c <= 0 for c in capacities):
        raise UsageError(f"Exit capacities must be positive, got: {capacities}")
    return capacities


def gen_load_balance(
    flows: Sequence[MacroFlow],
    capacities: Sequence[float] = (1.0, 1.0),
    sort_descending: bool = False,
) -> BalanceResult:
    """
    Assign each flow to the exit whose utilization after taking it is
    lowest (ties to the lowest exit). Flows are considered in input order,
    or largest first with `sort_descending`.

    The returned rule set routes every destination to exit 1 by default and
    carries one rule per flow diverted to another exit.
    """
    if not flows:
        raise UsageError("Load balancing needs at least one flow")
    capacities = _check_capacities(capacities)
    seen = set()
    for flow in flows:
        if (flow.dest, flow.src) in seen:
            raise UsageError(f"Duplicate flow ({flow.dest}, {flow.src})")
        seen.add((flow.dest, flow.src))

    order = range(len(flows))
    if sort_descending:
        order = sorted(order, key=lambda i: -flows[i].volume)

    loads = [0.0] * len(capacities)
    assignment = [0] * len(flows)
    for i in order:
        volume = flows[i].volume
        chosen = min(range(len(capacities)), key=lambda k: ((loads[k] + volume) / capacities[k], k))
        loads[chosen] += volume
        assignment[i] = chosen + 1

    width_d, width_s = flows[0].dest.width, flows[0].src.width
    defaults = {flow.dest: exit_action(PRIMARY_EXIT) for flow in flows}
    rules = [
        Rule(flow.dest, flow.src, exit_action(exit_number))
        for flow, exit_number in zip(flows, assignment)
        if exit_number != PRIMARY_EXIT
    ]
    rs = RuleSet(width_d, width_s, rules, defaults)
    logger.debug("load_balanced", flows=len(flows), exits=len(capacities), diverted=len(rules))
    return BalanceResult(list(flows), capacities, assignment, loads, rs)


def optimal_makespan(volumes: Sequence[float], capacities: Sequence[float] = (1.0, 1.0)) -> float:
    """Exact minimum over every assignment of flows to exits; exponential, meant for small inputs."""
    capacities = _check_capacities(capacities)
    if not volumes:
        return 0.0
    best = math.inf
    for assignment in itertools.product(range(len(capacities)), repeat=len(volumes)):
        loads = [0.0] * len(capacities)
        for volume, k in zip(volumes, assignment):
            loads[k] += volume
        best = min(best, max(load / cap for load, cap in zip(loads, capacities)))
    return best


def parse_flows(lines: Iterable[str], width_d: int, width_s: int) -> list[MacroFlow]:
    """`<dest> <src> <volume>` per line; '#' comments."""
    flows = []
    seen = set()
    for number, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 3:
            raise RuleParseError("expected '<dest> <src> <volume>'", line_number=number, line=raw)
        try:
            dest = Prefix.parse(fields[0], width_d)
            src = Prefix.parse(fields[1], width_s)
        except PrefixParseError as e:
            raise RuleParseError(str(e), line_number=number, line=raw) from e
        try:
            flow = MacroFlow(dest, src, float(fields[2]))
        except (ValueError, UsageError):
            raise RuleParseError(f"invalid volume '{fields[2]}'", line_number=number, line=raw)
        if (dest, src) in seen:
            raise RuleParseError(f"duplicate flow ({dest}, {src})", line_number=number, line=raw)
        seen.add((dest, src))
        flows.append(flow)
    return flows


def load_flows(path: str | Path, width_d: int, width_s: int) -> list[MacroFlow]:
    with open(path, "r") as f:
        return parse_flows(f, width_d, width_s)


def format_flows(flows: Iterable[MacroFlow]) -> str:
    return "".join(f"{f.dest} {f.src} {f.volume}\n" for f in flows)


# ---- fuzzing


def random_ruleset(
    seed: int,
    width: int,
    rule_count: int,
    action_count: int = 4,
    default_rate: float = 0.5,
    dest_only: int | None = None,
) -> RuleSet:
    """
    Random rule set over shared destination and source pools, so sources
    nest and colored trees have depth. Some destinations carry only a
    default (`dest_only`, a quarter of the pool by default).
    """
    rng = random.Random(seed)
    pool = max(1, math.isqrt(rule_count * 2))
    dest_pool = random_prefixes(rng, width, min(pool, (1 << (width + 1)) - 1), 0, width)
    src_pool = random_prefixes(rng, width, min(pool, (1 << (width + 1)) - 2), 1, width)
    actions = action_names(action_count)

    pairs = [(d, s) for d in dest_pool for s in src_pool]
    chosen = rng.sample(pairs, min(rule_count, len(pairs)))
    rules = [Rule(d, s, rng.choice(actions)) for d, s in chosen]

    defaults: dict[Prefix, str | None] = {}
    for dest in dict.fromkeys(r.dest for r in rules):
        defaults[dest] = rng.choice(actions) if rng.random() < default_rate else None
    spare = [d for d in dest_pool if d not in defaults]
    extra = len(dest_pool) // 4 if dest_only is None else dest_only
    for dest in spare[:extra]:
        defaults[dest] = rng.choice(actions)
    return RuleSet(width, width, rules, defaults)


def random_trace(
    rs: RuleSet,
    length: int,
    seed: int,
    action_count: int = 4,
    default_ops: bool = True,
) -> list[TraceOp]:
    """A trace of `length` ops that is valid when replayed from `rs`, in order."""
    rng = random.Random(seed)
    actions = action_names(action_count)
    width_d, width_s = rs.width_d, rs.width_s
    known_dests = rs.destinations
    spare_dests = min(4, (1 << (width_d + 1)) - 1 - len(known_dests))
    dest_pool = known_dests + random_prefixes(rng, width_d, spare_dests, 0, width_d, known_dests)
    known_srcs = list(dict.fromkeys(r.src for r in rs.rules))
    spare_srcs = min(4, (1 << (width_s + 1)) - 2 - len(known_srcs))
    src_pool = known_srcs + random_prefixes(rng, width_s, spare_srcs, 1, width_s, known_srcs)
    wildcard = Prefix.wildcard(width_s)

    ops: list[TraceOp] = []
    shadow = rs
    while len(ops) < length:
        roll = rng.random()
        rules = shadow.rules
        with_default = [d for d, a in shadow.defaults.items() if a is not None]
        if default_ops and roll < 0.15:
            dest = rng.choice(dest_pool)
            if dest in with_default:
                kind = rng.choice([OpKind.UPDATE, OpKind.DELETE])
                op = TraceOp(kind, dest, wildcard, None if kind is OpKind.DELETE else rng.choice(actions))
            else:
                op = TraceOp(OpKind.INSERT, dest, wildcard, rng.choice(actions))
        elif roll < 0.45 and rules:
            rule = rng.choice(rules)
            op = TraceOp(OpKind.DELETE, rule.dest, rule.src)
        elif roll < 0.6 and rules:
            rule = rng.choice(rules)
            op = TraceOp(OpKind.UPDATE, rule.dest, rule.src, rng.choice(actions))
        else:
            dest, src = rng.choice(dest_pool), rng.choice(src_pool)
            if shadow.get(dest, src) is not None:
                continue
            op = TraceOp(OpKind.INSERT, dest, src, rng.choice(actions))
        shadow = apply_to_ruleset(shadow, op)
        ops.append(op)
    return ops


def default_update_trace(rs: RuleSet, count: int, seed: int, action_count: int = 4) -> list[TraceOp]:
    """`count` default next-hop updates on destinations that have a default, each changing the action."""
    rng = random.Random(seed)
    actions = action_names(action_count)
    current = {d: a for d, a in rs.defaults.items() if a is not None}
    if not current:
        raise UsageError("Rule set has no default next hops to update")
    if action_count < 2:
        raise UsageError("Need at least two actions to change a default")
    wildcard = Prefix.wildcard(rs.width_s)
    dests = sorted(current)
    ops = []
    for _ in range(count):
        dest = rng.choice(dests)
        choices = [a for a in actions if a != current[dest]]
        action = rng.choice(choices)
        current[dest] = action
        ops.append(TraceOp(OpKind.UPDATE, dest, wildcard, action))
    return ops
