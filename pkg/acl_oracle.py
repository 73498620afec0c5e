"""Reference two-dimensional matching over a flat rule list, and the ACL size model."""

from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable

import structlog
from cachetools import LRUCache

from cost_model import AccessLedger, SramRegion
from errors import PrefixParseError, RuleConflictError, RuleNotFoundError, RuleParseError
from prefix_core import Address, Prefix
from td_table import index_bits

logger = structlog.get_logger(__name__)

DEFAULT_KEYWORD = "default"


@dataclass(frozen=True)
class Rule:
    """A (destination prefix, source prefix, action) triple."""

    dest: Prefix
    src: Prefix
    action: str


class MatchKind(str, Enum):
    RULE = "rule"
    DEFAULT = "default"
    MISS = "miss"


@dataclass(frozen=True)
class Match:
    """
    Lookup outcome.

    Callers comparing two lookup paths should compare `action` only: the
    same answer can legitimately arrive through a rule on one path and a
    default on the other.
    """

    action: str | None
    via: MatchKind

    @property
    def is_miss(self) -> bool:
        return self.action is None


MISS = Match(None, MatchKind.MISS)


class RuleSet:
    """
    Immutable rule collection plus the per-destination default map.

    Rules whose source is the full wildcard are folded into the default map.
    Every destination that has a rule also has a default entry, possibly None.
    """

    def __init__(
        self,
        width_d: int,
        width_s: int,
        rules: Iterable[Rule] = (),
        defaults: dict[Prefix, str | None] | None = None,
    ):
        self.width_d = width_d
        self.width_s = width_s
        self._rules: list[Rule] = []
        self._by_dest: dict[Prefix, dict[Prefix, Rule]] = {}
        self._defaults: dict[Prefix, str | None] = {}

        for dest, action in (defaults or {}).items():
            self._check_widths(dest, None)
            self._defaults[dest] = action

        explicit_defaults = {d for d, a in self._defaults.items() if a is not None}
        folded: set[Prefix] = set()
        for rule in rules:
            self._check_widths(rule.dest, rule.src)
            if rule.src.is_wildcard:
                if rule.dest in explicit_defaults or rule.dest in folded:
                    raise RuleConflictError(
                        f"Duplicate default for destination {rule.dest}",
                        dest=rule.dest,
                        src=rule.src,
                    )
                self._defaults[rule.dest] = rule.action
                folded.add(rule.dest)
                continue
            per_dest = self._by_dest.setdefault(rule.dest, {})
            if rule.src in per_dest:
                raise RuleConflictError(
                    f"Duplicate rule for ({rule.dest}, {rule.src})",
                    dest=rule.dest,
                    src=rule.src,
                )
            per_dest[rule.src] = rule
            self._rules.append(rule)
            self._defaults.setdefault(rule.dest, None)

    def _check_widths(self, dest: Prefix, src: Prefix | None) -> None:
        if dest.width != self.width_d or (src is not None and src.width != self.width_s):
            raise RuleConflictError(
                f"Prefix width does not match rule set widths ({self.width_d}, {self.width_s})",
                dest=dest,
                src=src,
            )

    @property
    def rules(self) -> list[Rule]:
        """Explicit (non-wildcard-source) rules in insertion order."""
        return list(self._rules)

    @property
    def defaults(self) -> dict[Prefix, str | None]:
        return dict(self._defaults)

    @property
    def destinations(self) -> list[Prefix]:
        return list(self._defaults)

    def __len__(self) -> int:
        return len(self._rules)

    def __iter__(self):
        return iter(self._rules)

    def get(self, dest: Prefix, src: Prefix) -> Rule | None:
        return self._by_dest.get(dest, {}).get(src)

    def rules_for(self, dest: Prefix) -> dict[Prefix, Rule]:
        return dict(self._by_dest.get(dest, {}))

    def default_of(self, dest: Prefix) -> str | None:
        return self._defaults.get(dest)

    def actions(self) -> list[str]:
        """Distinct actions, first-appearance order (rules, then defaults)."""
        seen: dict[str, None] = {}
        for rule in self._rules:
            seen.setdefault(rule.action, None)
        for action in self._defaults.values():
            if action is not None:
                seen.setdefault(action, None)
        return list(seen)

    def _copy_with(self, rules: list[Rule], defaults: dict[Prefix, str | None]) -> "RuleSet":
        return RuleSet(self.width_d, self.width_s, rules, defaults)

    def with_rule(self, rule: Rule) -> "RuleSet":
        """Insert or replace a rule; a wildcard source sets the default."""
        if rule.src.is_wildcard:
            return self.with_default(rule.dest, rule.action)
        rules = [r for r in self._rules if (r.dest, r.src) != (rule.dest, rule.src)]
        rules.append(rule)
        return self._copy_with(rules, self.defaults)

    def without_rule(self, dest: Prefix, src: Prefix) -> "RuleSet":
        """Remove a rule. A destination left with no rule and no default disappears."""
        if src.is_wildcard:
            if self._defaults.get(dest) is None:
                raise RuleNotFoundError(f"No default for {dest}", dest=dest, src=src)
            return self.with_default(dest, None)
        if self.get(dest, src) is None:
            raise RuleNotFoundError(f"No rule for ({dest}, {src})", dest=dest, src=src)
        rules = [r for r in self._rules if (r.dest, r.src) != (dest, src)]
        defaults = self.defaults
        if not any(r.dest == dest for r in rules) and defaults.get(dest) is None:
            defaults.pop(dest, None)
        return self._copy_with(rules, defaults)

    def with_default(self, dest: Prefix, action: str | None) -> "RuleSet":
        defaults = self.defaults
        defaults[dest] = action
        if action is None and dest not in self._by_dest:
            defaults.pop(dest)
        return self._copy_with(list(self._rules), defaults)

    def as_wildcard_rules(self) -> list[Rule]:
        """Defaults expressed as wildcard-source rules."""
        wildcard = Prefix.wildcard(self.width_s)
        return [Rule(d, wildcard, a) for d, a in self._defaults.items() if a is not None]

    def dump(self) -> str:
        lines = [f"{r.dest} {r.src} {r.action}" for r in self._rules]
        lines += [f"{DEFAULT_KEYWORD} {d} {a}" for d, a in self._defaults.items() if a is not None]
        return "\n".join(lines) + ("\n" if lines else "")


def parse_rules(lines: Iterable[str], width_d: int, width_s: int) -> RuleSet:
    """
    Parse rule lines.

    `<dest> <src> <action>` declares a rule and `default <dest> <action>`
    a default next hop; '#' starts a comment.
    """
    rules: list[Rule] = []
    defaults: dict[Prefix, str | None] = {}
    for number, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        try:
            if fields[0] == DEFAULT_KEYWORD:
                if len(fields) != 3:
                    raise RuleParseError(
                        "expected 'default <dest> <action>'", line_number=number, line=raw
                    )
                dest = Prefix.parse(fields[1], width_d)
                if defaults.get(dest) is not None:
                    raise RuleParseError(
                        f"duplicate default for {dest}", line_number=number, line=raw
                    )
                defaults[dest] = fields[2]
                continue
            if len(fields) != 3:
                raise RuleParseError(
                    "expected '<dest> <src> <action>'", line_number=number, line=raw
                )
            rules.append(
                Rule(Prefix.parse(fields[0], width_d), Prefix.parse(fields[1], width_s), fields[2])
            )
        except PrefixParseError as e:
            raise RuleParseError(str(e), line_number=number, line=raw) from e

    logger.debug("rules_parsed", rules=len(rules), defaults=len(defaults))
    return RuleSet(width_d, width_s, rules, defaults)


def load_rules(path: str | Path, width_d: int, width_s: int) -> RuleSet:
    with open(path, "r") as f:
        return parse_rules(f, width_d, width_s)


def oracle_lookup(rs: RuleSet, d: Address, s: Address) -> Match:
    """Definition-level answer by linear scan: LMF on destination, then on source."""
    best_dest: Prefix | None = None
    for dest in rs._defaults:
        if dest.matches(d) and (best_dest is None or dest.length > best_dest.length):
            best_dest = dest
    if best_dest is None:
        return MISS

    best_rule: Rule | None = None
    for src, rule in rs._by_dest.get(best_dest, {}).items():
        if src.matches(s) and (best_rule is None or src.length > best_rule.src.length):
            best_rule = rule
    if best_rule is not None:
        return Match(best_rule.action, MatchKind.RULE)

    default = rs._defaults[best_dest]
    if default is None:
        return MISS
    return Match(default, MatchKind.DEFAULT)


def acl_lookup(rs: RuleSet, d: Address, s: Address, ledger: AccessLedger) -> Match:
    """ACL-style lookup: one double-width TCAM match plus one SRAM action read."""
    ledger.charge_tcam_read()
    ledger.charge_sram_read(SramRegion.MAPPING)
    return oracle_lookup(rs, d, s)


class OracleCache:
    """Memoizes oracle answers for sweeps that revisit the same (d, s) pairs."""

    def __init__(self, rs: RuleSet, maxsize: int = 1 << 17):
        self.rs = rs
        self._cache: LRUCache = LRUCache(maxsize=maxsize)
        self.hits = 0
        self.misses = 0

    def lookup(self, d: Address, s: Address) -> Match:
        key = (d.bits, s.bits)
        cached = self._cache.get(key)
        if cached is not None:
            self.hits += 1
            return cached
        self.misses += 1
        result = oracle_lookup(self.rs, d, s)
        self._cache[key] = result
        return result

    def get_cache_status(self) -> dict[str, int]:
        return {
            "size": len(self._cache),
            "maxsize": int(self._cache.maxsize),
            "hits": self.hits,
            "misses": self.misses,
        }


@dataclass
class AclCost:
    tcam_entries: int
    tcam_bits: int
    sram_bits: int


def acl_cost_model(
    rs: RuleSet,
    entry_width: int,
    include_defaults: bool = False,
    non_homogeneous: bool = False,
) -> AclCost:
    """
    Size of the flat (destination, source) TCAM table.

    Every entry is double width. With `include_defaults`, each default is one
    more wildcard-source entry; `non_homogeneous` stores defaults of
    destinations without rules in a single-width partition instead.
    """
    double = len(rs.rules)
    single = 0
    if include_defaults:
        for dest, action in rs.defaults.items():
            if action is None:
                continue
            if non_homogeneous and not rs.rules_for(dest):
                single += 1
            else:
                double += 1
    entries = double + single
    bits = index_bits(len(rs.actions()))
    return AclCost(
        tcam_entries=entries,
        tcam_bits=double * 2 * entry_width + single * entry_width,
        sram_bits=entries * bits,
    )
