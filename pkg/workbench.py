"""
Command implementations: build, verify, replay, compress, generate,
latency and budget, plus the lookup sweep they share.

Every command returns a result object with `as_dict()` and `render(fmt)`;
main.py turns them into stdout and exit codes.
"""

import itertools
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator

import structlog

from acl_oracle import AclCost, Match, OracleCache, RuleSet, acl_cost_model, load_rules
from compression import (
    CompressionReport,
    apply_fixed_block,
    comp_tcam,
    compression_report,
    dedup_rows_cols,
)
from config import RunConfig
from cost_model import (
    AccessLedger,
    BudgetReport,
    LatencyEstimate,
    LedgerCounts,
    latency_estimate,
    sram_write_budget_check,
)
from errors import EquivalenceError, UsageError
from fist_engine import FistTable, build, expected_tcam_entries
from prefix_core import Address
from update_engine import TraceOp, UpdateOutcome, format_trace, load_trace, replay
from workload_gen import (
    BalanceResult,
    MacroFlow,
    Profile,
    ScenarioSpec,
    format_flows,
    gen_flows,
    gen_load_balance,
    gen_policy,
    random_ruleset,
)

logger = structlog.get_logger(__name__)

MAX_WITNESSES = 20


def render_values(section: str, values: dict[str, object], fmt: str = "text") -> str:
    """Aligned `key  value` lines, or `section.key=value` lines for fmt='kv'."""
    if fmt == "kv":
        return "\n".join(f"{section}.{k}={_fmt(v)}" for k, v in values.items())
    if not values:
        return ""
    width = max(len(k) for k in values)
    return "\n".join(f"{k.ljust(width)}  {_fmt(v)}" for k, v in values.items())


def _fmt(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "-"
    return str(value)


# ---- sweeps


@dataclass(frozen=True)
class Witness:
    dest: Address
    src: Address
    expected: str | None
    actual: str | None

    def __str__(self) -> str:
        return f"d={self.dest} s={self.src} expected={_fmt(self.expected)} got={_fmt(self.actual)}"


@dataclass
class SweepResult:
    mode: str
    pairs: int = 0
    mismatches: int = 0
    witnesses: list[Witness] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.mismatches == 0


def sweep_pairs(
    width_d: int,
    width_s: int,
    exhaustive_max_width: int,
    samples: int,
    seed: int,
) -> tuple[str, Iterator[tuple[Address, Address]]]:
    """Every (d, s) pair when both widths are small enough, else `samples` seeded random pairs."""
    if max(width_d, width_s) <= exhaustive_max_width:
        pairs = itertools.product(Address.all_addresses(width_d), Address.all_addresses(width_s))
        return "exhaustive", pairs
    rng = random.Random(seed)
    pairs = (
        (Address(width_d, rng.getrandbits(width_d)), Address(width_s, rng.getrandbits(width_s)))
        for _ in range(samples)
    )
    return "sampled", pairs


def sweep(
    lookup: Callable[[Address, Address], Match],
    oracle: Callable[[Address, Address], Match],
    pairs: Iterable[tuple[Address, Address]],
    mode: str,
    max_witnesses: int = MAX_WITNESSES,
) -> SweepResult:
    """Compare two lookup paths by action over `pairs`."""
    result = SweepResult(mode)
    for d, s in pairs:
        result.pairs += 1
        expected = oracle(d, s).action
        actual = lookup(d, s).action
        if expected != actual:
            result.mismatches += 1
            if len(result.witnesses) < max_witnesses:
                result.witnesses.append(Witness(d, s, expected, actual))
    return result


def verify_table(
    t: FistTable,
    rs: RuleSet,
    cfg: RunConfig,
    cache: OracleCache | None = None,
) -> SweepResult:
    """Sweep `t` against the rule-list oracle for `rs`."""
    cache = cache or OracleCache(rs, cfg.oracle_cache_size)
    mode, pairs = sweep_pairs(t.width_d, t.width_s, cfg.exhaustive_max_width, cfg.samples, cfg.seed)
    return sweep(t.lookup, cache.lookup, pairs, mode)


# ---- build


@dataclass
class BuildResult:
    table: FistTable
    ruleset: RuleSet
    acl: AclCost
    expected_entries: int

    def as_dict(self) -> dict[str, object]:
        t = self.table
        out: dict[str, object] = {
            "fist.dest_entries": len(t.dest_trie),
            "fist.src_entries": len(t.src_trie),
            "fist.tcam_entries": t.tcam_entry_count(),
            "fist.expected_tcam_entries": self.expected_entries,
            "fist.tcam_bits": t.tcam_bits(),
            "fist.sram_bits": t.sram_bits(),
        }
        for region, bits in t.sram_breakdown().items():
            out[f"fist.sram_bits.{region}"] = bits
        out["fist.rows"] = t.td.row_count
        out["fist.cols"] = t.td.col_count
        out["acl.tcam_entries"] = self.acl.tcam_entries
        out["acl.tcam_bits"] = self.acl.tcam_bits
        out["acl.sram_bits"] = self.acl.sram_bits
        return out

    def render(self, fmt: str = "text") -> str:
        return self.table.dump() + render_values("build", self.as_dict(), fmt) + "\n"


def acl_baseline(rs: RuleSet, cfg: RunConfig, entry_width: int) -> AclCost:
    """The ACL size the table is compared against; acl_compat counts defaults as wildcard-source entries."""
    return acl_cost_model(
        rs,
        entry_width,
        include_defaults=cfg.acl_compat,
        non_homogeneous=cfg.acl_compat and cfg.non_homogeneous,
    )


def build_from_ruleset(rs: RuleSet, cfg: RunConfig, ledger: AccessLedger | None = None) -> BuildResult:
    options = cfg.build_options()
    t = build(rs, options, ledger)
    return BuildResult(
        table=t,
        ruleset=rs,
        acl=acl_baseline(rs, cfg, t.entry_width),
        expected_entries=expected_tcam_entries(rs, options),
    )


def cmd_build(rules_path: str | Path, cfg: RunConfig) -> BuildResult:
    rs = load_rules(rules_path, cfg.width, cfg.width)
    result = build_from_ruleset(rs, cfg)
    logger.info("build_complete", rules=len(rs), tcam_entries=result.table.tcam_entry_count())
    return result


# ---- verify


@dataclass
class VerifyResult:
    sweeps: dict[str, SweepResult]
    cache_status: dict[str, int] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.sweeps.values())

    def as_dict(self) -> dict[str, object]:
        out: dict[str, object] = {"passed": self.passed}
        for name, s in self.sweeps.items():
            out[f"{name}.mode"] = s.mode
            out[f"{name}.pairs"] = s.pairs
            out[f"{name}.mismatches"] = s.mismatches
        for k, v in self.cache_status.items():
            out[f"oracle_cache.{k}"] = v
        return out

    def render(self, fmt: str = "text") -> str:
        lines = [render_values("verify", self.as_dict(), fmt)]
        for name, s in self.sweeps.items():
            for w in s.witnesses:
                lines.append(f"verify.witness.{name}={w}" if fmt == "kv" else f"mismatch [{name}] {w}")
        return "\n".join(lines) + "\n"


def verify_ruleset(rs: RuleSet, cfg: RunConfig, name: str = "rules") -> tuple[str, SweepResult, OracleCache]:
    t = build(rs, cfg.build_options())
    cache = OracleCache(rs, cfg.oracle_cache_size)
    return name, verify_table(t, rs, cfg, cache), cache


def cmd_verify(
    rules_path: str | Path | None,
    cfg: RunConfig,
    fuzz_seeds: int = 0,
    fuzz_rules: int = 200,
) -> VerifyResult:
    """
    Sweep the built table against the oracle. With `fuzz_seeds`, also
    sweep that many random rule sets (seeds cfg.seed, cfg.seed + 1, ...).
    """
    if rules_path is None and not fuzz_seeds:
        raise UsageError("verify needs a rules file or --fuzz")
    sweeps: dict[str, SweepResult] = {}
    status: dict[str, int] = {}
    if rules_path is not None:
        rs = load_rules(rules_path, cfg.width, cfg.width)
        name, result, cache = verify_ruleset(rs, cfg)
        sweeps[name] = result
        status = cache.get_cache_status()
    for seed in range(cfg.seed, cfg.seed + fuzz_seeds):
        rs = random_ruleset(seed, cfg.width, fuzz_rules)
        name, result, _ = verify_ruleset(rs, cfg, f"fuzz{seed}")
        sweeps[name] = result
    verdict = VerifyResult(sweeps, status)
    logger.info(
        "verify_complete",
        passed=verdict.passed,
        sweeps=len(sweeps),
        mismatches=sum(s.mismatches for s in sweeps.values()),
    )
    return verdict


# ---- replay


@dataclass
class ReplayResult:
    outcomes: list[UpdateOutcome]
    ledger: AccessLedger
    window: int
    wall_seconds: float
    baseline: AccessLedger | None = None

    def series(self) -> list[LedgerCounts]:
        return self.ledger.series(self.window)

    def baseline_series(self) -> list[LedgerCounts] | None:
        return None if self.baseline is None else self.baseline.series(self.window)

    def as_dict(self) -> dict[str, object]:
        totals = self.ledger.totals
        out: dict[str, object] = {
            "ops": len(self.outcomes),
            "wall_seconds": round(self.wall_seconds, 6),
            "tcam_writes": totals.tcam_writes,
            "tcam_moves": totals.tcam_moves,
            "sram_writes": totals.sram_write_total,
            "td_writes": totals.td_writes,
        }
        for i, window in enumerate(self.series()):
            out[f"window.{i}.tcam_accesses"] = window.tcam_reads + window.tcam_writes
            out[f"window.{i}.sram_writes"] = window.sram_write_total
        baseline = self.baseline_series()
        if baseline is not None:
            out["baseline.sram_writes"] = self.baseline.totals.sram_write_total
            out["baseline.td_writes"] = self.baseline.totals.td_writes
            for i, window in enumerate(baseline):
                out[f"baseline.window.{i}.sram_writes"] = window.sram_write_total
        return out

    def render(self, fmt: str = "text") -> str:
        return render_values("replay", self.as_dict(), fmt) + "\n"


def replay_ruleset(rs: RuleSet, ops: list[TraceOp], cfg: RunConfig) -> ReplayResult:
    """Replay `ops` on a fresh build of `rs`; with saturation_baseline, again on a second build."""
    t = build(rs, cfg.build_options())
    ledger = AccessLedger()
    started = time.perf_counter()
    outcomes = replay(t, ops, ledger)
    wall = time.perf_counter() - started

    baseline = None
    if cfg.saturation_baseline:
        baseline = AccessLedger()
        replay(build(rs, cfg.build_options()), ops, baseline, saturation_baseline=True)
    return ReplayResult(outcomes, ledger, cfg.series_window, wall, baseline)


def cmd_replay(rules_path: str | Path | None, trace_path: str | Path, cfg: RunConfig) -> ReplayResult:
    rs = load_rules(rules_path, cfg.width, cfg.width) if rules_path else RuleSet(cfg.width, cfg.width)
    ops = load_trace(trace_path, cfg.width, cfg.width)
    result = replay_ruleset(rs, ops, cfg)
    logger.info("replay_complete", ops=len(ops), sram_writes=result.ledger.totals.sram_write_total)
    return result


# ---- compress


def compress_ruleset(rs: RuleSet, cfg: RunConfig) -> tuple[FistTable, CompressionReport]:
    """
    Build, then comp_tcam, dedup_rows_cols and (with dedup) fixed blocks.
    Every stage is swept against the oracle; any mismatch raises EquivalenceError.
    """
    base_cfg = cfg.model_copy(update={"dedup_width": None})
    t = build(rs, base_cfg.build_options())
    cache = OracleCache(rs, cfg.oracle_cache_size)

    compressed = comp_tcam(t)
    stages = [("build", t), ("comp_tcam", compressed), ("dedup_rows_cols", dedup_rows_cols(compressed))]
    if cfg.dedup:
        # separate copy; the dedup_rows_cols stage keeps no narrow store
        stages.append(("fixed_block", apply_fixed_block(dedup_rows_cols(compressed), cfg.dedup_width)))

    pairs_checked = 0
    for name, stage in stages:
        result = verify_table(stage, rs, cfg, cache)
        pairs_checked += result.pairs
        if not result.passed:
            logger.error("compression_not_equivalent", stage=name, mismatches=result.mismatches)
            raise EquivalenceError(
                f"Stage {name} changed {result.mismatches} lookup results",
                witnesses=result.witnesses,
            )

    final = stages[-1][1]
    report = compression_report(t, final)
    report.extra = {"verified_pairs": pairs_checked, "stages": len(stages) - 1}
    return final, report


def cmd_compress(rules_path: str | Path, cfg: RunConfig) -> CompressionReport:
    rs = load_rules(rules_path, cfg.width, cfg.width)
    _, report = compress_ruleset(rs, cfg)
    logger.info(
        "compress_complete",
        tcam_bits_before=report.tcam_bits_before,
        tcam_bits_after=report.tcam_bits_after,
    )
    return report


# ---- generate


@dataclass
class GenerateResult:
    spec: ScenarioSpec
    ruleset: RuleSet
    trace: list[TraceOp] = field(default_factory=list)
    flows: list[MacroFlow] = field(default_factory=list)
    balance: BalanceResult | None = None

    def as_dict(self) -> dict[str, object]:
        out: dict[str, object] = {
            "profile": self.spec.profile.value,
            "seed": self.spec.seed,
            "rules": len(self.ruleset),
            "destinations": len(self.ruleset.destinations),
            "trace_ops": len(self.trace),
        }
        if self.balance is not None:
            out.update({f"balance.{k}": v for k, v in self.balance.as_dict().items()})
        return out

    def render(self, fmt: str = "text") -> str:
        return render_values("generate", self.as_dict(), fmt) + "\n"


def cmd_generate(spec: ScenarioSpec, sort_descending: bool = False) -> GenerateResult:
    if spec.profile is Profile.DENSE_POLICY:
        rs, trace = gen_policy(spec)
        return GenerateResult(spec, rs, trace=trace)
    flows = gen_flows(spec)
    balance = gen_load_balance(flows, [1.0] * spec.exits, sort_descending)
    return GenerateResult(spec, balance.ruleset, flows=flows, balance=balance)


def write_generated(result: GenerateResult, out_dir: str | Path) -> list[Path]:
    """Write rules, plus the trace or flow file, into `out_dir`."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "rules.txt"]
    written[0].write_text(result.ruleset.dump())
    if result.trace:
        path = out / "trace.txt"
        path.write_text(format_trace(result.trace))
        written.append(path)
    if result.flows:
        path = out / "flows.txt"
        path.write_text(format_flows(result.flows))
        written.append(path)
    return written


# ---- latency and budget


@dataclass
class LatencyResult:
    fist: LatencyEstimate
    acl: LatencyEstimate

    def as_dict(self) -> dict[str, object]:
        out: dict[str, object] = {}
        for name, est in (("fist", self.fist), ("acl", self.acl)):
            out[f"{name}.tcam_accesses"] = est.tcam_accesses
            out[f"{name}.sram_accesses"] = est.sram_accesses
            out[f"{name}.ns"] = round(est.ns, 3)
            out[f"{name}.packets_per_second"] = round(est.packets_per_second)
        return out

    def render(self, fmt: str = "text") -> str:
        return render_values("latency", self.as_dict(), fmt) + "\n"


def cmd_latency(cfg: RunConfig) -> LatencyResult:
    return LatencyResult(
        fist=latency_estimate(cfg.dedup, False, cfg.double_tcam_request, cfg.costs),
        acl=latency_estimate(False, True, False, cfg.costs),
    )


@dataclass
class BudgetResult:
    report: BudgetReport

    def as_dict(self) -> dict[str, object]:
        return self.report.as_dict()

    def render(self, fmt: str = "text") -> str:
        return render_values("budget", self.as_dict(), fmt) + "\n"


def cmd_budget(
    cfg: RunConfig,
    update_rate: float,
    source_count: int,
    replayed: ReplayResult | None = None,
) -> BudgetResult:
    """Worst-case check, plus the measured rate when a replay is supplied."""
    measured = None
    if replayed is not None and replayed.outcomes:
        measured = replayed.ledger.totals.td_writes / len(replayed.outcomes)
    return BudgetResult(sram_write_budget_check(update_rate, source_count, cfg.sram_ops_per_sec, measured))
