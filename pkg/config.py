"""Configuration loading, validation and the per-run settings model."""

import os
from typing import Any, Literal

import yaml
from pydantic import BaseModel, Field, field_validator

from cost_model import CycleCosts
from errors import UsageError
from fist_engine import DEFAULT_LAYOUT_PREALLOC, BuildOptions
from narrow_store import DEFAULT_FINGERPRINT, check_algorithm

DEFAULT_CONFIG_PATH = "config.yaml"
MAX_EXHAUSTIVE_WIDTH = 16


def config_path() -> str:
    return os.getenv("FIST_CONFIG_PATH", DEFAULT_CONFIG_PATH)


def load_config(path: str | None = None) -> dict[str, Any]:
    """Load configuration from YAML file."""
    with open(path or config_path(), "r") as f:
        return yaml.safe_load(f)


def _section(config: dict[str, Any], name: str) -> dict[str, Any]:
    section = config.get(name)
    if section is None:
        return {}
    if not isinstance(section, dict):
        raise ValueError(f"'{name}' must be a dictionary")
    return section


def validate_config(config: dict[str, Any]) -> None:
    """
    Validate configuration dictionary has required keys and valid values.

    Raises:
        ValueError: If configuration is invalid with descriptive message
    """
    if not config:
        raise ValueError("Configuration is empty or None")

    if "address_width" not in config:
        raise ValueError("Configuration missing required key: 'address_width'")
    width = config["address_width"]
    if not isinstance(width, int) or not 4 <= width <= 128:
        raise ValueError(f"'address_width' must be an integer between 4 and 128, got: {width!r}")

    tcam = _section(config, "tcam")
    sram = _section(config, "sram")
    for name, section in (("tcam", tcam), ("sram", sram)):
        cycle = section.get("cycle_ns")
        if cycle is not None and (not isinstance(cycle, (int, float)) or cycle <= 0):
            raise ValueError(f"'{name}.cycle_ns' must be a positive number, got: {cycle!r}")
    if "cycle_ns" in tcam and "cycle_ns" in sram and sram["cycle_ns"] >= tcam["cycle_ns"]:
        raise ValueError(
            f"'sram.cycle_ns' ({sram['cycle_ns']}) must be smaller than "
            f"'tcam.cycle_ns' ({tcam['cycle_ns']})"
        )
    prealloc = tcam.get("layout_prealloc")
    if prealloc is not None and (not isinstance(prealloc, int) or prealloc < 1):
        raise ValueError(f"'tcam.layout_prealloc' must be a positive integer, got: {prealloc!r}")

    forwarding = _section(config, "forwarding")
    for flag in ("isolation", "non_homogeneous", "acl_compat"):
        if flag in forwarding and not isinstance(forwarding[flag], bool):
            raise ValueError(f"'forwarding.{flag}' must be true or false")

    compression = _section(config, "compression")
    for key in ("dedup_width", "default_dedup_width"):
        value = compression.get(key)
        if value is not None and (not isinstance(value, int) or value < 1):
            raise ValueError(f"'compression.{key}' must be a positive integer or null, got: {value!r}")
    if compression.get("fingerprint") is not None:
        try:
            check_algorithm(compression["fingerprint"])
        except UsageError as e:
            raise ValueError(f"'compression.fingerprint': {e}")

    verification = _section(config, "verification")
    limit = verification.get("exhaustive_max_width")
    if limit is not None and (not isinstance(limit, int) or not 1 <= limit <= MAX_EXHAUSTIVE_WIDTH):
        raise ValueError(
            f"'verification.exhaustive_max_width' must be between 1 and {MAX_EXHAUSTIVE_WIDTH}, got: {limit!r}"
        )

    fmt = _section(config, "report").get("format")
    if fmt is not None and fmt not in ("text", "kv"):
        raise ValueError(f"Invalid report format: '{fmt}'. Expected 'text' or 'kv'")


class RunConfig(BaseModel):
    """Settings for one command run: YAML defaults overlaid with command-line flags."""

    width: int = Field(default=32, ge=4, le=128)
    isolation: bool = True
    non_homogeneous: bool = True
    dedup_width: int | None = Field(default=None, ge=1)
    default_dedup_width: int = Field(default=8, ge=1)
    acl_compat: bool = False
    double_tcam_request: bool = False
    layout_prealloc: int = Field(default=DEFAULT_LAYOUT_PREALLOC, ge=1)
    fingerprint: str = DEFAULT_FINGERPRINT
    costs: CycleCosts = Field(default_factory=CycleCosts)
    sram_ops_per_sec: float = Field(default=2e8, gt=0)
    seed: int = 0
    samples: int = Field(default=100_000, ge=1)
    exhaustive_max_width: int = Field(default=10, ge=1, le=MAX_EXHAUSTIVE_WIDTH)
    oracle_cache_size: int = Field(default=1 << 17, ge=1)
    report_format: Literal["text", "kv"] = "text"
    series_window: int = Field(default=100, ge=1)
    saturation_baseline: bool = False

    @field_validator("fingerprint")
    @classmethod
    def validate_fingerprint(cls, v: str) -> str:
        try:
            check_algorithm(v)
        except UsageError as e:
            raise ValueError(str(e))
        return v

    @classmethod
    def from_config(cls, config: dict[str, Any] | None = None, **overrides: Any) -> "RunConfig":
        """Flatten a validated YAML config, then apply every override that is not None."""
        values: dict[str, Any] = {}
        if config:
            tcam = _section(config, "tcam")
            sram = _section(config, "sram")
            forwarding = _section(config, "forwarding")
            compression = _section(config, "compression")
            verification = _section(config, "verification")
            report = _section(config, "report")
            values = {
                "width": config.get("address_width"),
                "isolation": forwarding.get("isolation"),
                "non_homogeneous": forwarding.get("non_homogeneous"),
                "acl_compat": forwarding.get("acl_compat"),
                "dedup_width": compression.get("dedup_width"),
                "default_dedup_width": compression.get("default_dedup_width"),
                "fingerprint": compression.get("fingerprint"),
                "double_tcam_request": tcam.get("double_request"),
                "layout_prealloc": tcam.get("layout_prealloc"),
                "sram_ops_per_sec": sram.get("ops_per_sec"),
                "seed": verification.get("seed"),
                "samples": verification.get("samples"),
                "exhaustive_max_width": verification.get("exhaustive_max_width"),
                "oracle_cache_size": verification.get("oracle_cache_size"),
                "report_format": report.get("format"),
                "series_window": report.get("series_window"),
            }
            costs = {
                "tcam_cycle_ns": tcam.get("cycle_ns"),
                "sram_cycle_ns": sram.get("cycle_ns"),
                "cycles_per_mem_op": sram.get("cycles_per_mem_op"),
            }
            values["costs"] = CycleCosts(**{k: v for k, v in costs.items() if v is not None})
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**{k: v for k, v in values.items() if v is not None})

    @property
    def dedup(self) -> bool:
        return self.dedup_width is not None

    def build_options(self) -> BuildOptions:
        return BuildOptions(
            isolation=self.isolation,
            non_homogeneous=self.non_homogeneous,
            dedup_width=self.dedup_width,
            double_tcam_request=self.double_tcam_request,
            layout_prealloc=self.layout_prealloc,
            fingerprint=self.fingerprint,
        )
