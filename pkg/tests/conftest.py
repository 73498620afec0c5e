"""Shared fixtures: the four-bit worked example and quiet logging."""

import logging
import sys
from pathlib import Path

import pytest
import structlog

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from acl_oracle import RuleSet, parse_rules

structlog.configure(
    wrapper_class=structlog.make_filtering_bound_logger(logging.WARNING),
    logger_factory=structlog.ReturnLoggerFactory(),
)

WORKED_EXAMPLE_RULES = """\
# dest  src   action
111*  111*  1.0.0.0
111*  100*  1.0.0.1
100*  111*  1.0.0.2
101*  11**  1.0.0.2
10**  11**  1.0.0.3
default 111* 1.0.0.0
default 100* 1.0.0.1
default 101* 1.0.0.1
default 10** 1.0.0.3
default 11** 1.0.0.0
"""


@pytest.fixture
def worked_rules_text() -> str:
    """Rule file text for the four-bit worked example."""
    return WORKED_EXAMPLE_RULES


@pytest.fixture
def worked_rules() -> RuleSet:
    """Parsed four-bit worked example."""
    return parse_rules(WORKED_EXAMPLE_RULES.splitlines(), 4, 4)


@pytest.fixture
def worked_rules_file(tmp_path) -> Path:
    """The worked example written to a rules file."""
    path = tmp_path / "rules.txt"
    path.write_text(WORKED_EXAMPLE_RULES)
    return path
