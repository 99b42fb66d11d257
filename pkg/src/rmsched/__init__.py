"""Reconfigurable job-shop scheduling toolkit.

Subsystems: an event-driven shop simulator (``sim``), a small numpy
neural-network core (``nn``), prioritized replay (``replay``), the value-based
scheduling agent (``agent``), the bidding/negotiation layer (``negotiation``),
dispatch-rule baselines (``baselines``), the training loop (``trainer``), and
the benchmark command line (``cli``).
"""

__version__ = "0.1.0"

from .config import ScenarioConfig, ConfigError  # noqa: F401
