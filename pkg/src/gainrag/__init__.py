"""Scene-aware impedance gain retrieval for a dual-arm robot.

A vision-language descriptor of the scene is normalized, embedded and matched
against a small database of validated gain profiles. The matched payload
(per-joint Kp/Kd and a nominal speed) is streamed to a joint-space impedance
controller, which falls back to a soft, slow profile whenever the match is
ambiguous or the stream goes stale.
"""

from .impedance import ImpedancePayload, fallback_payload, impedance_torque
from .scenario_db import load_database, load_default_database

__all__ = ["ImpedancePayload", "fallback_payload", "impedance_torque", "load_database", "load_default_database"]
__version__ = "0.1.0"
