import os
import sys

from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

# Sandboxed CI boxes have jittery clocks; property counts stay meaningful,
# per-example deadlines do not.  Fixtures fed into properties here are all
# immutable lookup tables, so sharing one instance across examples is fine.
settings.register_profile(
    "suite",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("suite")
