"""slopewatch: a landslide early-warning telemetry stack.

Scenario-driven sensor nodes stream readings over a lossy GPRS-class link
to a base station that calibrates, stores, analyzes and raises four-level
warnings. See README.md for the wire contract and CLI usage.
"""

__version__ = "0.1.0"
