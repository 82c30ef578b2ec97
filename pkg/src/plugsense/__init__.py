"""Smart-plug voltage monitoring for low-voltage feeders.

Simulates plug and reference-meter readings, ingests plug telemetry into an
append-only time-series store, calibrates the readings, and fits feeder loads
that explain an observed plug voltage.
"""

__version__ = "0.1.0"
