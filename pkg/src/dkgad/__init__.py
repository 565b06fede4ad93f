"""Anomaly detection on dynamic knowledge graphs of microservice telemetry."""

from __future__ import annotations

__version__ = "0.1.0"
