"""Compressed-sensing anomaly detection, attack-signature matching and path assurance scoring."""

__version__ = "0.1.0"
