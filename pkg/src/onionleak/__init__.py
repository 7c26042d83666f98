"""Simulated exit-node de-anonymization of BitTorrent-over-onion users."""

__version__ = "0.1.0"
