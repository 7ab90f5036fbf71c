"""Decentralized adaptive re-weighted power-system state estimation via gossip."""

__version__ = "0.1.0"
