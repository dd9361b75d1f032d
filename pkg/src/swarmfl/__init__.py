"""Deterministic simulator of a robot swarm doing blockchain-secured federated learning."""

__version__ = "0.1.0"
