"""Purely decentralized proximity tracing: protocol, simulator, adversary checks."""

__version__ = "0.1.0"
