"""Resilience analysis and protocol simulation for systems mixing message passing with shared memory."""

__version__ = "0.1.0"
