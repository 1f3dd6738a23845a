"""Transfer deep-RL energy management for a series-parallel hybrid electric vehicle."""

__version__ = "0.1.0"
