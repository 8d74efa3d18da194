"""Event-driven learning of conditional firing rates in spiking networks."""

__version__ = "0.1.0"
