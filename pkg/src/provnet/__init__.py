"""Video platform-provenance toolkit: compression-trace CNNs at desk scale."""

__version__ = "0.1.0"
