"""Blockchained federated learning for IIoT threat defense, as a deterministic simulator."""

__version__ = "0.1.0"
