"""Simulator of a grid-tied solar array built as a cascaded H-bridge
multilevel inverter with distributed, fault-tolerant control."""

__version__ = "0.1.0"
