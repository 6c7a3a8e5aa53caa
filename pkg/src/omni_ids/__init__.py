"""Packet-level intrusion detection for a simulated Modbus/TCP water-tank plant."""

__version__ = "0.1.0"
