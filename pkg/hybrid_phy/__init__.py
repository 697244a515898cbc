"""Bit-accurate hybrid hardware/software IEEE 802.15.4 transmit PHY simulator."""

__version__ = "0.1.0"
