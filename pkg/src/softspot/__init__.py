"""Detect facial expression intervals in long frame sequences from TV-L1 motion features and a small regression network."""

__version__ = "0.1.0"
