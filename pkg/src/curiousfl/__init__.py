"""Simulate a federated-learning client that poisons its uploads while
reconstructing peers' training images, against robust aggregation and
client-side local differential privacy."""

__version__ = "0.1.0"
