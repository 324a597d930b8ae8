"""Synthesis and verification of discrete-time control barrier function triples."""

__version__ = "0.1.0"
