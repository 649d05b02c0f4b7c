"""Byte-moving helpers around the proof toolkit: vector export and a stub
generation service. Deliberately free of tree or metric logic."""

__version__ = "0.1.0"
