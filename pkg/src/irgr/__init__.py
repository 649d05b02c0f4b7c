"""Iterative premise retrieval and step-by-step generation of entailment
trees, with alignment-based evaluation."""

__version__ = "0.1.0"
