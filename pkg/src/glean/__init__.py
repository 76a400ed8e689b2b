"""Model-agnostic evaluation toolkit for tabular QA and fact verification:
contamination probes, weak-supervision governance, budgeted retrieval
diagnostics, and SQL-execution-anchored error attribution."""

__version__ = "0.1.0"
