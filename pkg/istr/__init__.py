"""IsTr backdoor laboratory: poison, detect (Steps), refine (DMS), invert and unlearn."""

__version__ = "0.1.0"
