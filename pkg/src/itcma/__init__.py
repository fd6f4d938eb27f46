"""Internal time-consciousness machine (ITCM) and the agent built on it (ITCMA)."""

__version__ = "0.1.0"
