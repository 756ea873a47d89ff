"""doppel: build, run, and blind-test chat agents that impersonate a specific person."""

__version__ = "0.1.0"
