"""Label-only black-box transfer attacks with a semi-supervised substitute."""

__version__ = "0.1.0"
