"""Fisher-information sensing at the Aubry-André localization transition."""

__version__ = "0.1.0"
