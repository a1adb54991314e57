"""Feature attribution, explanation-quality metrics and attribution-based
adversarial detection for small dense networks."""

__version__ = "0.1.0"
