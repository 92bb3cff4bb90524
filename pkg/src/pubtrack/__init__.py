"""Publication-track analytics: topics, timelines, scientometrics, reports."""

__version__ = "0.1.0"
