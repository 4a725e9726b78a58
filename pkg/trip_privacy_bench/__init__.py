"""
Trip Privacy Bench - measures how location privacy noise degrades trip anomaly detectors.
"""

__version__ = "1.0.0"
