"""
OTFS integrated positioning and communication simulator with low-resolution ADCs.
"""

__version__ = "1.0.0"
