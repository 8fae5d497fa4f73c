"""
SliceSim: explainable multi-agent RAN slicing
Source package initialization
"""

__version__ = "0.3.0"
