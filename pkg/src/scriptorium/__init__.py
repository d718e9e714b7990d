"""Harness for object detection experiments on historical music manuscripts:
annotation fusion, stratified splitting, AL/SL round loops, and metrics."""

__version__ = "0.1.0"
