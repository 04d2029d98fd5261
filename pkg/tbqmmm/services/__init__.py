"""
Services module for tbqmmm.
Contains experiment tracking and iteration logging.
"""

from .tracking import IterationLog, StudyTracker

__all__ = [
    "IterationLog",
    "StudyTracker"
]
