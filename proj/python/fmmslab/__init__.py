"""Feedback-based modal mutual search attacks on toy image-text retrieval."""

from fmmslab._core import *  # noqa: F401,F403
from fmmslab._core import __version__  # noqa: F401
