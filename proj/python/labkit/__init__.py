"""Python bindings for the learning-dynamics laboratory core."""

from ._labkit import *  # noqa: F401,F403
from ._labkit import __version__, ConfigError, DivergenceDetected, LabError  # noqa: F401
