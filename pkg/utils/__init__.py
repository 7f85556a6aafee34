"""
verispec - Utilities Package

This package contains helper functions shared by the verispec library and
its runnable scripts: configuration and environment handling, artifact I/O,
and tracing setup.
"""

from .artifact_helpers import *
from .config_helpers import *
from .telemetry_helpers import *

__version__ = "1.0.0"
