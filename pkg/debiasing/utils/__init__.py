"""
A set of utilities used by debiasing
"""

from . import linalg
from . import logging
from . import rng
