"""
Utility functions and configurations for the interleaved reasoning pipeline
"""

from .errors import ReasonerError
from .seeding import derive_rng, derive_seed

__all__ = [
    'ReasonerError',
    'derive_rng',
    'derive_seed'
]
