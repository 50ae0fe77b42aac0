"""Data Exchange and Interaction server: the transactional owner of
images, features, scores, tasks, and identities, plus its REST surface.
"""

from resight.dei.core import (
    AuthenticationError,
    AuthorizationError,
    ConflictError,
    DeiCore,
    NotFoundError,
    ValidationError,
)
from resight.dei.store import DeiStore, TransactionLog

__all__ = [
    "AuthenticationError",
    "AuthorizationError",
    "ConflictError",
    "DeiCore",
    "DeiStore",
    "NotFoundError",
    "TransactionLog",
    "ValidationError",
]
