"""Concise abstractive explanations for multi-hop reading comprehension.

Composite conciseness reward, self-critical training of a toy explainer,
a lexical paragraph ranker and the usual evaluation measures.
"""

from suqa.errors import (
    InvalidArgument,
    InvalidState,
    ParseError,
    ProtocolError,
    RewardUnavailable,
    SuqaError,
    UndefinedMetric,
)

__version__ = "0.1.0"

__all__ = [
    "InvalidArgument",
    "InvalidState",
    "ParseError",
    "ProtocolError",
    "RewardUnavailable",
    "SuqaError",
    "UndefinedMetric",
    "__version__",
]
