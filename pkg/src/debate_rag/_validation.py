"""Small argument checks shared by the estimators and config objects."""

from __future__ import annotations

import numbers


def check_bool_free_int(value, name: str, minimum: int = 0) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise TypeError(f"{name} must be an int, got {type(value).__name__}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_interval(value, name: str, low: float, high: float) -> float:
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise TypeError(f"{name} must be a real number, got {type(value).__name__}")
    if not low <= value <= high:
        raise ValueError(f"{name} must be in [{low}, {high}], got {value}")
    return float(value)


def check_nonempty_text(value, name: str) -> str:
    if not isinstance(value, str):
        raise TypeError(f"{name} must be a string, got {type(value).__name__}")
    value = value.strip()
    if not value:
        raise ValueError(f"{name} must be non-empty")
    return value


def check_question_list(X) -> list[str]:
    """Accept any iterable of strings except a bare string."""
    if isinstance(X, str):
        raise TypeError("expected an iterable of questions, got a single string")
    questions = [check_nonempty_text(q, "question") for q in X]
    if not questions:
        raise ValueError("no questions given")
    return questions
