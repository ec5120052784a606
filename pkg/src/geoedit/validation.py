"""Input validation helpers used at public API boundaries."""

import numpy as np

from .errors import ContractError, DimensionError


def as_float_array(x, name="array", dtype=np.float64):
    """Coerce to a contiguous float array, requiring finite entries."""
    arr = np.ascontiguousarray(x, dtype=dtype)
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name} contains non-finite entries")
    return arr


def check_same_shape(a, b, name_a="a", name_b="b"):
    if a.shape != b.shape:
        raise DimensionError(
            f"shape mismatch: {name_a} has shape {tuple(a.shape)}, "
            f"{name_b} has shape {tuple(b.shape)}"
        )


def check_in_range(value, low, high, name, *, low_open=False, high_open=False):
    """Validate a scalar against a closed (default) or half-open interval."""
    ok_low = value > low if low_open else value >= low
    ok_high = value < high if high_open else value <= high
    if not (ok_low and ok_high):
        lo_b = "(" if low_open else "["
        hi_b = ")" if high_open else "]"
        raise ContractError(
            f"{name}={value!r} outside allowed range {lo_b}{low}, {high}{hi_b}"
        )
    return value


def check_positive(value, name):
    if not value > 0:
        raise ContractError(f"{name} must be positive, got {value!r}")
    return value


def check_nonempty_text(s, name="text"):
    if not isinstance(s, str) or not s.strip():
        raise ContractError(f"{name} must be a nonempty string")
    return s
