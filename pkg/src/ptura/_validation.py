"""Input checks shared by the estimators (sklearn's helpers reject complex data)."""
import numbers

import numpy as np


def check_bits(bits, n_bits=None, name="bits"):
    """Return ``bits`` as a uint8 0/1 array, checking the trailing length."""
    arr = np.asarray(bits)
    if arr.size and not np.all((arr == 0) | (arr == 1)):
        raise ValueError(f"{name} must contain only 0/1 values")
    arr = arr.astype(np.uint8)
    if n_bits is not None and arr.shape[-1:] != (n_bits,):
        raise ValueError(f"{name} must have length {n_bits}, got shape {arr.shape}")
    return arr


def check_tensor(Y, shape=None, name="Y"):
    """Validate a dense complex tensor; returns a complex128 ndarray."""
    Y = np.asarray(Y)
    if not np.issubdtype(Y.dtype, np.number):
        raise TypeError(f"{name} must be numeric")
    Y = Y.astype(np.complex128, copy=False)
    if Y.ndim < 2:
        raise ValueError(f"{name} must have at least two modes, got ndim={Y.ndim}")
    if shape is not None and tuple(Y.shape) != tuple(shape):
        raise ValueError(f"{name} has shape {Y.shape}, expected {tuple(shape)}")
    if not np.all(np.isfinite(Y)):
        raise ValueError(f"{name} contains non-finite values")
    return Y


def check_factors(factors, rows=None, name="factors"):
    """Validate a list of factor matrices sharing one column count."""
    out = [np.asarray(f, dtype=np.complex128) for f in factors]
    if any(f.ndim != 2 for f in out):
        raise ValueError(f"{name} must be 2-D matrices")
    if len({f.shape[1] for f in out}) > 1:
        raise ValueError(f"{name} have mismatched column counts")
    if rows is not None:
        got = tuple(f.shape[0] for f in out)
        if got != tuple(rows):
            raise ValueError(f"{name} row counts {got} differ from {tuple(rows)}")
    return out


def check_random_state(seed):
    """Turn ``seed`` into a ``numpy.random.Generator``."""
    if seed is None or isinstance(seed, (numbers.Integral, np.integer, tuple, list)):
        return np.random.default_rng(seed)
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.default_rng(seed)
    raise ValueError(f"{seed!r} cannot be used to seed a Generator")
