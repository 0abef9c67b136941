"""Input validation helpers, in the spirit of ``sklearn.utils.validation``."""

import numpy as np

from .exceptions import InstanceError

SYMMETRY_TOL = 1e-10


def check_vector(v, size=None, name="vector"):
    """Return ``v`` as a finite float 1-D array, optionally of a given size."""
    arr = np.asarray(v, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise InstanceError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if size is not None and arr.shape[0] != size:
        raise InstanceError(f"dimension mismatch: {name} has length {arr.shape[0]}, expected {size}")
    if not np.all(np.isfinite(arr)):
        raise InstanceError(f"{name} contains non-finite entries")
    return arr


def check_matrix(M, shape=None, name="matrix"):
    arr = np.asarray(M, dtype=float)
    if arr.ndim == 0 and shape == (1, 1):
        arr = arr.reshape(1, 1)
    if arr.ndim != 2:
        raise InstanceError(f"{name} must be two-dimensional, got shape {arr.shape}")
    if shape is not None and arr.shape != tuple(shape):
        raise InstanceError(f"dimension mismatch: {name} has shape {arr.shape}, expected {tuple(shape)}")
    if not np.all(np.isfinite(arr)):
        raise InstanceError(f"{name} contains non-finite entries")
    return arr


def check_symmetric(M, size=None, name="matrix", tol=SYMMETRY_TOL):
    """Validate a square symmetric matrix and return its exactly symmetrized copy."""
    shape = None if size is None else (size, size)
    arr = check_matrix(M, shape=shape, name=name)
    if arr.shape[0] != arr.shape[1]:
        raise InstanceError(f"{name} must be square, got shape {arr.shape}")
    scale = max(1.0, float(np.max(np.abs(arr))) if arr.size else 1.0)
    if np.max(np.abs(arr - arr.T), initial=0.0) > tol * scale:
        raise InstanceError(f"{name} is not symmetric")
    return 0.5 * (arr + arr.T)


def check_stack(Ms, count, size, name="matrices"):
    """Validate a list of ``count`` symmetric ``size x size`` matrices."""
    if len(Ms) != count:
        raise InstanceError(f"dimension mismatch: expected {count} {name}, got {len(Ms)}")
    out = np.zeros((count, size, size))
    for i, M in enumerate(Ms):
        out[i] = check_symmetric(M, size=size, name=f"{name}[{i}]")
    return out
