"""Utility functions for motioncluster."""

import hashlib
import math
import re
from functools import wraps
from inspect import iscoroutinefunction


class Error(Exception):
    """Base class for every error raised by motioncluster."""
    exit_code = 1


class InputError(Error):
    """Bad dataset, configuration or identifiers. Exit code 1."""
    exit_code = 1


class NumericalError(Error):
    """Non-finite values or a failed optimization. Exit code 2."""
    exit_code = 2


def as_coroutine(func):
    """
    Convert a function to a coroutine that can be awaited.

    Notes:
    If the function is already a coroutine, it is returned directly.

    """
    @wraps(func)
    async def _wrapper(*args, **kwargs):
        return func(*args, **kwargs)

    if iscoroutinefunction(func):
        return func
    return _wrapper


_ANGLE_UNITS = {
    'rad': 1.0, 'radian': 1.0, 'radians': 1.0,
    'deg': math.pi / 180, 'degree': math.pi / 180, 'degrees': math.pi / 180,
}

_LENGTH_UNITS = {
    'u': 1.0, 'unit': 1.0, 'units': 1.0,
    '%': 0.01, 'percent': 0.01,
}


def parse_quantity(value, kind='angle'):
    """
    Convert a quantity as a string to a plain float if needed.

    Args:
        value (str, float): a number or text such as '0.3 rad' or '17 deg'.
        kind (str): 'angle' (result in radians) or 'length' (result in
            model units, '%' meaning a fraction).

    Returns:
        float: the value in base units.

    Raises:
        InputError: the text is not a number followed by a known unit.

    Supported units:
        - angle: 'rad', 'radian', 'radians', 'deg', 'degree', 'degrees'
        - length: 'u', 'unit', 'units', '%', 'percent'

    """
    if isinstance(value, bool):
        raise InputError('expected a quantity, got {!r}'.format(value))
    if isinstance(value, (float, int)):
        return float(value)

    units = _ANGLE_UNITS if kind == 'angle' else _LENGTH_UNITS
    match = re.match(r'^([-+]?\d*\.?\d+(?:[eE][-+]?\d+)?)\s*(\S+)?$', str(value).strip())
    if match:
        number, unit = match.groups()
        if unit is None:
            return float(number)
        try:
            return float(number) * units[unit]
        except KeyError:
            pass
    raise InputError('cannot parse {} quantity {!r}'.format(kind, value))


def derive_seed(*keys):
    """
    Derive a 32 bit seed from a global seed and any number of job keys.

    The same keys always give the same seed regardless of which worker
    runs the job.
    """
    h = hashlib.sha256()
    for key in keys:
        h.update(str(key).encode())
        h.update(b'\x00')
    return int.from_bytes(h.digest()[:4], 'big')
