"""Input checks shared by the estimators and the encoder."""

import numpy as np

from .errors import DataError
from .eventlog import PrefixTrace


def check_prefixes(X, allow_empty=False):
    """Return ``X`` as a list of :class:`PrefixTrace`, rejecting anything else."""
    if isinstance(X, PrefixTrace):
        raise TypeError("expected a sequence of PrefixTrace, got a single prefix")
    prefixes = list(X)
    for i, p in enumerate(prefixes):
        if not isinstance(p, PrefixTrace):
            raise TypeError(f"element {i} is {type(p).__name__}, expected PrefixTrace")
        if p.length < 1:
            raise DataError(f"prefix {p.prefix_id} has no events")
    if not prefixes and not allow_empty:
        raise DataError("no prefixes given")
    return prefixes


def check_targets(prefixes, y):
    """Targets default to each prefix's recorded next activity."""
    if y is None:
        return [p.target for p in prefixes]
    y = list(np.asarray(y, dtype=object))
    if len(y) != len(prefixes):
        raise ValueError(f"got {len(y)} targets for {len(prefixes)} prefixes")
    return [str(v) for v in y]


def check_random_state(seed):
    if seed is None:
        return 0
    if isinstance(seed, (int, np.integer)) and seed >= 0:
        return int(seed)
    raise ValueError(f"random_state must be a non-negative int, got {seed!r}")
