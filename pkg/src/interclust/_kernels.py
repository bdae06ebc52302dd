"""Kernel backend selection.

The compiled core is used when it imports; ``INTERCLUST_PURE=1`` forces the
numpy fallback.
"""

import os

from . import _pure

if os.environ.get("INTERCLUST_PURE"):
    _impl = _pure
else:
    try:
        from . import _core as _impl
    except ImportError:  # extension not built
        _impl = _pure

BACKEND = "python" if _impl is _pure else "cython"

cluster_distance_sums = _impl.cluster_distance_sums
ward_linkage = _impl.ward_linkage
mean_shift_seeds = _impl.mean_shift_seeds
best_split = _impl.best_split
predict_forest = _impl.predict_forest
