"""Kernel backend selection.

The compiled extension is used when it imports; setting ``RPCIR_PURE_PYTHON=1``
forces the reference implementation.
"""
import logging
import os

from . import _kernels_py

log = logging.getLogger(__name__)

if os.environ.get("RPCIR_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:
        log.debug("compiled kernels unavailable, using pure-Python fallback")
        _impl = _kernels_py
        BACKEND = "python"

scatter_add_rows = _impl.scatter_add_rows
bfs_distances = _impl.bfs_distances
relation_walks = _impl.relation_walks

__all__ = ["BACKEND", "scatter_add_rows", "bfs_distances", "relation_walks"]
