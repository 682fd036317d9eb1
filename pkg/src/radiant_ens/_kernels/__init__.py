"""Kernel backend selection.

The environment variable RADIANT_BACKEND picks the implementation once,
at import time:

- ``auto`` (default): the compiled extension when importable, otherwise
  the numpy fallback,
- ``cython``: the compiled extension, raising if it is missing,
- ``python``: the numpy fallback unconditionally.

Both backends expose the same three functions with identical contracts;
``BACKEND`` names the one in use.
"""

from __future__ import annotations

import os

from . import reference


def load_backend(name):
    """Return the named backend module; used by parity tests and benchmarks."""
    if name == "python":
        return reference
    if name == "cython":
        from . import _core

        return _core
    raise ValueError(f"unknown backend {name!r}")


_choice = os.environ.get("RADIANT_BACKEND", "auto").strip().lower()
if _choice not in ("auto", "cython", "python"):
    raise ValueError(
        f"RADIANT_BACKEND must be 'auto', 'cython' or 'python', got {_choice!r}"
    )

if _choice == "auto":
    try:
        _impl = load_backend("cython")
        BACKEND = "cython"
    except ImportError:
        _impl = reference
        BACKEND = "python"
else:
    _impl = load_backend(_choice)
    BACKEND = _choice

MAX_OPTICAL_DEPTH = _impl.MAX_OPTICAL_DEPTH
query_points = _impl.query_points
render_rays_forward = _impl.render_rays_forward
render_rays_backward = _impl.render_rays_backward
