"""Kernel selection: the compiled ``_kernels`` module when importable, else NumPy.

Set ``PGNN_BACKEND=python`` to force the fallback.
"""

import os

from . import _fallback

fallback = _fallback

if os.environ.get("PGNN_BACKEND", "").lower() == "python":
    kernels = _fallback
else:
    try:
        from . import _kernels as kernels
    except ImportError:  # extension not built
        kernels = _fallback

NAME = kernels.NAME
