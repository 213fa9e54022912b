"""Selects the compiled code-search kernel, falling back to numpy.

Set ``HSIKRYLOV_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _codesearch_py as python_impl

compiled_impl = None
if not os.environ.get("HSIKRYLOV_PURE_PYTHON"):
    try:
        from . import _codesearch as compiled_impl
    except ImportError:  # extension not built
        compiled_impl = None

impl = compiled_impl if compiled_impl is not None else python_impl
BACKEND = "cython" if compiled_impl is not None else "python"
