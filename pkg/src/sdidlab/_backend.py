"""Kernel backend selection.

The simplex solver's inner loop is the package hot spot (it runs hundreds of
times per bootstrap or placebo call).  A compiled extension is used when
available; ``SDIDLAB_BACKEND=python`` forces the NumPy fallback and
``SDIDLAB_BACKEND=compiled`` makes a missing extension a hard error.
"""

from __future__ import annotations

import os

_requested = os.environ.get("SDIDLAB_BACKEND", "").strip().lower()

if _requested in ("python", "pure", "py"):
    from ._fw_py import fw_quad_simplex

    BACKEND = "python"
elif _requested in ("", "auto", "compiled", "c"):
    try:
        from ._fw import fw_quad_simplex  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        if _requested in ("compiled", "c"):
            raise ImportError(
                "SDIDLAB_BACKEND=compiled but the sdidlab._fw extension is not built; "
                "reinstall the package or unset SDIDLAB_BACKEND"
            )
        from ._fw_py import fw_quad_simplex

        BACKEND = "python"
else:
    raise ValueError(
        f"unrecognized SDIDLAB_BACKEND={_requested!r}; use 'compiled' or 'python'"
    )

__all__ = ["fw_quad_simplex", "BACKEND"]
