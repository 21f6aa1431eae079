"""Backend selection for the inner-loop kernels.

By default the compiled extension is used when importable, with the numpy
implementation as fallback.  ``EH_ALLOCATE_BACKEND`` forces a choice:
``cython`` (raise if the extension is missing) or ``python``.
"""

import os

from .errors import InvalidConfig

_choice = os.environ.get("EH_ALLOCATE_BACKEND", "auto").strip().lower()

if _choice in ("auto", ""):
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:
        from . import _kernels_py as _impl

        BACKEND = "python"
elif _choice in ("cython", "compiled", "ext"):
    from . import _kernels as _impl

    BACKEND = "cython"
elif _choice in ("python", "py", "numpy"):
    from . import _kernels_py as _impl

    BACKEND = "python"
else:
    raise InvalidConfig(
        f"EH_ALLOCATE_BACKEND={_choice!r}: expected 'auto', 'cython' or 'python'"
    )

dykstra_project = _impl.dykstra_project
diag_err = _impl.diag_err
diag_err_grad = _impl.diag_err_grad


def backend_name():
    """Name of the kernel backend selected at import ('cython' or 'python')."""
    return BACKEND
