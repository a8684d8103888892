"""Training kernel backend selection.

The compiled Cython extension is used when available; otherwise the numpy
implementation takes over. CRCHFL_KERNELS=numpy or CRCHFL_KERNELS=compiled
forces a backend (the latter raises if the extension was not built).

Both backends are deterministic, and because the compiled backend keeps
matrix products and tanh on the same numpy primitives and only fuses the
surrounding elementwise work in the same operation order, the two produce
bit-identical results on this build. Tests assert agreement at 1e-12; see
benchmarks/bench_kernels.py for timings and the measured difference.
"""

import os

_forced = os.environ.get("CRCHFL_KERNELS", "").strip().lower()
if _forced not in ("", "numpy", "compiled"):
    raise ImportError(f"CRCHFL_KERNELS must be 'numpy' or 'compiled', got {_forced!r}")

if _forced == "numpy":
    from . import _numpy as _impl
elif _forced == "compiled":
    from . import _compiled as _impl  # type: ignore[no-redef]
else:
    try:
        from . import _compiled as _impl  # type: ignore[no-redef]
    except ImportError:
        from . import _numpy as _impl

branch_forward = _impl.branch_forward
branch_backward = _impl.branch_backward
adam_update = _impl.adam_update


def backend_name() -> str:
    return _impl.BACKEND


def get_backend(name: str):
    """Load a specific backend module by name (for tests and benchmarks)."""
    if name == "numpy":
        from . import _numpy
        return _numpy
    if name == "compiled":
        from . import _compiled
        return _compiled
    raise ValueError(f"unknown kernel backend {name!r}")
