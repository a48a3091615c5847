"""Binary vision transformer kernels, tape autograd and a toy training CLI."""
import os

# numba's TBB layer warns on mismatched versions; workqueue needs nothing extra
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

_threads = os.environ.get("DIDB_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)


def thread_cap() -> int | None:
    """Parallelism limit from ``DIDB_THREADS``, or None when unset."""
    raw = os.environ.get("DIDB_THREADS")
    if not raw:
        return None
    n = int(raw)
    if n < 1:
        raise ValueError(f"DIDB_THREADS must be >= 1, got {raw!r}")
    return n


__version__ = "0.1.0"
