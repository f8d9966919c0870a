"""Process-level runtime knobs."""

from __future__ import annotations

_blas_limiter = None


def limit_blas_threads(n: int = 1) -> None:
    """Pin BLAS thread pools; the QP kernels are small-matrix bound.

    Multi-threaded BLAS roughly doubles the per-iteration cost of the
    solver's matrix-vector products at MPC sizes, so experiment entry
    points call this once per process. No-op when threadpoolctl is absent.
    """
    global _blas_limiter
    if _blas_limiter is not None:
        return
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return
    _blas_limiter = threadpool_limits(limits=n, user_api="blas")
