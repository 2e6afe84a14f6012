"""Central-difference gradient checking.

The numeric side always runs in float64 (the "shadow" evaluation). The
analytic side runs at whatever precision the caller asks for, so a float32
check measures the error of the production code path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TrainingAborted


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_index: tuple
    n_checked: int
    tolerance: float

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} max_rel_error={self.max_rel_error:.3e} "
                f"(tol {self.tolerance:g}, {self.n_checked} entries, worst at {self.worst_index})")


def relative_error(analytic, numeric, floor_frac=1e-3):
    """Elementwise |a - n| / max(|a|, |n|, floor).

    The floor is ``floor_frac`` times the largest numeric gradient entry, which
    keeps near-zero entries from dominating through rounding noise alone.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    floor = max(floor_frac * float(np.max(np.abs(n), initial=0.0)), 1e-12)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def numeric_gradient(loss_fn, x, epsilon=1e-6, indices=None):
    """Central differences of a scalar ``loss_fn`` at float64 ``x``."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    for i in idx:
        orig = flat[i]
        flat[i] = orig + epsilon
        fp = float(loss_fn(x))
        flat[i] = orig - epsilon
        fm = float(loss_fn(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise TrainingAborted(f"non-finite loss while perturbing entry {i}: {fp}, {fm}")
        gflat[i] = (fp - fm) / (2 * epsilon)
    return grad


def gradient_check(closure, x, epsilon=1e-6, tolerance=1e-6, dtype=np.float64,
                   max_entries=None, seed=0, floor_frac=1e-3):
    """Compare the analytic gradient from ``closure`` with central differences.

    ``closure(x)`` must return ``(loss, grad)`` for an array ``x`` of any float
    dtype, computing at that dtype. The analytic gradient is taken at ``dtype``;
    the numeric one at float64. ``max_entries`` subsamples large inputs.
    """
    x64 = np.array(x, dtype=np.float64)
    loss, analytic = closure(x64.astype(dtype))
    if not np.isfinite(loss):
        raise TrainingAborted(f"non-finite loss {loss} at the check point")
    indices = None
    if max_entries is not None and x64.size > max_entries:
        rng = np.random.default_rng(seed)
        indices = np.sort(rng.choice(x64.size, size=max_entries, replace=False))

    numeric = numeric_gradient(lambda v: closure(v)[0], x64, epsilon, indices)
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = numeric.reshape(-1)
    if indices is not None:
        a, n = a[indices], n[indices]
    rel = relative_error(a, n, floor_frac)
    worst = int(np.argmax(rel)) if rel.size else 0
    flat_worst = int(indices[worst]) if indices is not None else worst
    return GradCheckReport(
        max_rel_error=float(rel.max(initial=0.0)),
        worst_index=np.unravel_index(flat_worst, x64.shape) if x64.size else (),
        n_checked=int(rel.size),
        tolerance=tolerance,
    )
