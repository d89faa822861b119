"""Central finite-difference Jacobian, the independent oracle for jacobian.py.

Step 1e-6 balances the O(h^2) truncation error against the O(eps/h)
rounding error in double precision, leaving roughly nine good digits for
outputs of order one.
"""

from __future__ import annotations

import numpy as np

DEFAULT_STEP = 1e-6


def finite_diff_jacobian(f, theta: np.ndarray,
                         step: float = DEFAULT_STEP) -> np.ndarray:
    """Column-wise (f(theta + h e_m) - f(theta - h e_m)) / 2h."""
    if step <= 0:
        raise ValueError("step must be positive")
    theta = np.asarray(theta, dtype=float)
    cols = []
    for m in range(theta.size):
        bump = np.zeros_like(theta)
        bump[m] = step
        cols.append((np.asarray(f(theta + bump), float)
                     - np.asarray(f(theta - bump), float)) / (2.0 * step))
    return np.stack(cols, axis=-1)


def jacobian_mismatch(analytic: np.ndarray, numeric: np.ndarray,
                      rtol: float = 1e-6, atol: float = 1e-8) -> float:
    """Worst elementwise deviation, scaled so that <= rtol means a pass.

    Entries are compared relatively when the reference magnitude exceeds
    atol/rtol and absolutely (at atol) below it; the two regimes meet where
    the bounds coincide.  Equivalent to, and slightly stricter than,
    ``np.allclose(analytic, numeric, rtol=rtol, atol=atol)`` when the
    returned value is <= rtol.
    """
    analytic = np.asarray(analytic, float)
    numeric = np.asarray(numeric, float)
    err = np.abs(analytic - numeric)
    rel = err / np.maximum(np.abs(numeric), atol / rtol)
    return float(rel.max(initial=0.0))
