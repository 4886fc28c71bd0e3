"""NumPy implementation of the ADMM inner loop.

Mirrors ``_kernel.pyx`` step for step; used when the compiled extension is
unavailable or explicitly requested.
"""

import numpy as np
from scipy.linalg import cho_solve


def admm_iterations(c, chol, q, l, u, rho, sigma, alpha, x, z, y, n_iter, dx, dy):
    """Run ``n_iter`` over-relaxed ADMM steps in place on ``x``, ``z`` and ``y``.

    ``dx`` and ``dy`` receive the change of ``x`` and ``y`` over the final step.
    """
    for it in range(n_iter):
        w = c.T @ (rho * z - y)
        xt = cho_solve((chol, True), sigma * x - q + w, check_finite=False)
        zt = c @ xt
        x_new = alpha * xt + (1.0 - alpha) * x
        t = alpha * zt + (1.0 - alpha) * z
        z_new = np.minimum(np.maximum(t + y / rho, l), u)
        y_new = y + rho * (t - z_new)
        if it == n_iter - 1:
            dx[:] = x_new - x
            dy[:] = y_new - y
        x[:] = x_new
        z[:] = z_new
        y[:] = y_new
