"""Pure-numpy reference for the compiled inner-loop kernels."""

import numpy as np


def quad_steps(gram, atb, x0, anchor, shift, step, rho, K, path=None):
    """Run ``K`` preconditioned gradient steps on every least-squares client.

    Each client ``i`` iterates::

        x <- x - step * (G_i x - c_i + rho * (x - anchor_i) + shift_i)

    starting from ``x0[i]``. Returns the endpoints and the mean of the
    iterates ``x^1 .. x^K``. If ``path`` is given (shape ``(m, K + 1, d)``)
    it receives every iterate including ``x^0``.
    """
    x = np.array(x0, dtype=np.float64, copy=True)
    acc = np.zeros_like(x)
    if path is not None:
        path[:, 0, :] = x
    for k in range(K):
        g = np.einsum("ijk,ik->ij", gram, x) - atb + rho * (x - anchor) + shift
        x = x - step * g
        acc += x
        if path is not None:
            path[:, k + 1, :] = x
    return x, acc / K
