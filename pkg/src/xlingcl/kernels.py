"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The two hot spots of the package are (1) backpropagation through a cosine
similarity matrix, which every loss performs, and (2) the dense AdamW
parameter update, which runs over every weight entry each step.  Both carry
a ``@njit`` implementation and a vectorized numpy twin; selection follows
:mod:`xlingcl.backend`.  ``benchmarks/bench_backends.py`` compares the two.

All kernels work on float64 arrays and avoid fastmath so that results are
bit-reproducible within one backend.
"""

import numpy as np

from .backend import ACTIVE


# ---------------------------------------------------------------------------
# pure-numpy implementations


def _cosine_backward_numpy(dS, S, Xn, Yn, inv_nx, inv_ny):
    wX = (dS * S).sum(axis=1)
    wY = (dS * S).sum(axis=0)
    gX = (dS @ Yn - wX[:, None] * Xn) * inv_nx[:, None]
    gY = (dS.T @ Xn - wY[:, None] * Yn) * inv_ny[:, None]
    return gX, gY


def _adamw_update_numpy(w, g, m, v, t, lr, beta1, beta2, eps, weight_decay):
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    # decoupled decay acts on the pre-update weights
    w *= 1.0 - lr * weight_decay
    w -= lr * mhat / (np.sqrt(vhat) + eps)


# ---------------------------------------------------------------------------
# numba implementations (compiled lazily on first call, cached on disk)

if ACTIVE == "numba":
    from numba import njit

    @njit(cache=True)
    def _cosine_backward_numba(dS, S, Xn, Yn, inv_nx, inv_ny):
        M, N = dS.shape
        D = Xn.shape[1]
        gX = np.zeros((M, D))
        gY = np.zeros((N, D))
        for i in range(M):
            for j in range(N):
                d = dS[i, j]
                if d == 0.0:
                    continue
                s = S[i, j]
                for k in range(D):
                    gX[i, k] += d * (Yn[j, k] - s * Xn[i, k]) * inv_nx[i]
                    gY[j, k] += d * (Xn[i, k] - s * Yn[j, k]) * inv_ny[j]
        return gX, gY

    @njit(cache=True)
    def _adamw_update_numba(w, g, m, v, t, lr, beta1, beta2, eps, weight_decay):
        bc1 = 1.0 - beta1**t
        bc2 = 1.0 - beta2**t
        R, C = w.shape
        for i in range(R):
            for j in range(C):
                gij = g[i, j]
                m[i, j] = beta1 * m[i, j] + (1.0 - beta1) * gij
                v[i, j] = beta2 * v[i, j] + (1.0 - beta2) * gij * gij
                mhat = m[i, j] / bc1
                vhat = v[i, j] / bc2
                wij = w[i, j]
                w[i, j] = (
                    wij
                    - lr * weight_decay * wij
                    - lr * mhat / (np.sqrt(vhat) + eps)
                )

    _cosine_backward_impl = _cosine_backward_numba
    _adamw_update_impl = _adamw_update_numba
else:
    _cosine_backward_impl = _cosine_backward_numpy
    _adamw_update_impl = _adamw_update_numpy


# ---------------------------------------------------------------------------
# public entry points


def cosine_backward(dS, S, Xn, Yn, inv_nx, inv_ny):
    """Backpropagate a loss through a cosine similarity matrix.

    Given dL/dS for S[i, j] = cos(x_i, y_j), returns (dL/dX, dL/dY).
    ``Xn``/``Yn`` are the row-normalized inputs and ``inv_nx``/``inv_ny``
    the reciprocal row norms of the raw inputs.
    """
    return _cosine_backward_impl(
        np.ascontiguousarray(dS),
        np.ascontiguousarray(S),
        np.ascontiguousarray(Xn),
        np.ascontiguousarray(Yn),
        np.ascontiguousarray(inv_nx),
        np.ascontiguousarray(inv_ny),
    )


def adamw_update(w, g, m, v, t, lr, beta1, beta2, eps, weight_decay):
    """One in-place AdamW step with decoupled weight decay.

    ``t`` is the 1-based step count used for bias correction.
    """
    _adamw_update_impl(w, g, m, v, float(t), lr, beta1, beta2, eps, weight_decay)
