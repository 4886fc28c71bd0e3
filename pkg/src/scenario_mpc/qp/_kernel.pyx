# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled ADMM inner loop.

One pass over the constraint matrix per iteration: the product ``C x~``, the
projection and dual update, and the accumulation of ``C' (rho z - y)`` for the
next step all happen row by row while the row is in cache.
"""

from libc.stdlib cimport malloc, free


cdef inline double _clip(double v, double lo, double hi) nogil:
    if v < lo:
        return lo
    if v > hi:
        return hi
    return v


def admm_iterations(const double[:, ::1] c, const double[:, ::1] chol,
                    const double[::1] q, const double[::1] l, const double[::1] u,
                    const double[::1] rho, double sigma, double alpha,
                    double[::1] x, double[::1] z, double[::1] y, int n_iter,
                    double[::1] dx, double[::1] dy):
    cdef Py_ssize_t m = c.shape[0]
    cdef Py_ssize_t n = c.shape[1]
    cdef Py_ssize_t i, j, it
    cdef double s, t, zn, yn, zt, r
    cdef double *w = <double *> malloc(n * sizeof(double))
    cdef double *w_next = <double *> malloc(n * sizeof(double))
    cdef double *xt = <double *> malloc(n * sizeof(double))
    cdef double *tmp
    if w == NULL or w_next == NULL or xt == NULL:
        free(w)
        free(w_next)
        free(xt)
        raise MemoryError()

    with nogil:
        for j in range(n):
            w[j] = 0.0
        for i in range(m):
            r = rho[i] * z[i] - y[i]
            for j in range(n):
                w[j] += c[i, j] * r

        for it in range(n_iter):
            # x~ = K^{-1} (sigma x - q + w) by forward/back substitution
            for i in range(n):
                s = sigma * x[i] - q[i] + w[i]
                for j in range(i):
                    s -= chol[i, j] * xt[j]
                xt[i] = s / chol[i, i]
            for i in range(n - 1, -1, -1):
                s = xt[i]
                for j in range(i + 1, n):
                    s -= chol[j, i] * xt[j]
                xt[i] = s / chol[i, i]

            for j in range(n):
                w_next[j] = 0.0
            for i in range(m):
                zt = 0.0
                for j in range(n):
                    zt += c[i, j] * xt[j]
                t = alpha * zt + (1.0 - alpha) * z[i]
                zn = _clip(t + y[i] / rho[i], l[i], u[i])
                yn = y[i] + rho[i] * (t - zn)
                if it == n_iter - 1:
                    dy[i] = yn - y[i]
                z[i] = zn
                y[i] = yn
                r = rho[i] * zn - yn
                for j in range(n):
                    w_next[j] += c[i, j] * r

            for j in range(n):
                t = alpha * xt[j] + (1.0 - alpha) * x[j]
                if it == n_iter - 1:
                    dx[j] = t - x[j]
                x[j] = t
            tmp = w
            w = w_next
            w_next = tmp

    free(w)
    free(w_next)
    free(xt)
