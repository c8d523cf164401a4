# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled training and rollout kernels.

Mirrors ``pgnn._fallback``. Matrix products go through the BLAS bundled with
SciPy. During training, tanh blocks are handed to ``np.tanh`` (SIMD, several
times faster than scalar libm); everything else is plain loops over
contiguous buffers.
"""

import numpy as np

from libc.math cimport exp, expm1, sqrt, fabs, pow, isfinite
from libc.stdlib cimport malloc, free
from scipy.linalg.cython_blas cimport dgemm, dgemv

from .network import layout_of, pack

NAME = "cython"

cdef enum:
    ACT_TANH = 0
    ACT_RELU = 1
    ACT_SIGMOID = 2

_ACT_CODES = {"tanh": ACT_TANH, "relu": ACT_RELU, "sigmoid": ACT_SIGMOID}


cdef inline void gemm_rm(char* ta, char* tb, int M, int N, int K,
                         double alpha, const double* A, int lda,
                         const double* B, int ldb,
                         double beta, double* C, int ldc) noexcept nogil:
    # row-major C (M x N) = alpha op(A) op(B) + beta C, via column-major C^T = op(B)^T op(A)^T
    dgemm(tb, ta, &N, &M, &K, &alpha, <double*>B, &ldb, <double*>A, &lda, &beta, C, &ldc)


cdef inline double fast_tanh(double z) noexcept nogil:
    # libm tanh is several times slower than expm1 here
    cdef double e = expm1(-2.0 * fabs(z))
    cdef double t = -e / (2.0 + e)
    return t if z >= 0.0 else -t


cdef inline double act_fn(int act, double z) noexcept nogil:
    if act == ACT_TANH:
        return fast_tanh(z)
    elif act == ACT_RELU:
        return z if z > 0.0 else 0.0
    return 1.0 / (1.0 + exp(-z))


cdef inline double act_slope(int act, double a) noexcept nogil:
    if act == ACT_TANH:
        return 1.0 - a * a
    elif act == ACT_RELU:
        return 1.0 if a > 0.0 else 0.0
    return a * (1.0 - a)


cdef void adam_apply(double* theta, double* m, double* v, const double* grad, long P,
                     double lr, double beta1, double beta2, double eps,
                     double bc1, double bc2) noexcept nogil:
    cdef long p
    cdef double g, mp, vp
    cdef double c1 = 1.0 - beta1, c2 = 1.0 - beta2
    for p in range(P):
        g = grad[p]
        mp = beta1 * m[p] + c1 * g
        vp = beta2 * v[p] + c2 * g * g
        m[p] = mp
        v[p] = vp
        theta[p] -= lr * (mp / bc1) / (sqrt(vp / bc2) + eps)


def adam_update(double[::1] theta, double[::1] m, double[::1] v, const double[::1] g, long step,
                double lr, double beta1, double beta2, double eps):
    """In-place bias-corrected ADAM update of flat arrays at step ``step`` (>= 1)."""
    adam_apply(&theta[0], &m[0], &v[0], &g[0], theta.shape[0], lr, beta1, beta2, eps,
               1.0 - beta1 ** step, 1.0 - beta2 ** step)


cdef struct Net:
    int L
    int act
    int inj          # 0-based index of the layer whose input carries features, 0 if none
    int m            # feature length
    int* sizes       # L + 1
    int* fan_in      # L
    long* w_off      # L
    long* b_off      # L


cdef int forward_batch(Net* net, const double* theta, int B, double** inp,
                       double* out, list act_views):
    """Forward pass; ``inp[0]`` and injected feature columns must be filled.

    ``act_views[l]`` is an ndarray view of layer ``l``'s activation block, used
    to apply tanh through NumPy's vectorised ufunc. Returns 0 or the 1-based
    index of the first layer with non-finite pre-activations.
    """
    cdef int l, r, j, width, ld_dst
    cdef double* dst
    cdef double z
    cdef const double* b
    cdef bint last, vec
    for l in range(net.L):
        width = net.sizes[l + 1]
        last = l == net.L - 1
        vec = not last and net.act == ACT_TANH
        if last:
            dst = out
            ld_dst = width
        else:
            dst = inp[l + 1]
            ld_dst = net.fan_in[l + 1]
        gemm_rm(b"N", b"T", B, width, net.fan_in[l], 1.0, inp[l], net.fan_in[l],
                theta + net.w_off[l], net.fan_in[l], 0.0, dst, ld_dst)
        b = theta + net.b_off[l]
        for r in range(B):
            for j in range(width):
                z = dst[r * ld_dst + j] + b[j]
                if not isfinite(z):
                    return l + 1
                dst[r * ld_dst + j] = z if (last or vec) else act_fn(net.act, z)
        if vec:
            view = act_views[l]
            np.tanh(view, out=view)
    return 0


cdef void backward_batch(Net* net, const double* theta, int B, double** inp,
                         double* delta, double* dtmp, double* grad) noexcept nogil:
    """Accumulates the gradient into ``grad``; ``delta`` holds dLoss/dOutput on entry."""
    cdef int l, r, j, width, fin, out_w
    cdef double* d_cur = delta
    cdef double* d_next = dtmp
    cdef double* swap
    cdef double* gb
    cdef double s
    for l in range(net.L - 1, -1, -1):
        out_w = net.sizes[l + 1]
        fin = net.fan_in[l]
        gemm_rm(b"T", b"N", out_w, fin, B, 1.0, d_cur, out_w, inp[l], fin,
                0.0, grad + net.w_off[l], fin)
        gb = grad + net.b_off[l]
        for j in range(out_w):
            s = 0.0
            for r in range(B):
                s += d_cur[r * out_w + j]
            gb[j] = s
        if l == 0:
            break
        width = net.sizes[l]
        # d_next (B x width) = d_cur (B x out_w) @ W[:, :width]
        gemm_rm(b"N", b"N", B, width, out_w, 1.0, d_cur, out_w, theta + net.w_off[l], fin,
                0.0, d_next, width)
        for r in range(B):
            for j in range(width):
                d_next[r * width + j] *= act_slope(net.act, inp[l][r * fin + j])
        swap = d_cur
        d_cur = d_next
        d_next = swap


cdef Net make_net(object params, object lay, int[::1] sizes, int[::1] fan_in,
                  long[::1] w_off, long[::1] b_off):
    cdef Net net
    net.L = len(params.sizes) - 1
    net.act = _ACT_CODES[params.activation]
    net.inj = params.injection.layer
    net.m = params.n_features
    net.sizes = &sizes[0]
    net.fan_in = &fan_in[0]
    net.w_off = &w_off[0]
    net.b_off = &b_off[0]
    return net


def train_epoch(params, double[::1] theta, double[::1] m, double[::1] v, long step,
                const double[:, ::1] X, const double[:, ::1] Y, F,
                const long[::1] order, int batch_size,
                double lr, double beta1, double beta2, double eps):
    """One epoch of minibatch ADAM, in place. Returns ``(loss_sum, n_batches, step, ok)``."""
    lay = layout_of(params)
    cdef int[::1] sizes = lay.sizes
    cdef int[::1] fan_in = lay.fan_in
    cdef long[::1] w_off = lay.w_off.astype(np.int64)
    cdef long[::1] b_off = lay.b_off.astype(np.int64)
    cdef Net net = make_net(params, lay, sizes, fan_in, w_off, b_off)
    cdef const double[:, ::1] Fv
    cdef bint has_f = net.inj > 0
    if has_f:
        Fv = np.ascontiguousarray(F, dtype=np.float64).reshape(len(X), -1)

    cdef int L = net.L, n_in = net.sizes[0], n_out = net.sizes[L]
    cdef long n = order.shape[0]
    cdef long P = theta.shape[0]
    cdef int maxw = 0, l, r, j, B, fw, inj_col
    for l in range(L + 1):
        if net.sizes[l] > maxw:
            maxw = net.sizes[l]
    for l in range(L):
        if net.fan_in[l] > maxw:
            maxw = net.fan_in[l]

    inp_store = [np.zeros(batch_size * net.fan_in[l]) for l in range(L)]
    cdef double** inp = <double**>malloc(L * sizeof(double*))
    cdef double[::1] tmpview
    for l in range(L):
        tmpview = inp_store[l]
        inp[l] = &tmpview[0]
    cdef double[::1] out = np.zeros(batch_size * n_out)

    def views_for(int rows):
        return [inp_store[l + 1].reshape(batch_size, net.fan_in[l + 1])[:rows, : net.sizes[l + 1]]
                if l < L - 1 else None for l in range(L)]

    full_views = views_for(batch_size)
    cur_views = full_views
    cdef double[::1] delta = np.zeros(batch_size * maxw)
    cdef double[::1] dtmp = np.zeros(batch_size * maxw)
    cdef double[::1] grad = np.zeros(P)

    cdef double loss_sum = 0.0, loss, diff, bc1, bc2, scale
    cdef long n_batches = 0, start, idx, p
    cdef int bad
    cdef bint ok = True
    try:
        start = 0
        while start < n:
            B = batch_size if start + batch_size <= n else <int>(n - start)
            if B != batch_size:
                cur_views = views_for(B)
            fw = net.fan_in[0]
            for r in range(B):
                idx = order[start + r]
                for j in range(n_in):
                    inp[0][r * fw + j] = X[idx, j]
            if has_f:
                fw = net.fan_in[net.inj]
                inj_col = net.sizes[net.inj]
                for r in range(B):
                    idx = order[start + r]
                    for j in range(net.m):
                        inp[net.inj][r * fw + inj_col + j] = Fv[idx, j]
            bad = forward_batch(&net, &theta[0], B, inp, &out[0], cur_views)
            if bad:
                ok = False
                break
            loss = 0.0
            scale = 2.0 / (B * n_out)
            for r in range(B):
                idx = order[start + r]
                for j in range(n_out):
                    diff = out[r * n_out + j] - Y[idx, j]
                    loss += diff * diff
                    delta[r * n_out + j] = scale * diff
            loss /= B * n_out
            if not isfinite(loss):
                ok = False
                break
            backward_batch(&net, &theta[0], B, inp, &delta[0], &dtmp[0], &grad[0])
            for p in range(P):
                if not isfinite(grad[p]):
                    ok = False
                    break
            if not ok:
                break
            step += 1
            bc1 = 1.0 - pow(beta1, <double>step)
            bc2 = 1.0 - pow(beta2, <double>step)
            adam_apply(&theta[0], &m[0], &v[0], &grad[0], P, lr, beta1, beta2, eps, bc1, bc2)
            loss_sum += loss
            n_batches += 1
            start += B
    finally:
        free(inp)
    return loss_sum, n_batches, step, ok


def rollout(params, term, x0, double h, long n_steps, double limit):
    """Forward-Euler rollout of the network. Returns ``(states, diverged_at)``."""
    lay = layout_of(params)
    cdef int[::1] sizes = lay.sizes
    cdef int[::1] fan_in = lay.fan_in
    cdef long[::1] w_off = lay.w_off.astype(np.int64)
    cdef long[::1] b_off = lay.b_off.astype(np.int64)
    cdef Net net = make_net(params, lay, sizes, fan_in, w_off, b_off)
    cdef double[::1] theta = pack(params)
    cdef int d = net.sizes[0], L = net.L, l, i, e
    cdef int[::1] expo = np.zeros(d, dtype=np.int32)
    if net.inj:
        expo = np.asarray(term.exponents, dtype=np.int32)

    states = np.empty((n_steps + 1, d))
    cdef double[:, ::1] S = states
    cdef int maxw = 0
    for l in range(L):
        if net.fan_in[l] > maxw:
            maxw = net.fan_in[l]
    cdef double[::1] buf_a = np.zeros(maxw)
    cdef double[::1] buf_b = np.zeros(maxw)
    cdef double[::1] f_out = np.zeros(d)
    cdef double* cur
    cdef double* nxt
    cdef double* swap
    cdef double feat, z, one = 1.0, zero = 0.0
    cdef int inc = 1, width, fin
    cdef long k, diverged = -1
    cdef bint bad

    for i in range(d):
        S[0, i] = x0[i]
    with nogil:
        for k in range(n_steps):
            cur = &buf_a[0]
            nxt = &buf_b[0]
            for i in range(d):
                cur[i] = S[k, i]
            bad = False
            for l in range(L):
                fin = net.fan_in[l]
                width = net.sizes[l + 1]
                if net.inj and l == net.inj:
                    feat = 1.0
                    for i in range(d):
                        for e in range(expo[i]):
                            feat *= S[k, i]
                    cur[net.sizes[l]] = feat
                if l == L - 1:
                    nxt = &f_out[0]
                # row-major W (width x fin): y = W x  ==  column-major W^T, transposed
                dgemv(b"T", &fin, &width, &one, &theta[net.w_off[l]], &fin, cur, &inc,
                      &zero, nxt, &inc)
                for i in range(width):
                    z = nxt[i] + theta[net.b_off[l] + i]
                    if not isfinite(z):
                        bad = True
                    nxt[i] = z if l == L - 1 else act_fn(net.act, z)
                if l < L - 1:
                    swap = cur
                    cur = nxt
                    nxt = swap
            for i in range(d):
                z = S[k, i] + h * f_out[i]
                if bad or not isfinite(z) or fabs(z) > limit:
                    bad = True
                S[k + 1, i] = z
            if bad:
                diverged = k + 1
                break
    if diverged >= 0:
        return states[:diverged], diverged
    return states, -1
