"""Hot numeric kernels with optional numba acceleration.

Two code paths exist for every kernel:

* a pure-numpy implementation (always available), and
* the same source compiled with ``numba.njit`` when numba is importable.

Setting the environment variable ``AIMLAB_DISABLE_NUMBA`` (to any value)
forces the numpy path; otherwise numba is used when present.  The MLP
kernels are single-source: the compiled variant is literally the numpy
function passed through ``njit``, so both paths share one definition.
The dynamic-programming kernel has a vectorized numpy twin because its
natural loop form only pays off under compilation.

``benchmarks/bench_kernels.py`` compares both paths on representative
workloads.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via the env flag instead
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not os.environ.get("AIMLAB_DISABLE_NUMBA")


def backend() -> str:
    """Name of the active kernel backend ("numba" or "numpy")."""
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# MLP kernels (single source, numba-compatible numpy)
#
# Parameters live in one flat float64 vector; w_off/b_off/dims describe the
# per-layer slices.  Hidden activations are ReLU, the output is linear.
# ---------------------------------------------------------------------------

def _mlp_values_impl(flat, w_off, b_off, dims, X):
    n_layers = dims.shape[0] - 1
    h = X
    for i in range(n_layers):
        ni = dims[i]
        no = dims[i + 1]
        W = flat[w_off[i]:w_off[i] + ni * no].reshape(ni, no)
        b = flat[b_off[i]:b_off[i] + no]
        h = np.dot(h, W) + b
        if i < n_layers - 1:
            h = np.maximum(h, 0.0)
    return h


def _mlp_loss_grad_impl(flat, w_off, b_off, dims, X, actions, targets):
    """Squared loss on the chosen action values, with the full gradient.

    loss = mean_b (Q[b, actions[b]] - targets[b])^2, grad w.r.t. ``flat``.
    """
    n_layers = dims.shape[0] - 1
    B = X.shape[0]
    acts = [X]
    h = X
    for i in range(n_layers):
        ni = dims[i]
        no = dims[i + 1]
        W = flat[w_off[i]:w_off[i] + ni * no].reshape(ni, no)
        b = flat[b_off[i]:b_off[i] + no]
        h = np.dot(h, W) + b
        if i < n_layers - 1:
            h = np.maximum(h, 0.0)
        acts.append(h)
    Q = acts[n_layers]

    n_out = dims[n_layers]
    dY = np.zeros((B, n_out))
    loss = 0.0
    for b_i in range(B):
        d = Q[b_i, actions[b_i]] - targets[b_i]
        loss += d * d
        dY[b_i, actions[b_i]] = 2.0 * d / B
    loss /= B

    grad = np.zeros_like(flat)
    delta = dY
    for i in range(n_layers - 1, -1, -1):
        A = acts[i]
        ni = dims[i]
        no = dims[i + 1]
        gW = np.dot(np.ascontiguousarray(A.T), delta)
        grad[w_off[i]:w_off[i] + ni * no] = gW.ravel()
        grad[b_off[i]:b_off[i] + no] = np.sum(delta, axis=0)
        if i > 0:
            W = flat[w_off[i]:w_off[i] + ni * no].reshape(ni, no)
            delta = np.dot(delta, np.ascontiguousarray(W.T))
            delta = np.where(acts[i] > 0.0, delta, 0.0)
    return loss, grad


# ---------------------------------------------------------------------------
# Dynamic-programming kernel
#
# Cost-to-come over (speed index k, cumulative slowdown P) per step.  Speed
# index k means v = v_top - k*dv; P is the sum of k over past steps, which
# pins the position: x(m, P) = x0 - m*v_top*dt + unit*P with unit = dv*dt.
# Transitions k -> k' with |k - k'| <= 1 map one-to-one onto actions
# (action = k - k').  low_p[m] is the per-step lower bound on P (staying
# short of the stop line, staying behind the leader); the final step M must
# land at k = 0 with P <= p_cross_max (at or past the stop line).
# ---------------------------------------------------------------------------

_DP_INF = np.inf


def _dp_table_numpy(M, K, k0, low_p, p_cross_max, x0, vtop_dt, unit):
    cols = K * M + 1
    val = np.full((K + 1, cols), _DP_INF)
    val[k0, 0] = x0
    act = np.zeros((M + 1, K + 1, cols), dtype=np.int8)
    action_of = np.array([-1, 0, 1], dtype=np.int8)  # k_prev = k' - 1, k', k' + 1
    p_idx = np.arange(cols)
    for m in range(1, M + 1):
        base = x0 - m * vtop_dt
        stage = base + unit * p_idx if m < M else np.zeros(cols)
        lo = max(int(low_p[m]), 0)
        hi = min(K * m, p_cross_max) if m == M else K * m
        vnew = np.full((K + 1, cols), _DP_INF)
        k_range = range(K + 1) if m < M else (0,)
        for k2 in k_range:
            cands = np.full((3, cols), _DP_INF)
            for idx, k1 in enumerate((k2 - 1, k2, k2 + 1)):
                if 0 <= k1 <= K:
                    cands[idx] = val[k1]
            best = cands.min(axis=0)
            choice = cands.argmin(axis=0)
            p1_hi = min(K * (m - 1), cols - 1 - k2)
            if p1_hi < 0:
                continue
            sl = slice(0, p1_hi + 1)
            vnew[k2, k2:k2 + p1_hi + 1] = best[sl] + stage[k2:k2 + p1_hi + 1]
            act[m, k2, k2:k2 + p1_hi + 1] = action_of[choice[sl]]
            if lo > 0:
                vnew[k2, :lo] = _DP_INF
            if hi + 1 < cols:
                vnew[k2, hi + 1:] = _DP_INF
        val = vnew
    return val, act


def _dp_table_loops(M, K, k0, low_p, p_cross_max, x0, vtop_dt, unit):
    cols = K * M + 1
    val = np.full((K + 1, cols), _DP_INF)
    val[k0, 0] = x0
    act = np.zeros((M + 1, K + 1, cols), dtype=np.int8)
    for m in range(1, M + 1):
        base = x0 - m * vtop_dt
        lo = low_p[m]
        if lo < 0:
            lo = 0
        hi = K * m
        if m == M:
            if p_cross_max < hi:
                hi = p_cross_max
        vnew = np.full((K + 1, cols), _DP_INF)
        k_top = K if m < M else 0
        for k2 in range(k_top + 1):
            for p2 in range(max(lo, k2), hi + 1):
                p1 = p2 - k2
                if p1 > K * (m - 1):
                    continue
                best = _DP_INF
                besta = 0
                for k1 in (k2 - 1, k2, k2 + 1):
                    if k1 < 0 or k1 > K:
                        continue
                    c = val[k1, p1]
                    if c < best:
                        best = c
                        besta = k1 - k2
                if best < _DP_INF:
                    if m < M:
                        vnew[k2, p2] = best + (base + unit * p2)
                    else:
                        vnew[k2, p2] = best + 0.0
                    act[m, k2, p2] = besta
        val = vnew
    return val, act


# Select implementations for the public names.
if USE_NUMBA:
    mlp_values = njit(cache=True)(_mlp_values_impl)
    mlp_loss_grad = njit(cache=True)(_mlp_loss_grad_impl)
    dp_table = njit(cache=True)(_dp_table_loops)
else:
    mlp_values = _mlp_values_impl
    mlp_loss_grad = _mlp_loss_grad_impl
    dp_table = _dp_table_numpy


def warmup() -> None:
    """Trigger JIT compilation on toy shapes so timings exclude it."""
    if not USE_NUMBA:
        return
    dims = np.array([2, 3, 2], dtype=np.int64)
    w_off = np.array([0, 6], dtype=np.int64)
    b_off = np.array([12, 15], dtype=np.int64)
    flat = np.zeros(17)
    X = np.zeros((1, 2))
    mlp_values(flat, w_off, b_off, dims, X)
    mlp_loss_grad(flat, w_off, b_off, dims, X,
                  np.zeros(1, dtype=np.int64), np.zeros(1))
    dp_table(2, 1, 0, np.zeros(3, dtype=np.int64), 2, 1.0, 0.5, 0.25)
