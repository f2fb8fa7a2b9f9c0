"""NumPy reference implementation of the GRU sequence scan.

Semantically identical to the compiled kernel in ``_scan_cy.pyx``; used
when the extension is unavailable or explicitly requested via
``THREATLENS_KERNEL=python``.

Gate convention (biases folded into the input projections ``xg``):

    z_t = sigmoid(xg_z[t] + h_{t-1} @ U_z)
    r_t = sigmoid(xg_r[t] + h_{t-1} @ U_r)
    c_t = tanh(xg_c[t] + (r_t * h_{t-1}) @ U_h)
    h_t = (1 - z_t) * h_{t-1} + z_t * c_t
"""

from __future__ import annotations

import numpy as np


def _sigmoid(x: np.ndarray) -> np.ndarray:
    pos = x >= 0
    e = np.exp(-np.abs(x))
    return np.where(pos, 1.0 / (1.0 + e), e / (1.0 + e))


def gru_forward(xg: np.ndarray, uz: np.ndarray, ur: np.ndarray,
                uh: np.ndarray, h0: np.ndarray):
    """Scan over ``xg`` of shape [T, B, 3H]; returns (h_all, cache).

    ``h_all`` is [T, B, H]; cache holds the gate activations needed by
    :func:`gru_backward`.
    """
    t_steps, batch, three_h = xg.shape
    hidden = three_h // 3
    h_all = np.empty((t_steps, batch, hidden))
    z_all = np.empty_like(h_all)
    r_all = np.empty_like(h_all)
    c_all = np.empty_like(h_all)
    h_prev = h0
    for t in range(t_steps):
        z = _sigmoid(xg[t, :, :hidden] + h_prev @ uz)
        r = _sigmoid(xg[t, :, hidden:2 * hidden] + h_prev @ ur)
        c = np.tanh(xg[t, :, 2 * hidden:] + (r * h_prev) @ uh)
        h_prev = (1.0 - z) * h_prev + z * c
        z_all[t] = z
        r_all[t] = r
        c_all[t] = c
        h_all[t] = h_prev
    return h_all, (z_all, r_all, c_all)


def gru_backward(dh_all: np.ndarray, xg: np.ndarray, uz: np.ndarray,
                 ur: np.ndarray, uh: np.ndarray, h0: np.ndarray,
                 h_all: np.ndarray, cache):
    """Backward pass of the scan.

    Returns (dxg, duz, dur, duh, dh0) matching the forward inputs.
    """
    z_all, r_all, c_all = cache
    t_steps, batch, three_h = xg.shape
    hidden = three_h // 3
    dxg = np.empty_like(xg)
    duz = np.zeros_like(uz)
    dur = np.zeros_like(ur)
    duh = np.zeros_like(uh)
    carry = np.zeros((batch, hidden))
    for t in range(t_steps - 1, -1, -1):
        h_prev = h_all[t - 1] if t > 0 else h0
        z, r, c = z_all[t], r_all[t], c_all[t]
        dh = dh_all[t] + carry
        dz = dh * (c - h_prev)
        dc = dh * z
        dh_prev = dh * (1.0 - z)
        dc_pre = dc * (1.0 - c * c)
        drh = dc_pre @ uh.T
        duh += (r * h_prev).T @ dc_pre
        dr = drh * h_prev
        dh_prev += drh * r
        dz_pre = dz * z * (1.0 - z)
        dr_pre = dr * r * (1.0 - r)
        duz += h_prev.T @ dz_pre
        dur += h_prev.T @ dr_pre
        dh_prev += dz_pre @ uz.T
        dh_prev += dr_pre @ ur.T
        dxg[t, :, :hidden] = dz_pre
        dxg[t, :, hidden:2 * hidden] = dr_pre
        dxg[t, :, 2 * hidden:] = dc_pre
        carry = dh_prev
    return dxg, duz, dur, duh, carry
