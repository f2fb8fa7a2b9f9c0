# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled GRU sequence scan.

Same contract and gate convention as ``_scan_py``; the recurrence and the
per-step hidden-to-hidden products run as C loops so the scan does not pay
Python dispatch per timestep.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, tanh

cnp.import_array()


cdef inline double _sigmoid(double x) nogil:
    if x >= 0.0:
        return 1.0 / (1.0 + exp(-x))
    cdef double e = exp(x)
    return e / (1.0 + e)


cdef void _mm_nn_acc(const double[:, ::1] a, const double[:, ::1] b,
                     double[:, ::1] out) nogil:
    # out += a @ b
    cdef Py_ssize_t m = a.shape[0], k = a.shape[1], n = b.shape[1]
    cdef Py_ssize_t i, j, p
    cdef double aik
    for i in range(m):
        for p in range(k):
            aik = a[i, p]
            if aik != 0.0:
                for j in range(n):
                    out[i, j] += aik * b[p, j]


cdef void _mm_nt_acc(const double[:, ::1] a, const double[:, ::1] b,
                     double[:, ::1] out) nogil:
    # out += a @ b.T
    cdef Py_ssize_t m = a.shape[0], k = a.shape[1], n = b.shape[0]
    cdef Py_ssize_t i, j, p
    cdef double s
    for i in range(m):
        for j in range(n):
            s = 0.0
            for p in range(k):
                s += a[i, p] * b[j, p]
            out[i, j] += s


cdef void _mm_tn_acc(const double[:, ::1] a, const double[:, ::1] b,
                     double[:, ::1] out) nogil:
    # out += a.T @ b
    cdef Py_ssize_t k = a.shape[0], m = a.shape[1], n = b.shape[1]
    cdef Py_ssize_t i, j, p
    cdef double api
    for p in range(k):
        for i in range(m):
            api = a[p, i]
            if api != 0.0:
                for j in range(n):
                    out[i, j] += api * b[p, j]


def gru_forward(xg, uz, ur, uh, h0):
    xg = np.ascontiguousarray(xg, dtype=np.float64)
    cdef Py_ssize_t t_steps = xg.shape[0]
    cdef Py_ssize_t batch = xg.shape[1]
    cdef Py_ssize_t hidden = xg.shape[2] // 3

    h_all_arr = np.empty((t_steps, batch, hidden))
    z_all_arr = np.empty((t_steps, batch, hidden))
    r_all_arr = np.empty((t_steps, batch, hidden))
    c_all_arr = np.empty((t_steps, batch, hidden))

    cdef double[:, :, ::1] xg_v = xg
    cdef double[:, ::1] uz_v = np.ascontiguousarray(uz, dtype=np.float64)
    cdef double[:, ::1] ur_v = np.ascontiguousarray(ur, dtype=np.float64)
    cdef double[:, ::1] uh_v = np.ascontiguousarray(uh, dtype=np.float64)
    cdef double[:, ::1] h0_v = np.ascontiguousarray(h0, dtype=np.float64)
    cdef double[:, :, ::1] h_all = h_all_arr
    cdef double[:, :, ::1] z_all = z_all_arr
    cdef double[:, :, ::1] r_all = r_all_arr
    cdef double[:, :, ::1] c_all = c_all_arr

    cdef double[:, ::1] pre_z = np.empty((batch, hidden))
    cdef double[:, ::1] pre_r = np.empty((batch, hidden))
    cdef double[:, ::1] pre_c = np.empty((batch, hidden))
    cdef double[:, ::1] rh = np.empty((batch, hidden))
    cdef double[:, ::1] h_prev

    cdef Py_ssize_t t, b, j
    cdef double z, r, c, hp

    with nogil:
        h_prev = h0_v
        for t in range(t_steps):
            for b in range(batch):
                for j in range(hidden):
                    pre_z[b, j] = xg_v[t, b, j]
                    pre_r[b, j] = xg_v[t, b, hidden + j]
                    pre_c[b, j] = xg_v[t, b, 2 * hidden + j]
            _mm_nn_acc(h_prev, uz_v, pre_z)
            _mm_nn_acc(h_prev, ur_v, pre_r)
            for b in range(batch):
                for j in range(hidden):
                    z = _sigmoid(pre_z[b, j])
                    r = _sigmoid(pre_r[b, j])
                    z_all[t, b, j] = z
                    r_all[t, b, j] = r
                    rh[b, j] = r * h_prev[b, j]
            _mm_nn_acc(rh, uh_v, pre_c)
            for b in range(batch):
                for j in range(hidden):
                    c = tanh(pre_c[b, j])
                    hp = h_prev[b, j]
                    c_all[t, b, j] = c
                    h_all[t, b, j] = (1.0 - z_all[t, b, j]) * hp \
                        + z_all[t, b, j] * c
            h_prev = h_all[t]

    return h_all_arr, (z_all_arr, r_all_arr, c_all_arr)


def gru_backward(dh_all, xg, uz, ur, uh, h0, h_all, cache):
    z_all_arr, r_all_arr, c_all_arr = cache
    xg = np.ascontiguousarray(xg, dtype=np.float64)
    cdef Py_ssize_t t_steps = xg.shape[0]
    cdef Py_ssize_t batch = xg.shape[1]
    cdef Py_ssize_t hidden = xg.shape[2] // 3

    dxg_arr = np.empty((t_steps, batch, 3 * hidden))
    duz_arr = np.zeros((hidden, hidden))
    dur_arr = np.zeros((hidden, hidden))
    duh_arr = np.zeros((hidden, hidden))
    carry_arr = np.zeros((batch, hidden))

    cdef double[:, :, ::1] dh_all_v = np.ascontiguousarray(dh_all, dtype=np.float64)
    cdef double[:, :, ::1] h_all_v = np.ascontiguousarray(h_all, dtype=np.float64)
    cdef double[:, :, ::1] z_all = np.ascontiguousarray(z_all_arr, dtype=np.float64)
    cdef double[:, :, ::1] r_all = np.ascontiguousarray(r_all_arr, dtype=np.float64)
    cdef double[:, :, ::1] c_all = np.ascontiguousarray(c_all_arr, dtype=np.float64)
    cdef double[:, ::1] uz_v = np.ascontiguousarray(uz, dtype=np.float64)
    cdef double[:, ::1] ur_v = np.ascontiguousarray(ur, dtype=np.float64)
    cdef double[:, ::1] uh_v = np.ascontiguousarray(uh, dtype=np.float64)
    cdef double[:, ::1] h0_v = np.ascontiguousarray(h0, dtype=np.float64)
    cdef double[:, :, ::1] dxg = dxg_arr
    cdef double[:, ::1] duz = duz_arr
    cdef double[:, ::1] dur = dur_arr
    cdef double[:, ::1] duh = duh_arr
    cdef double[:, ::1] carry = carry_arr

    cdef double[:, ::1] dz_pre = np.empty((batch, hidden))
    cdef double[:, ::1] dr_pre = np.empty((batch, hidden))
    cdef double[:, ::1] dc_pre = np.empty((batch, hidden))
    cdef double[:, ::1] dh = np.empty((batch, hidden))
    cdef double[:, ::1] rh = np.empty((batch, hidden))
    cdef double[:, ::1] drh = np.empty((batch, hidden))
    cdef double[:, ::1] h_prev

    cdef Py_ssize_t t, b, j
    cdef double z, r, c, hp, dhv, dz, dc, dcp, dr

    with nogil:
        for t in range(t_steps - 1, -1, -1):
            if t > 0:
                h_prev = h_all_v[t - 1]
            else:
                h_prev = h0_v
            for b in range(batch):
                for j in range(hidden):
                    z = z_all[t, b, j]
                    c = c_all[t, b, j]
                    r = r_all[t, b, j]
                    hp = h_prev[b, j]
                    dhv = dh_all_v[t, b, j] + carry[b, j]
                    dz = dhv * (c - hp)
                    dc = dhv * z
                    dcp = dc * (1.0 - c * c)
                    dc_pre[b, j] = dcp
                    dz_pre[b, j] = dz * z * (1.0 - z)
                    dh[b, j] = dhv * (1.0 - z)
                    rh[b, j] = r * hp
                    drh[b, j] = 0.0
            _mm_nt_acc(dc_pre, uh_v, drh)
            _mm_tn_acc(rh, dc_pre, duh)
            for b in range(batch):
                for j in range(hidden):
                    r = r_all[t, b, j]
                    hp = h_prev[b, j]
                    dr = drh[b, j] * hp
                    dr_pre[b, j] = dr * r * (1.0 - r)
                    dh[b, j] += drh[b, j] * r
            _mm_tn_acc(h_prev, dz_pre, duz)
            _mm_tn_acc(h_prev, dr_pre, dur)
            _mm_nt_acc(dz_pre, uz_v, dh)
            _mm_nt_acc(dr_pre, ur_v, dh)
            for b in range(batch):
                for j in range(hidden):
                    dxg[t, b, j] = dz_pre[b, j]
                    dxg[t, b, hidden + j] = dr_pre[b, j]
                    dxg[t, b, 2 * hidden + j] = dc_pre[b, j]
                    carry[b, j] = dh[b, j]

    return dxg_arr, duz_arr, dur_arr, duh_arr, carry_arr
