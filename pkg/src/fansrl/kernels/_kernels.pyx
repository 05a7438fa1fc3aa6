# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: whole-sequence LSTM forward/backward and d-separation
reachability. Semantics mirror ``_reference.py`` line for line."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, tanh
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef void _activate(double* z, int B, int H) noexcept nogil:
    # in place: sigmoid on the i, f, o blocks and tanh on g, row by row
    cdef int b, j
    cdef double* row
    for b in range(B):
        row = z + b * 4 * H
        for j in range(2 * H):
            row[j] = 1.0 / (1.0 + exp(-row[j]))
        for j in range(2 * H, 3 * H):
            row[j] = tanh(row[j])
        for j in range(3 * H, 4 * H):
            row[j] = 1.0 / (1.0 + exp(-row[j]))


cdef void _tanh_into(const double* src, double* dst, int n) noexcept nogil:
    cdef int j
    for j in range(n):
        dst[j] = tanh(src[j])


def lstm_forward(double[:, :, ::1] xw, double[:, ::1] wh, double[:, ::1] h0,
                 double[:, ::1] c0, double[:, ::1] keep):
    cdef int B = xw.shape[0], T = xw.shape[1], H4 = xw.shape[2]
    cdef int H = H4 // 4
    hs_a = np.empty((B, T, H))
    cs_a = np.empty((B, T, H))
    gates_a = np.empty((B, T, H4))
    hprev_a = np.empty((B, T, H))
    cprev_a = np.empty((B, T, H))
    h_a = np.array(h0, dtype=np.float64, order="C")
    c_a = np.array(c0, dtype=np.float64, order="C")
    z_a = np.empty((B, H4))
    tcs_a = np.empty((B, H))
    cdef double[:, :, ::1] hs = hs_a, cs = cs_a, gates = gates_a
    cdef double[:, :, ::1] hprev = hprev_a, cprev = cprev_a
    cdef double[:, ::1] h = h_a, c = c_a, z = z_a, tcs = tcs_a
    cdef int b, t, j
    cdef double k, ig, fg, gg, og, cn
    cdef char nn = b'N'
    cdef double one = 1.0
    for t in range(T):
        for b in range(B):
            k = keep[b, t]
            for j in range(H):
                h[b, j] *= k
                c[b, j] *= k
                hprev[b, t, j] = h[b, j]
                cprev[b, t, j] = c[b, j]
            for j in range(H4):
                z[b, j] = xw[b, t, j]
        if H > 0 and B > 0:
            # z (B x 4H) += h (B x H) @ wh (H x 4H), in column-major terms
            dgemm(&nn, &nn, &H4, &B, &H, &one, &wh[0, 0], &H4, &h[0, 0], &H,
                  &one, &z[0, 0], &H4)
        _activate(&z[0, 0], B, H)
        for b in range(B):
            for j in range(H):
                ig = z[b, j]
                fg = z[b, H + j]
                gg = z[b, 2 * H + j]
                og = z[b, 3 * H + j]
                cn = fg * c[b, j] + ig * gg
                c[b, j] = cn
                cs[b, t, j] = cn
            for j in range(H4):
                gates[b, t, j] = z[b, j]
        _tanh_into(&c[0, 0], &tcs[0, 0], B * H)
        for b in range(B):
            for j in range(H):
                h[b, j] = z[b, 3 * H + j] * tcs[b, j]
                hs[b, t, j] = h[b, j]
    return hs_a, (gates_a, cs_a, hprev_a, cprev_a)


def lstm_backward(double[:, :, ::1] dhs, double[:, ::1] wh, double[:, :, ::1] gates,
                  double[:, :, ::1] cs, double[:, :, ::1] hprev,
                  double[:, :, ::1] cprev, double[:, ::1] keep):
    cdef int B = dhs.shape[0], T = dhs.shape[1], H = dhs.shape[2]
    cdef int H4 = 4 * H
    dxw_a = np.empty((B, T, H4))
    dwh_a = np.zeros((H, H4))
    dh_next_a = np.zeros((B, H))
    dc_next_a = np.zeros((B, H))
    dz_a = np.empty((B, H4))
    hp_a = np.empty((B, H))
    dhp_a = np.empty((B, H))
    cdef double[:, :, ::1] dxw = dxw_a
    cdef double[:, ::1] dwh = dwh_a, dh_next = dh_next_a, dc_next = dc_next_a
    cdef double[:, ::1] dz = dz_a, hp = hp_a, dhp = dhp_a
    cdef int b, t, j
    cdef double ig, fg, gg, og, tc, dh, dc, k
    cdef char nn = b'N', tt = b'T'
    cdef double one = 1.0, zero = 0.0
    for t in range(T - 1, -1, -1):
        for b in range(B):
            for j in range(H):
                ig = gates[b, t, j]
                fg = gates[b, t, H + j]
                gg = gates[b, t, 2 * H + j]
                og = gates[b, t, 3 * H + j]
                tc = tanh(cs[b, t, j])
                dh = dhs[b, t, j] + dh_next[b, j]
                dc = dc_next[b, j] + dh * og * (1.0 - tc * tc)
                dz[b, j] = dc * gg * ig * (1.0 - ig)
                dz[b, H + j] = dc * cprev[b, t, j] * fg * (1.0 - fg)
                dz[b, 2 * H + j] = dc * ig * (1.0 - gg * gg)
                dz[b, 3 * H + j] = dh * tc * og * (1.0 - og)
                dc_next[b, j] = dc * fg
                hp[b, j] = hprev[b, t, j]
            for j in range(H4):
                dxw[b, t, j] = dz[b, j]
        if H > 0 and B > 0:
            # dwh (H x 4H) += hp^T (H x B) @ dz (B x 4H)
            dgemm(&nn, &tt, &H4, &H, &B, &one, &dz[0, 0], &H4, &hp[0, 0], &H,
                  &one, &dwh[0, 0], &H4)
            # dhp (B x H) = dz (B x 4H) @ wh^T (4H x H)
            dgemm(&tt, &nn, &H, &B, &H4, &one, &wh[0, 0], &H4, &dz[0, 0], &H4,
                  &zero, &dhp[0, 0], &H)
        for b in range(B):
            k = keep[b, t]
            for j in range(H):
                dh_next[b, j] = dhp[b, j] * k
                dc_next[b, j] *= k
    return dxw_a, dwh_a, dh_next_a, dc_next_a


def dsep_reachable(int n, const long[::1] pa_ptr, const long[::1] pa_idx,
                   const long[::1] ch_ptr, const long[::1] ch_idx,
                   const unsigned char[::1] source, const unsigned char[::1] z):
    anc_a = np.zeros(n, dtype=np.uint8)
    out_a = np.zeros(n, dtype=np.uint8)
    visited_a = np.zeros(2 * n, dtype=np.uint8)
    # each node is pushed at most once per incoming edge and direction
    cdef long cap = 2 * (pa_idx.shape[0] + ch_idx.shape[0]) + 2 * n + 1
    stack_a = np.empty(cap, dtype=np.int64)
    cdef unsigned char[::1] anc = anc_a, out = out_a, visited = visited_a
    cdef long[::1] stack = stack_a
    cdef long top = 0, v, d, e, s
    for v in range(n):
        if z[v]:
            stack[top] = v
            top += 1
    while top > 0:
        top -= 1
        v = stack[top]
        if anc[v]:
            continue
        anc[v] = 1
        for e in range(pa_ptr[v], pa_ptr[v + 1]):
            if not anc[pa_idx[e]]:
                stack[top] = pa_idx[e]
                top += 1
    # encode state as 2*v + d; d=0 arrived from child, d=1 from parent
    for v in range(n):
        if source[v]:
            stack[top] = 2 * v
            top += 1
    while top > 0:
        top -= 1
        s = stack[top]
        if visited[s]:
            continue
        visited[s] = 1
        v = s // 2
        d = s % 2
        if not z[v] and not source[v]:
            out[v] = 1
        if d == 0:
            if z[v]:
                continue
            for e in range(pa_ptr[v], pa_ptr[v + 1]):
                if not visited[2 * pa_idx[e]]:
                    stack[top] = 2 * pa_idx[e]
                    top += 1
            for e in range(ch_ptr[v], ch_ptr[v + 1]):
                if not visited[2 * ch_idx[e] + 1]:
                    stack[top] = 2 * ch_idx[e] + 1
                    top += 1
        else:
            if not z[v]:
                for e in range(ch_ptr[v], ch_ptr[v + 1]):
                    if not visited[2 * ch_idx[e] + 1]:
                        stack[top] = 2 * ch_idx[e] + 1
                        top += 1
            if anc[v]:
                for e in range(pa_ptr[v], pa_ptr[v + 1]):
                    if not visited[2 * pa_idx[e]]:
                        stack[top] = 2 * pa_idx[e]
                        top += 1
    return out_a
