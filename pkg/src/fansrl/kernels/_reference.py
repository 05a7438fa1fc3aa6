"""Pure numpy versions of the hot kernels.

These are the fallback when the compiled extension is unavailable, and the
reference the compiled versions are tested against. Signatures and outputs
match ``_kernels.pyx`` exactly.
"""

from __future__ import annotations

import numpy as np


def _sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def lstm_forward(xw, wh, h0, c0, keep):
    """Run an LSTM over a whole sequence.

    xw:   (B, T, 4H) input projections with bias already added, gate order i, f, g, o
    wh:   (H, 4H) recurrent weights
    h0, c0: (B, H)
    keep: (B, T) multiplier applied to the carried state before step t (0 resets)

    Returns hs (B, T, H) and the cache (gates, cs, hprev, cprev) needed by
    lstm_backward. ``gates`` holds post-activation values.
    """
    B, T, H4 = xw.shape
    H = H4 // 4
    hs = np.empty((B, T, H))
    cs = np.empty((B, T, H))
    gates = np.empty((B, T, H4))
    hprev = np.empty((B, T, H))
    cprev = np.empty((B, T, H))
    h = h0
    c = c0
    for t in range(T):
        k = keep[:, t:t + 1]
        h = h * k
        c = c * k
        hprev[:, t] = h
        cprev[:, t] = c
        z = xw[:, t] + h @ wh
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = _sigmoid(z[:, 3 * H:])
        c = f * c + i * g
        h = o * np.tanh(c)
        gates[:, t, :H] = i
        gates[:, t, H:2 * H] = f
        gates[:, t, 2 * H:3 * H] = g
        gates[:, t, 3 * H:] = o
        cs[:, t] = c
        hs[:, t] = h
    return hs, (gates, cs, hprev, cprev)


def lstm_backward(dhs, wh, gates, cs, hprev, cprev, keep):
    """Backward pass of lstm_forward.

    Returns (dxw, dwh, dh0, dc0).
    """
    B, T, H = dhs.shape
    dxw = np.empty((B, T, 4 * H))
    dwh = np.zeros_like(wh)
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        i = gates[:, t, :H]
        f = gates[:, t, H:2 * H]
        g = gates[:, t, 2 * H:3 * H]
        o = gates[:, t, 3 * H:]
        tc = np.tanh(cs[:, t])
        dh = dhs[:, t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz = dxw[:, t]
        dz[:, :H] = dc * g * i * (1.0 - i)
        dz[:, H:2 * H] = dc * cprev[:, t] * f * (1.0 - f)
        dz[:, 2 * H:3 * H] = dc * i * (1.0 - g * g)
        dz[:, 3 * H:] = dh * tc * o * (1.0 - o)
        dwh += hprev[:, t].T @ dz
        k = keep[:, t:t + 1]
        dh_next = (dz @ wh.T) * k
        dc_next = (dc * f) * k
    return dxw, dwh, dh_next, dc_next


def dsep_reachable(n, pa_ptr, pa_idx, ch_ptr, ch_idx, source, z):
    """Nodes reachable from ``source`` along trails active given ``z``.

    Graph in CSR form: parents of v are pa_idx[pa_ptr[v]:pa_ptr[v+1]], same
    for children. ``source`` and ``z`` are uint8 membership arrays of length
    n. Returns a uint8 array; source nodes themselves are not marked.

    Two-phase reachability: first mark ancestors of z (a collider is open iff
    it is one), then walk (node, direction) states.
    """
    anc = np.zeros(n, dtype=np.uint8)
    stack = [int(v) for v in np.flatnonzero(z)]
    while stack:
        v = stack.pop()
        if anc[v]:
            continue
        anc[v] = 1
        for u in pa_idx[pa_ptr[v]:pa_ptr[v + 1]]:
            if not anc[u]:
                stack.append(int(u))

    # direction 0: arrived from a child (moving up); 1: arrived from a parent
    visited = np.zeros((n, 2), dtype=np.uint8)
    out = np.zeros(n, dtype=np.uint8)
    stack = [(int(v), 0) for v in np.flatnonzero(source)]
    while stack:
        v, d = stack.pop()
        if visited[v, d]:
            continue
        visited[v, d] = 1
        if not z[v] and not source[v]:
            out[v] = 1
        if d == 0:
            if z[v]:
                continue
            for u in pa_idx[pa_ptr[v]:pa_ptr[v + 1]]:
                stack.append((int(u), 0))
            for u in ch_idx[ch_ptr[v]:ch_ptr[v + 1]]:
                stack.append((int(u), 1))
        else:
            if not z[v]:
                for u in ch_idx[ch_ptr[v]:ch_ptr[v + 1]]:
                    stack.append((int(u), 1))
            if anc[v]:
                for u in pa_idx[pa_ptr[v]:pa_ptr[v + 1]]:
                    stack.append((int(u), 0))
    return out
