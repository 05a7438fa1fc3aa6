"""Compare the compiled and pure-Python kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Prints per-call wall time for the LSTM forward/backward sweep and the
d-separation reachability kernel, for every available backend.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from fansrl import kernels


def _time(fn, repeat):
    fn()  # warm-up
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best * 1e3


def _lstm_case(B, T, H, rng):
    xw = rng.normal(size=(B, T, 4 * H))
    wh = rng.normal(size=(H, 4 * H)) * 0.2
    h0 = np.zeros((B, H))
    c0 = np.zeros((B, H))
    keep = np.ones((B, T))
    dh = rng.normal(size=(B, T, H))
    return xw, wh, h0, c0, keep, dh


def _chain_dag(n, rng, p_edge=0.05):
    # random DAG in topological order, stored as parent/child CSR
    adj = np.triu(rng.random((n, n)) < p_edge, k=1)
    pa = [np.flatnonzero(adj[:, j]) for j in range(n)]
    ch = [np.flatnonzero(adj[i]) for i in range(n)]

    def csr(lists):
        ptr = np.zeros(n + 1, dtype=np.int64)
        ptr[1:] = np.cumsum([len(x) for x in lists])
        idx = np.concatenate(lists).astype(np.int64) if ptr[-1] else np.zeros(0, dtype=np.int64)
        return ptr, idx

    return csr(pa), csr(ch)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    impls = kernels.backends()
    print(f"backends: {', '.join(sorted(impls))} (active: {kernels.BACKEND})")

    print(f"\n{'case':<28}" + "".join(f"{name + ' ms':>16}" for name in sorted(impls)))
    for B, T, H in [(1, 50, 32), (16, 50, 32), (8, 150, 32)]:
        xw, wh, h0, c0, keep, dh = _lstm_case(B, T, H, rng)
        fwd, bwd = [], []
        for name in sorted(impls):
            k = impls[name]
            fwd.append(_time(lambda: k.lstm_forward(xw, wh, h0, c0, keep), args.repeat))
            _, cache = k.lstm_forward(xw, wh, h0, c0, keep)
            bwd.append(_time(lambda: k.lstm_backward(dh, wh, *cache, keep), args.repeat))
        print(f"{f'lstm fwd B={B} T={T} H={H}':<28}" + "".join(f"{v:16.3f}" for v in fwd))
        print(f"{f'lstm bwd B={B} T={T} H={H}':<28}" + "".join(f"{v:16.3f}" for v in bwd))

    for n in (200, 2000):
        (pp, pi), (cp, ci) = _chain_dag(n, rng, p_edge=4.0 / n)
        z = np.zeros(n, dtype=np.uint8)
        z[rng.choice(n, n // 10, replace=False)] = 1
        src = np.zeros(n, dtype=np.uint8)
        src[0] = 1
        z[0] = 0
        row = []
        for name in sorted(impls):
            k = impls[name]
            row.append(_time(lambda: k.dsep_reachable(n, pp, pi, cp, ci, src, z), args.repeat))
        print(f"{f'dsep reach n={n}':<28}" + "".join(f"{v:16.3f}" for v in row))


if __name__ == "__main__":
    main()
