"""Numba-accelerated inner loop for the support-gathered Sinkhorn batch.

Each pair's kernel slice is tiny (support x support), so one fused pass per
pair — gather, iterate, converge, evaluate — beats building batched
temporaries. Semantics mirror the numpy engine exactly: first convergence
check after one sweep then every ``check_every``, L-inf column-marginal
stopping, bilinear sharp value at feasibility and a feasibility-rounded value
otherwise. Falls back to numpy transparently when numba is unavailable.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is normally installed
    HAVE_NUMBA = False


if HAVE_NUMBA:

    @njit(cache=True, parallel=True)
    def gathered_sinkhorn(K, C, ii, jj, A, B, U, V, tol, max_iters, check_every):
        npairs, k = A.shape
        iters = np.zeros(npairs, dtype=np.int64)
        err = np.full(npairs, np.inf)
        bad = np.zeros(npairs, dtype=np.bool_)
        val = np.zeros(npairs)
        for t in prange(npairs):
            Ks = np.empty((k, k))
            Cs = np.empty((k, k))
            for a in range(k):
                ia = ii[t, a]
                for b in range(k):
                    jb = jj[t, b]
                    Ks[a, b] = K[ia, jb]
                    Cs[a, b] = C[ia, jb]
            u = U[t].copy()
            v = V[t].copy()
            done = 0
            viol = np.inf
            broken = False
            checks = 0
            while done < max_iters:
                # Graded early checks (1, 2, 3 sweeps), then every check_every.
                block = checks + 1 if checks < 3 else check_every
                checks += 1
                block = min(block, max_iters - done)
                for _ in range(block):
                    for b in range(k):
                        s = 0.0
                        for a in range(k):
                            s += Ks[a, b] * u[a]
                        v[b] = B[t, b] / s if s > 0.0 else (0.0 if B[t, b] == 0.0 else np.inf)
                    for a in range(k):
                        s = 0.0
                        for b in range(k):
                            s += Ks[a, b] * v[b]
                        u[a] = A[t, a] / s if s > 0.0 else (0.0 if A[t, a] == 0.0 else np.inf)
                done += block
                viol = 0.0
                for b in range(k):
                    s = 0.0
                    for a in range(k):
                        s += Ks[a, b] * u[a]
                    col = v[b] * s
                    d = abs(col - B[t, b])
                    if d > viol or np.isnan(d):
                        viol = d if not np.isnan(d) else np.inf
                finite = True
                for a in range(k):
                    if not (np.isfinite(u[a]) and np.isfinite(v[a])):
                        finite = False
                        break
                if not finite or np.isinf(viol):
                    broken = True
                    break
                if viol <= tol:
                    break
            iters[t] = done
            err[t] = viol
            if broken:
                bad[t] = True
                continue
            U[t] = u
            V[t] = v
            if viol <= tol:
                s = 0.0
                for a in range(k):
                    if u[a] == 0.0:
                        continue
                    for b in range(k):
                        s += u[a] * Ks[a, b] * v[b] * Cs[a, b]
                val[t] = s
            else:
                # Round the plan onto exact marginals before evaluating.
                plan = np.empty((k, k))
                for a in range(k):
                    for b in range(k):
                        plan[a, b] = u[a] * Ks[a, b] * v[b]
                for a in range(k):
                    r = 0.0
                    for b in range(k):
                        r += plan[a, b]
                    x = 1.0 if r <= 0.0 else min(A[t, a] / r, 1.0)
                    for b in range(k):
                        plan[a, b] *= x
                for b in range(k):
                    c = 0.0
                    for a in range(k):
                        c += plan[a, b]
                    y = 1.0 if c <= 0.0 else min(B[t, b] / c, 1.0)
                    for a in range(k):
                        plan[a, b] *= y
                ea = np.empty(k)
                eb = np.empty(k)
                sa = 0.0
                for a in range(k):
                    r = 0.0
                    for b in range(k):
                        r += plan[a, b]
                    ea[a] = A[t, a] - r
                    sa += ea[a]
                for b in range(k):
                    c = 0.0
                    for a in range(k):
                        c += plan[a, b]
                    eb[b] = B[t, b] - c
                if sa > 0.0:
                    for a in range(k):
                        for b in range(k):
                            plan[a, b] += ea[a] * eb[b] / sa
                s = 0.0
                for a in range(k):
                    for b in range(k):
                        s += plan[a, b] * Cs[a, b]
                val[t] = s
        return iters, err, bad, val

    @njit(cache=True, parallel=True)
    def log_sinkhorn_shared(C, A, B, F, G, lam, tol, max_iters, check_every, anneal):
        """Log-domain batch against one shared cost matrix.

        Mirrors the numpy engine: annealed initialization on cold starts,
        overrelaxed converging loop (theta 1.8) with divergence safeguards,
        and a feasibility-rounded sharp value. F, G are log potentials
        updated in place; returns (iters, err, val)."""
        npairs, n = A.shape
        iters = np.zeros(npairs, dtype=np.int64)
        err = np.full(npairs, np.inf)
        val = np.zeros(npairs)
        max_c = C.max()
        for t in prange(npairs):
            la = np.empty(n)
            lb = np.empty(n)
            for i in range(n):
                la[i] = np.log(A[t, i]) if A[t, i] > 0.0 else -np.inf
                lb[i] = np.log(B[t, i]) if B[t, i] > 0.0 else -np.inf
            f = F[t].copy()
            g = G[t].copy()
            count = 0

            if anneal:
                lam_s = max(max_c / 2.0, lam)
                while lam_s > lam * 1.0001:
                    for _ in range(5):
                        _log_sweep(C, la, lb, f, g, lam_s, 1.0)
                    count += 5
                    lam_s = max(lam_s / 2.0, lam)

            theta = 1.8
            best = np.inf
            viol = np.inf
            checks = 0
            while count < max_iters:
                block = checks + 1 if checks < 3 else check_every
                checks += 1
                block = min(block, max_iters - count)
                for _ in range(block):
                    _log_sweep(C, la, lb, f, g, lam, theta)
                count += block
                # column marginal violation
                viol = 0.0
                broken = False
                for j in range(n):
                    if lb[j] == -np.inf:
                        continue
                    m = -np.inf
                    for i in range(n):
                        z = (f[i] + g[j] - C[i, j]) / lam
                        if z > m:
                            m = z
                    s = 0.0
                    if m > -np.inf:
                        for i in range(n):
                            s += np.exp((f[i] + g[j] - C[i, j]) / lam - m)
                        s = np.exp(m) * s
                    d = abs(s - B[t, j])
                    if np.isnan(d):
                        broken = True
                        break
                    if d > viol:
                        viol = d
                for i in range(n):
                    if np.isnan(f[i]) or f[i] == np.inf or np.isnan(g[i]) or g[i] == np.inf:
                        broken = True
                if broken:
                    for i in range(n):
                        f[i] = 0.0
                        g[i] = 0.0
                    theta = 1.0
                    best = np.inf
                    viol = np.inf
                    continue
                if viol > 10.0 * best:
                    theta = 1.0
                if viol < best:
                    best = viol
                if viol <= tol:
                    break
            iters[t] = count
            err[t] = viol
            F[t] = f
            G[t] = g
            # rounded sharp value
            plan = np.empty((n, n))
            for i in range(n):
                for j in range(n):
                    z = f[i] + g[j] - C[i, j]
                    plan[i, j] = np.exp(z / lam) if z > -600.0 * lam else 0.0
            for i in range(n):
                r = 0.0
                for j in range(n):
                    r += plan[i, j]
                x = 1.0 if r <= 0.0 else min(A[t, i] / r, 1.0)
                for j in range(n):
                    plan[i, j] *= x
            for j in range(n):
                c = 0.0
                for i in range(n):
                    c += plan[i, j]
                y = 1.0 if c <= 0.0 else min(B[t, j] / c, 1.0)
                for i in range(n):
                    plan[i, j] *= y
            sa = 0.0
            ea = np.empty(n)
            eb = np.empty(n)
            for i in range(n):
                r = 0.0
                for j in range(n):
                    r += plan[i, j]
                ea[i] = A[t, i] - r
                sa += ea[i]
            for j in range(n):
                c = 0.0
                for i in range(n):
                    c += plan[i, j]
                eb[j] = B[t, j] - c
            s = 0.0
            for i in range(n):
                for j in range(n):
                    p = plan[i, j]
                    if sa > 0.0:
                        p += ea[i] * eb[j] / sa
                    s += p * C[i, j]
            val[t] = s
        return iters, err, val

    @njit(cache=True)
    def _log_sweep(C, la, lb, f, g, lam_s, theta):
        n = la.shape[0]
        for j in range(n):
            if lb[j] == -np.inf:
                g[j] = -np.inf
                continue
            m = -np.inf
            for i in range(n):
                z = (f[i] - C[i, j]) / lam_s
                if z > m:
                    m = z
            s = 0.0
            for i in range(n):
                s += np.exp((f[i] - C[i, j]) / lam_s - m)
            new = lam_s * (lb[j] - (m + np.log(s)))
            if theta == 1.0 or not np.isfinite(g[j]):
                g[j] = new
            else:
                g[j] = (1.0 - theta) * g[j] + theta * new
        for i in range(n):
            if la[i] == -np.inf:
                f[i] = -np.inf
                continue
            m = -np.inf
            for j in range(n):
                z = (g[j] - C[i, j]) / lam_s
                if z > m:
                    m = z
            s = 0.0
            for j in range(n):
                s += np.exp((g[j] - C[i, j]) / lam_s - m)
            new = lam_s * (la[i] - (m + np.log(s)))
            if theta == 1.0 or not np.isfinite(f[i]):
                f[i] = new
            else:
                f[i] = (1.0 - theta) * f[i] + theta * new

else:  # pragma: no cover

    def gathered_sinkhorn(*args, **kwargs):
        raise RuntimeError("numba unavailable")

    def log_sinkhorn_shared(*args, **kwargs):
        raise RuntimeError("numba unavailable")
