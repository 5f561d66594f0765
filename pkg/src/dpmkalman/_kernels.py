"""Hot numeric kernels shared by the filter, smoother and samplers.

Every function here is written in a nopython-compatible numpy subset and is
JIT-compiled with numba unless the environment variable ``DPMKALMAN_NUMBA``
is set to ``0`` (or numba is unavailable), in which case the same source
runs as plain numpy. Both paths execute identical code, so results agree to
the last bit given the same inputs; ``benchmarks/kernel_bench.py`` compares
their speed.

Conventions: time-indexed arrays have length T+1 and are indexed by t=1..T
(slot 0 is the t=0 prior where meaningful, unused otherwise). Kernels report
failures through status codes instead of exceptions; callers translate.
"""

from __future__ import annotations

import os

import numpy as np

NUMBA_ENV = "DPMKALMAN_NUMBA"

_want_numba = os.environ.get(NUMBA_ENV, "1") != "0"
if _want_numba:
    try:
        from numba import njit

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover
        NUMBA_ENABLED = False
else:
    NUMBA_ENABLED = False


def maybe_jit(func):
    """Apply @njit when numba acceleration is on, else return func unchanged."""
    if NUMBA_ENABLED:
        return njit(cache=True, fastmath=False)(func)
    return func


LOG2PI = np.log(2.0 * np.pi)


@maybe_jit
def try_cholesky(a, out):
    """Lower Cholesky of a into out; returns False if a is not PD."""
    n = a.shape[0]
    for j in range(n):
        s = a[j, j]
        for k in range(j):
            s -= out[j, k] * out[j, k]
        if s <= 0.0:
            return False
        d = np.sqrt(s)
        out[j, j] = d
        for i in range(j + 1, n):
            s = a[i, j]
            for k in range(j):
                s -= out[i, k] * out[j, k]
            out[i, j] = s / d
    return True


@maybe_jit
def cholesky_jittered(a):
    """Cholesky with diagonal jitter escalation for nearly singular PSD input.

    Jitter starts at 1e-12 * trace and is multiplied by 10 up to 1e-6 * trace.
    Returns (L, ok). ok=False when even the largest jitter fails.
    """
    n = a.shape[0]
    out = np.zeros((n, n))
    if try_cholesky(a, out):
        return out, True
    tr = 0.0
    for i in range(n):
        tr += a[i, i]
    if tr <= 0.0:
        return out, False
    jitter = 1e-12 * tr
    top = 1e-6 * tr
    while jitter <= top * (1.0 + 1e-12):
        aj = a.copy()
        for i in range(n):
            aj[i, i] += jitter
        out[:, :] = 0.0
        if try_cholesky(aj, out):
            return out, True
        jitter *= 10.0
    return out, False


@maybe_jit
def psd_factor(a, rel_tol):
    """Pivot-free PSD Cholesky: zero columns where the pivot falls below tol.

    Suitable for rank-deficient covariances (e.g. an exactly zero matrix,
    giving a zero factor). Returns L with a = L @ L.T up to the tolerance.
    """
    n = a.shape[0]
    scale = 0.0
    for i in range(n):
        if a[i, i] > scale:
            scale = a[i, i]
    tol = rel_tol * max(scale, 1e-300)
    out = np.zeros((n, n))
    for j in range(n):
        s = a[j, j]
        for k in range(j):
            s -= out[j, k] * out[j, k]
        if s <= tol:
            continue  # column stays zero
        d = np.sqrt(s)
        out[j, j] = d
        for i in range(j + 1, n):
            s = a[i, j]
            for k in range(j):
                s -= out[i, k] * out[j, k]
            out[i, j] = s / d
    return out


@maybe_jit
def solve_lower(L, b):
    """Forward substitution L y = b."""
    n = L.shape[0]
    y = np.zeros(n)
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * y[k]
        y[i] = s / L[i, i]
    return y


@maybe_jit
def chol_solve(L, b):
    """Solve (L L^T) x = b."""
    n = L.shape[0]
    y = solve_lower(L, b)
    x = np.zeros(n)
    for i in range(n - 1, -1, -1):
        s = y[i]
        for k in range(i + 1, n):
            s -= L[k, i] * x[k]
        x[i] = s / L[i, i]
    return x


@maybe_jit
def mvn_logpdf_core(x, mean, cov):
    """log N(x; mean, cov) with jittered Cholesky. Returns (value, ok)."""
    d = x.shape[0]
    L, ok = cholesky_jittered(cov)
    if not ok:
        return 0.0, False
    y = solve_lower(L, x - mean)
    logdet = 0.0
    quad = 0.0
    for i in range(d):
        logdet += np.log(L[i, i])
        quad += y[i] * y[i]
    return -0.5 * (d * LOG2PI + quad) - logdet, True


@maybe_jit
def kalman_step_core(m, P, F, shift, GSvG, H, mu_w, Sw, z):
    """One Kalman predict/update with shifted means.

    shift = C u + G mu_v enters the state prediction, mu_w the observation.
    Joseph-form covariance update. Returns
    (m_new, P_new, m_pred, P_pred, zhat, S, loglik, ok).
    """
    n = m.shape[0]
    p = z.shape[0]
    m_pred = F @ m + shift
    P_pred = F @ P @ F.T + GSvG
    P_pred = 0.5 * (P_pred + P_pred.T)
    zhat = H @ m_pred + mu_w
    S = H @ P_pred @ H.T + Sw
    S = 0.5 * (S + S.T)
    Ls, ok = cholesky_jittered(S)
    if not ok:
        return m_pred, P_pred, m_pred, P_pred, zhat, S, 0.0, False
    innov = z - zhat
    y = solve_lower(Ls, innov)
    logdet = 0.0
    quad = 0.0
    for i in range(p):
        logdet += np.log(Ls[i, i])
        quad += y[i] * y[i]
    ll = -0.5 * (p * LOG2PI + quad) - logdet
    # gain K = P_pred H^T S^-1, column by column through the factor
    PHt = P_pred @ H.T
    K = np.zeros((n, p))
    for i in range(n):
        K[i, :] = chol_solve(Ls, PHt[i, :])
    m_new = m_pred + K @ innov
    ImKH = np.eye(n) - K @ H
    P_new = ImKH @ P_pred @ ImKH.T + K @ Sw @ K.T
    P_new = 0.5 * (P_new + P_new.T)
    return m_new, P_new, m_pred, P_pred, zhat, S, ll, True


@maybe_jit
def filter_pass(F, shift, GSvG, H, mu_w, Sw, zs, m0, P0):
    """Kalman filter over t=1..T with stacked per-t matrices.

    All per-t inputs are stacked with slot 0 unused. Returns filtered and
    predicted moments plus per-t log-likelihood increments and the first
    failing time index (0 when all steps succeed).
    """
    T = zs.shape[0] - 1
    n = m0.shape[0]
    p = zs.shape[1]
    ms = np.zeros((T + 1, n))
    Ps = np.zeros((T + 1, n, n))
    mpreds = np.zeros((T + 1, n))
    Ppreds = np.zeros((T + 1, n, n))
    zhats = np.zeros((T + 1, p))
    lls = np.zeros(T + 1)
    ms[0] = m0
    Ps[0] = P0
    for t in range(1, T + 1):
        m, P, mp, Pp, zh, S, ll, ok = kalman_step_core(
            ms[t - 1], Ps[t - 1], F[t], shift[t], GSvG[t], H[t], mu_w[t], Sw[t], zs[t]
        )
        if not ok:
            return ms, Ps, mpreds, Ppreds, zhats, lls, t
        ms[t] = m
        Ps[t] = P
        mpreds[t] = mp
        Ppreds[t] = Pp
        zhats[t] = zh
        lls[t] = ll
    return ms, Ps, mpreds, Ppreds, zhats, lls, 0


@maybe_jit
def rts_pass(F, ms, Ps, mpreds, Ppreds):
    """RTS backward smoothing given stored filter output.

    Uses a pseudo-inverse of the one-step predicted covariance so that
    degenerate (zero process noise) models smooth exactly.
    """
    T = ms.shape[0] - 1
    n = ms.shape[1]
    sms = np.zeros_like(ms)
    sPs = np.zeros_like(Ps)
    sms[T] = ms[T]
    sPs[T] = Ps[T]
    for t in range(T - 1, -1, -1):
        Pp = Ppreds[t + 1]
        C = Ps[t] @ F[t + 1].T
        J = C @ np.linalg.pinv(Pp)
        sms[t] = ms[t] + J @ (sms[t + 1] - mpreds[t + 1])
        sP = Ps[t] + J @ (sPs[t + 1] - Pp) @ J.T
        sPs[t] = 0.5 * (sP + sP.T)
    return sms, sPs


@maybe_jit
def backward_pass(F, shift, B, H, mu_w, Sw, zs):
    """Backward information filter for p(z_{t+1:T} | x_t).

    B[t] = G_t chol(Sigma_v_t)^T (zero columns for degenerate noise).
    Returns (Mpre, vpre, Mpost, vpost, bad_t) where for each t
      Mpre[t], vpre[t]  carry the information pair of p(z_{t+1:T}|x_t)
      Mpost[t], vpost[t] carry the pair of p(z_{t:T}|x_t)
    Mpre[T] = 0, and bad_t is the first t with singular Sw (0 if none).
    """
    T = zs.shape[0] - 1
    n = F.shape[1]
    nv = B.shape[2]
    Mpre = np.zeros((T + 1, n, n))
    vpre = np.zeros((T + 1, n))
    Mpost = np.zeros((T + 1, n, n))
    vpost = np.zeros((T + 1, n))
    # init at T from the observation there
    Lw = np.zeros_like(Sw[T])
    okw = try_cholesky(Sw[T], Lw)
    if not okw:
        return Mpre, vpre, Mpost, vpost, T
    p = zs.shape[1]
    SwiH = np.zeros((p, n))
    for j in range(n):
        SwiH[:, j] = chol_solve(Lw, H[T][:, j])
    Mpost[T] = H[T].T @ SwiH
    vpost[T] = SwiH.T @ (zs[T] - mu_w[T])
    for t in range(T - 1, -1, -1):
        Bn = B[t + 1]
        Mn = Mpost[t + 1]
        Delta = np.linalg.inv(np.eye(nv) + Bn.T @ Mn @ Bn)
        core = Mn - Mn @ Bn @ Delta @ Bn.T @ Mn
        core = 0.5 * (core + core.T)
        Fn = F[t + 1]
        Mpre[t] = Fn.T @ core @ Fn
        Mpre[t] = 0.5 * (Mpre[t] + Mpre[t].T)
        resid = vpost[t + 1] - Mn @ shift[t + 1]
        vpre[t] = Fn.T @ (resid - Mn @ Bn @ (Delta @ (Bn.T @ resid)))
        if t >= 1:
            Lw = np.zeros_like(Sw[t])
            okw = try_cholesky(Sw[t], Lw)
            if not okw:
                return Mpre, vpre, Mpost, vpost, t
            for j in range(n):
                SwiH[:, j] = chol_solve(Lw, H[t][:, j])
            Mpost[t] = Mpre[t] + H[t].T @ SwiH
            vpost[t] = vpre[t] + SwiH.T @ (zs[t] - mu_w[t])
        else:
            Mpost[0] = Mpre[0]
            vpost[0] = vpre[0]
    return Mpre, vpre, Mpost, vpost, 0


@maybe_jit
def combined_loglik_core(ll_inc, xhat, Sigma, M, vec, rel_tol):
    """Per-t likelihood contribution combining forward and backward passes.

    ll_inc is the forward log N(z_t; zhat, S); (M, vec) the backward
    information pair of p(z_{t+1:T}|x_t); (xhat, Sigma) the filtered moments.
    Eigenvalues of Sigma below rel_tol * max-eigenvalue are truncated.
    The returned value drops constants independent of the time-t cluster.
    """
    n = xhat.shape[0]
    evals, Q = np.linalg.eigh(0.5 * (Sigma + Sigma.T))
    emax = evals[n - 1]
    thresh = rel_tol * max(emax, 0.0)
    g = vec - M @ xhat
    quad = xhat @ (M @ xhat) - 2.0 * (xhat @ vec)
    # columns above the cutoff span the non-degenerate subspace
    nt = 0
    for i in range(n):
        if evals[i] > thresh and evals[i] > 0.0:
            nt += 1
    if nt == 0:
        return ll_inc - 0.5 * quad
    Qk = np.ascontiguousarray(Q[:, n - nt:])
    shalf = np.zeros(nt)
    for i in range(nt):
        shalf[i] = np.sqrt(evals[n - nt + i])
    C = Qk.T @ M @ Qk
    for i in range(nt):
        for j in range(nt):
            C[i, j] *= shalf[i] * shalf[j]
    IC = np.eye(nt) + 0.5 * (C + C.T)
    L = np.zeros((nt, nt))
    ok = try_cholesky(IC, L)
    if not ok:  # M PSD makes IC PD; numerical safety only
        IC += 1e-12 * np.eye(nt)
        try_cholesky(IC, L)
    logdet = 0.0
    for i in range(nt):
        logdet += np.log(L[i, i])
    d = Qk.T @ g
    for i in range(nt):
        d[i] *= shalf[i]
    y = solve_lower(L, d)
    gag = 0.0
    for i in range(nt):
        gag += y[i] * y[i]
    return ll_inc - logdet - 0.5 * (quad - gag)


@maybe_jit
def stack_theta_core(G, control, mu_v, Sv):
    """Cluster-dependent model stacks: shift, G Sv G', and B = G chol(Sv)."""
    T1, n, nv = G.shape
    shift = np.zeros((T1, n))
    GSvG = np.zeros((T1, n, n))
    B = np.zeros((T1, n, nv))
    for t in range(1, T1):
        Gt = np.ascontiguousarray(G[t])
        shift[t] = control[t] + Gt @ np.ascontiguousarray(mu_v[t])
        Svt = np.ascontiguousarray(Sv[t])
        GSvG[t] = Gt @ Svt @ Gt.T
        B[t] = Gt @ psd_factor(Svt, 1e-14)
    return shift, GSvG, B


@maybe_jit
def systematic_resample_core(weights, u0):
    """Systematic resampling; u0 ~ U[0,1). Returns ancestor indices."""
    N = weights.shape[0]
    idx = np.zeros(N, dtype=np.int64)
    c = weights[0]
    i = 0
    for j in range(N):
        u = (j + u0) / N
        while u > c and i < N - 1:
            i += 1
            c += weights[i]
        idx[j] = i
    return idx


@maybe_jit
def kalman_step_batch(ms, Ps, F, shifts, GSvGs, H, mu_ws, Sws, z):
    """Per-particle Kalman step: leading axis is the particle index."""
    N, n = ms.shape
    p = z.shape[0]
    ms_new = np.zeros((N, n))
    Ps_new = np.zeros((N, n, n))
    mpreds = np.zeros((N, n))
    Ppreds = np.zeros((N, n, n))
    lls = np.zeros(N)
    ok_all = True
    for i in range(N):
        m, P, mp, Pp, zh, S, ll, ok = kalman_step_core(
            ms[i], Ps[i], F, shifts[i], GSvGs[i], H, mu_ws[i], Sws[i], z
        )
        if not ok:
            ok_all = False
            lls[i] = -np.inf
        else:
            lls[i] = ll
        ms_new[i] = m
        Ps_new[i] = P
        mpreds[i] = mp
        Ppreds[i] = Pp
    return ms_new, Ps_new, mpreds, Ppreds, lls, ok_all


@maybe_jit
def window_rts_batch(F, ms, Ps, mpreds, Ppreds):
    """Fixed-lag smoothing helper: RTS over a stored window, per particle.

    Window arrays have shape (N, W+1, ...) with slot w=0 the window origin.
    F is the (time-invariant) transition matrix. Returns the smoothed mean
    and covariance at the window origin for every particle.
    """
    N, W1, n = ms.shape
    sm0 = np.zeros((N, n))
    sP0 = np.zeros((N, n, n))
    for i in range(N):
        sm = ms[i, W1 - 1].copy()
        sP = Ps[i, W1 - 1].copy()
        for w in range(W1 - 2, -1, -1):
            Pp = Ppreds[i, w + 1]
            J = Ps[i, w] @ F.T @ np.linalg.pinv(Pp)
            sm = ms[i, w] + J @ (sm - mpreds[i, w + 1])
            sPn = Ps[i, w] + J @ (sP - Pp) @ J.T
            sP = 0.5 * (sPn + sPn.T)
        sm0[i] = sm
        sP0[i] = sP
    return sm0, sP0
