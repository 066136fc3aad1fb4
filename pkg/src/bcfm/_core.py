"""Compiled kernels shared by the public samplers and the Gibbs sweep.

Functions here never raise on numerical failure.  Factorizations return the
index of the first non-positive pivot (``-1`` on success) and block updates
return it so callers can build a precise error message.  Block updates write
their output only after every factorization succeeded.

Random draws are consumed in a fixed order (documented per function), which
makes chains bit-reproducible for a given numpy bit generator state.
"""
import numba as nb
import numpy as np

_jit = nb.njit(cache=True, nogil=True)


# ---------------------------------------------------------------------------
# small dense linear algebra


@_jit
def chol_into(A, L):
    """Lower Cholesky of ``A`` into ``L``; returns -1 or the failing pivot."""
    p = A.shape[0]
    for j in range(p):
        s = A[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if not s > 0.0:
            return j
        d = np.sqrt(s)
        L[j, j] = d
        for i in range(j + 1, p):
            t = A[i, j]
            for k in range(j):
                t -= L[i, k] * L[j, k]
            L[i, j] = t / d
        for i in range(j):
            L[i, j] = 0.0
    return -1


@_jit
def tril_inv_into(L, out):
    """Inverse of a nonsingular lower-triangular matrix."""
    p = L.shape[0]
    for j in range(p):
        for i in range(p):
            out[i, j] = 0.0
        out[j, j] = 1.0 / L[j, j]
        for i in range(j + 1, p):
            s = 0.0
            for k in range(j, i):
                s += L[i, k] * out[k, j]
            out[i, j] = -s / L[i, i]


@_jit
def spd_inv_into(A, out, work1, work2):
    """``A^-1`` via Cholesky; returns -1 or the failing pivot."""
    piv = chol_into(A, work1)
    if piv >= 0:
        return piv
    tril_inv_into(work1, work2)
    p = A.shape[0]
    for i in range(p):
        for j in range(i, p):
            s = 0.0
            for k in range(j, p):
                s += work2[k, i] * work2[k, j]
            out[i, j] = s
            out[j, i] = s
    return -1


# ---------------------------------------------------------------------------
# primitive draws


@_jit
def mvn_prec_draw_into(gen, P, h, out, work1, work2):
    """Draw ``N(P^-1 h, P^-1)`` into ``out``; consumes ``len(h)`` normals."""
    piv = chol_into(P, work1)
    if piv >= 0:
        return piv
    tril_inv_into(work1, work2)  # U^-1 with P = U U'
    p = h.shape[0]
    w = np.empty(p)
    for i in range(p):
        s = 0.0
        for k in range(i + 1):
            s += work2[i, k] * h[k]
        w[i] = s + gen.standard_normal()
    for i in range(p):
        s = 0.0
        for k in range(i, p):
            s += work2[k, i] * w[k]
        out[i] = s
    return -1


@_jit
def mvn_prec_draw_batch(gen, P, h):
    m, p = h.shape
    out = np.empty((m, p))
    w1 = np.empty((p, p))
    w2 = np.empty((p, p))
    for b in range(m):
        piv = mvn_prec_draw_into(gen, P[b], h[b], out[b], w1, w2)
        if piv >= 0:
            return out, b, piv
    return out, -1, -1


@_jit
def ig_draw(gen, shape, scale):
    """Elementwise ``IG(shape, scale)``; one gamma variate per element."""
    out = np.empty(shape.shape[0])
    for i in range(shape.shape[0]):
        out[i] = scale[i] / gen.standard_gamma(shape[i])
    return out


@_jit
def iw_draw_into(gen, df, S, out, C, A, Ainv):
    """Bartlett draw of ``IW(df, S)`` into ``out``.

    Consumes ``p`` gamma variates (diagonal) then ``p(p-1)/2`` normals (strict
    lower triangle, row-major).
    """
    p = S.shape[0]
    piv = chol_into(S, C)
    if piv >= 0:
        return piv
    for i in range(p):
        for j in range(p):
            A[i, j] = 0.0
        A[i, i] = np.sqrt(2.0 * gen.standard_gamma(0.5 * (df - i)))
    for i in range(1, p):
        for j in range(i):
            A[i, j] = gen.standard_normal()
    tril_inv_into(A, Ainv)
    # G = C Ainv^T; both factors are lower triangular, so k <= min(i, j)
    G = np.empty((p, p))
    for i in range(p):
        for j in range(p):
            s = 0.0
            for k in range(min(i, j) + 1):
                s += C[i, k] * Ainv[j, k]
            G[i, j] = s
    for i in range(p):
        for j in range(i, p):
            s = 0.0
            for k in range(p):
                s += G[i, k] * G[j, k]
            out[i, j] = s
            out[j, i] = s
    return -1


@_jit
def iw_draw_batch(gen, df, S):
    m, p = S.shape[0], S.shape[1]
    out = np.empty((m, p, p))
    C = np.empty((p, p))
    A = np.empty((p, p))
    Ai = np.empty((p, p))
    for b in range(m):
        piv = iw_draw_into(gen, df[b], S[b], out[b], C, A, Ai)
        if piv >= 0:
            return out, b, piv
    return out, -1, -1


@_jit
def dirichlet_draw(gen, alphas):
    K = alphas.shape[0]
    out = np.empty(K)
    if K == 1:
        out[0] = 1.0
        return out
    tot = 0.0
    for k in range(K):
        out[k] = gen.standard_gamma(alphas[k])
        tot += out[k]
    for k in range(K):
        out[k] /= tot
    return out


@_jit
def categorical_rows(gen, logw):
    """Row-wise categorical draws; one uniform per row; -1 marks an all -inf row."""
    n, K = logw.shape
    out = np.empty(n, dtype=np.int64)
    cw = np.empty(K)
    for i in range(n):
        mx = -np.inf
        for k in range(K):
            if logw[i, k] > mx:
                mx = logw[i, k]
        u = gen.random()
        if not np.isfinite(mx):
            out[i] = -1
            continue
        tot = 0.0
        for k in range(K):
            tot += np.exp(logw[i, k] - mx)
            cw[k] = tot
        u *= tot
        k = 0
        while k < K - 1 and cw[k] <= u:
            k += 1
        out[i] = k
    return out


# ---------------------------------------------------------------------------
# full conditionals


@_jit
def factor_conditional(Y, B, sigma2, mu, omega, z):
    """Cluster precisions ``(K, F, F)`` and subject linear terms ``(n, F)``."""
    n, R = Y.shape
    K, F = mu.shape
    WB = np.empty((R, F))
    for r in range(R):
        for l in range(F):
            WB[r, l] = B[r, l] / sigma2[r]
    G = np.zeros((F, F))
    for a in range(F):
        for b in range(F):
            s = 0.0
            for r in range(R):
                s += B[r, a] * WB[r, b]
            G[a, b] = s
    P = np.empty((K, F, F))
    c = np.zeros((K, F))
    Oi = np.empty((F, F))
    w1 = np.empty((F, F))
    w2 = np.empty((F, F))
    for k in range(K):
        piv = spd_inv_into(omega[k], Oi, w1, w2)
        if piv >= 0:
            return P, np.empty((0, F)), k, piv
        for a in range(F):
            for b in range(F):
                P[k, a, b] = Oi[a, b] + G[a, b]
                c[k, a] += Oi[a, b] * mu[k, b]
    h = Y @ WB
    for i in range(n):
        k = z[i]
        for a in range(F):
            h[i, a] += c[k, a]
    return P, h, -1, -1


@_jit
def factor_draw(gen, P, h, z, X_out):
    """Consumes ``n * F`` normals, subject by subject."""
    K, F = P.shape[0], P.shape[1]
    n = h.shape[0]
    Ui = np.empty((K, F, F))
    w1 = np.empty((F, F))
    for k in range(K):
        piv = chol_into(P[k], w1)
        if piv >= 0:
            return k, piv
        tril_inv_into(w1, Ui[k])
    w = np.empty(F)
    for i in range(n):
        k = z[i]
        for a in range(F):
            s = 0.0
            for b in range(a + 1):
                s += Ui[k, a, b] * h[i, b]
            w[a] = s + gen.standard_normal()
        for a in range(F):
            s = 0.0
            for b in range(a, F):
                s += Ui[k, b, a] * w[b]
            X_out[i, a] = s
    return -1, -1


@_jit
def cluster_stats(X, z, K):
    n, F = X.shape
    counts = np.zeros(K)
    sums = np.zeros((K, F))
    for i in range(n):
        k = z[i]
        counts[k] += 1.0
        for a in range(F):
            sums[k, a] += X[i, a]
    return counts, sums


@_jit
def means_conditional(X, z, omega, Cinv, Cinv_m):
    K, F = Cinv_m.shape
    counts, sums = cluster_stats(X, z, K)
    P = np.empty((K, F, F))
    h = np.empty((K, F))
    Oi = np.empty((F, F))
    w1 = np.empty((F, F))
    w2 = np.empty((F, F))
    for k in range(K):
        piv = spd_inv_into(omega[k], Oi, w1, w2)
        if piv >= 0:
            return P, h, k, piv
        for a in range(F):
            s = Cinv_m[k, a]
            for b in range(F):
                P[k, a, b] = Cinv[k, a, b] + counts[k] * Oi[a, b]
                s += Oi[a, b] * sums[k, b]
            h[k, a] = s
    return P, h, -1, -1


@_jit
def scatter(X, z, mu):
    n, F = X.shape
    K = mu.shape[0]
    Sc = np.zeros((K, F, F))
    d = np.empty(F)
    for i in range(n):
        k = z[i]
        for a in range(F):
            d[a] = X[i, a] - mu[k, a]
        for a in range(F):
            for b in range(a + 1):
                Sc[k, a, b] += d[a] * d[b]
    for k in range(K):
        for a in range(F):
            for b in range(a + 1, F):
                Sc[k, a, b] = Sc[k, b, a]
    return Sc


@_jit
def covariances_conditional(X, z, mu, n_omega, s2_omega, nu, Psi):
    K, F = mu.shape
    counts = np.zeros(K)
    for i in range(z.shape[0]):
        counts[z[i]] += 1.0
    Sc = scatter(X, z, mu)
    shape = np.empty(F)
    scale = np.empty(F)
    for l in range(F):
        shape[l] = 0.5 * (counts[0] + n_omega[l])
        scale[l] = 0.5 * (Sc[0, l, l] + n_omega[l] * s2_omega[l])
    df = np.empty(K - 1)
    S = np.empty((K - 1, F, F))
    for k in range(1, K):
        df[k - 1] = counts[k] + nu
        for a in range(F):
            for b in range(F):
                S[k - 1, a, b] = Sc[k, a, b] + Psi[k, a, b]
    return shape, scale, df, S


@_jit
def loadings_conditional(Y, X, sigma2, tau):
    """Precision/linear term of every row's free loadings.

    Row ``r`` has ``min(r, F)`` free entries (leading block of ``P[r]`` and
    ``h[r]``); the rest of ``P[r]``/``h[r]`` is zero.
    """
    n, R = Y.shape
    F = X.shape[1]
    XtX = X.T @ X
    XtY = X.T @ Y
    P = np.zeros((R, F, F))
    h = np.zeros((R, F))
    for r in range(1, R):
        m = r if r < F else F
        w = 1.0 / sigma2[r]
        for a in range(m):
            for b in range(m):
                P[r, a, b] = w * XtX[a, b]
            P[r, a, a] += 1.0 / tau[a]
            if r < F:
                h[r, a] = w * (XtY[a, r] - XtX[a, r])
            else:
                h[r, a] = w * XtY[a, r]
    return P, h


@_jit
def loadings_draw(gen, P, h, B_out):
    """Rows in order 1..R-1; row ``r`` consumes ``min(r, F)`` normals."""
    R, F = B_out.shape
    w1 = np.empty((F, F))
    w2 = np.empty((F, F))
    newB = B_out.copy()
    for r in range(1, R):
        m = r if r < F else F
        Pm = np.ascontiguousarray(P[r, :m, :m])
        out = np.empty(m)
        piv = mvn_prec_draw_into(gen, Pm, h[r, :m].copy(), out, w1[:m, :m], w2[:m, :m])
        if piv >= 0:
            return r, piv
        for a in range(m):
            newB[r, a] = out[a]
    B_out[:, :] = newB
    return -1, -1


@_jit
def noise_conditional(Y, X, B, n_sigma, s2_sigma):
    n, R = Y.shape
    fit = X @ B.T
    shape = np.full(R, 0.5 * (n + n_sigma))
    scale = np.empty(R)
    ss = np.zeros(R)
    for i in range(n):
        for r in range(R):
            d = Y[i, r] - fit[i, r]
            ss[r] += d * d
    for r in range(R):
        scale[r] = 0.5 * (ss[r] + n_sigma * s2_sigma)
    return shape, scale


@_jit
def tau_conditional(B, n_tau, s2_tau):
    R, F = B.shape
    shape = np.empty(F)
    scale = np.empty(F)
    for l in range(F):
        ss = 0.0
        for r in range(l + 1, R):
            ss += B[r, l] * B[r, l]
        shape[l] = 0.5 * (R - (l + 1) + n_tau)
        scale[l] = 0.5 * (ss + n_tau * s2_tau)
    return shape, scale


@_jit
def assignment_logweights(X, mu, omega, p):
    n, F = X.shape
    K = mu.shape[0]
    Li = np.empty((K, F, F))
    half_logdet = np.empty(K)
    w1 = np.empty((F, F))
    for k in range(K):
        piv = chol_into(omega[k], w1)
        if piv >= 0:
            return np.empty((0, K)), k, piv
        tril_inv_into(w1, Li[k])
        s = 0.0
        for a in range(F):
            s += np.log(w1[a, a])
        half_logdet[k] = s
    const = np.empty(K)
    for k in range(K):
        const[k] = np.log(p[k]) - half_logdet[k]
    logw = np.empty((n, K))
    d = np.empty(F)
    for i in range(n):
        for k in range(K):
            for a in range(F):
                d[a] = X[i, a] - mu[k, a]
            q = 0.0
            for a in range(F):
                s = 0.0
                for b in range(a + 1):
                    s += Li[k, a, b] * d[b]
                q += s * s
            logw[i, k] = const[k] - 0.5 * q
    return logw, -1, -1


# ---------------------------------------------------------------------------
# one sweep

FACTORS, MEANS, COVARIANCES, LOADINGS, NOISE, TAU, ASSIGNMENTS, WEIGHTS = range(8)


@_jit
def sweep(gen, Y, B, tau, sigma2, mu, omega, p, z, X,
          Cinv, Cinv_m, nu, Psi, alpha, n_omega, s2_omega,
          n_sigma, s2_sigma, n_tau, s2_tau):
    """One Gibbs sweep in place.  Returns ``(block, index, pivot)``;
    ``block == -1`` on success, otherwise the failing block, the cluster or
    row index and the pivot.  A failing block leaves its parameter untouched.
    """
    K, F = mu.shape

    P, h, k, piv = factor_conditional(Y, B, sigma2, mu, omega, z)
    if piv >= 0:
        return FACTORS, k, piv
    k, piv = factor_draw(gen, P, h, z, X)
    if piv >= 0:
        return FACTORS, k, piv

    P, h, k, piv = means_conditional(X, z, omega, Cinv, Cinv_m)
    if piv >= 0:
        return MEANS, k, piv
    new_mu, k, piv = mvn_prec_draw_batch(gen, P, h)
    if piv >= 0:
        return MEANS, k, piv
    mu[:, :] = new_mu

    shape, scale, df, S = covariances_conditional(X, z, mu, n_omega, s2_omega, nu, Psi)
    d0 = ig_draw(gen, shape, scale)
    new_om, k, piv = iw_draw_batch(gen, df, S)
    if piv >= 0:
        return COVARIANCES, k + 1, piv
    omega[0, :, :] = 0.0
    for l in range(F):
        omega[0, l, l] = d0[l]
    omega[1:, :, :] = new_om

    P, h = loadings_conditional(Y, X, sigma2, tau)
    k, piv = loadings_draw(gen, P, h, B)
    if piv >= 0:
        return LOADINGS, k, piv

    shape, scale = noise_conditional(Y, X, B, n_sigma, s2_sigma)
    sigma2[:] = ig_draw(gen, shape, scale)

    shape, scale = tau_conditional(B, n_tau, s2_tau)
    tau[:] = ig_draw(gen, shape, scale)

    logw, k, piv = assignment_logweights(X, mu, omega, p)
    if piv >= 0:
        return ASSIGNMENTS, k, piv
    newz = categorical_rows(gen, logw)
    for i in range(newz.shape[0]):
        if newz[i] < 0:
            return ASSIGNMENTS, i, -2
    z[:] = newz

    counts = np.zeros(K)
    for i in range(z.shape[0]):
        counts[z[i]] += 1.0
    p[:] = dirichlet_draw(gen, counts + alpha)
    return -1, -1, -1


@_jit
def run_sweeps(gen, n_iter, Y, B, tau, sigma2, mu, omega, p, z, X,
               Cinv, Cinv_m, nu, Psi, alpha, n_omega, s2_omega,
               n_sigma, s2_sigma, n_tau, s2_tau):
    """``n_iter`` sweeps; returns ``(done, block, index, pivot)``."""
    for it in range(n_iter):
        blk, k, piv = sweep(gen, Y, B, tau, sigma2, mu, omega, p, z, X,
                            Cinv, Cinv_m, nu, Psi, alpha, n_omega, s2_omega,
                            n_sigma, s2_sigma, n_tau, s2_tau)
        if blk >= 0:
            return it, blk, k, piv
    return n_iter, -1, -1, -1


# ---------------------------------------------------------------------------
# k-means


@_jit
def lloyd(X, centers, tol, max_iter):
    """Lloyd iterations from ``centers`` (modified in place).

    Stops when the within-cluster sum of squares improves by no more than
    ``tol`` relative, or after ``max_iter`` steps.  A cluster left empty by
    an assignment step takes the point farthest from its own center.
    Returns ``(labels, sum of distances, sum of squared distances)``.
    """
    n, q = X.shape
    K = centers.shape[0]
    labels = np.empty(n, dtype=np.int64)
    far = np.empty(n)
    counts = np.empty(K, dtype=np.int64)
    sums = np.empty((K, q))
    prev = np.inf
    for _ in range(max_iter):
        for i in range(n):
            best = np.inf
            bk = 0
            for k in range(K):
                d = 0.0
                for a in range(q):
                    t = X[i, a] - centers[k, a]
                    d += t * t
                if d < best:
                    best = d
                    bk = k
            labels[i] = bk
            far[i] = best
        counts[:] = 0
        for i in range(n):
            counts[labels[i]] += 1
        for k in range(K):
            if counts[k] == 0:
                j = 0
                for i in range(1, n):
                    if far[i] > far[j]:
                        j = i
                counts[labels[j]] -= 1
                labels[j] = k
                counts[k] += 1
                far[j] = -1.0
        sums[:, :] = 0.0
        for i in range(n):
            for a in range(q):
                sums[labels[i], a] += X[i, a]
        for k in range(K):
            if counts[k] > 0:
                for a in range(q):
                    centers[k, a] = sums[k, a] / counts[k]
        obj = 0.0
        for i in range(n):
            for a in range(q):
                t = X[i, a] - centers[labels[i], a]
                obj += t * t
        if prev - obj <= tol * max(obj, 1e-300):
            break
        prev = obj
    dist = 0.0
    ssq = 0.0
    for i in range(n):
        best = np.inf
        bk = 0
        for k in range(K):
            d = 0.0
            for a in range(q):
                t = X[i, a] - centers[k, a]
                d += t * t
            if d < best:
                best = d
                bk = k
        labels[i] = bk
        ssq += best
        dist += np.sqrt(best)
    return labels, dist, ssq
