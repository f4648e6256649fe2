"""Brute-force verifiers that share no algebra with :mod:`netsense.fim`.

* :func:`fim_finite_difference` differentiates the noiseless echo mean
  numerically and evaluates ``2 Re{dmu^H O^{-1} dmu}`` directly.
* :func:`fim_elementwise` expands every derivative of the echo mean into a
  list of rank-one terms and evaluates each FIM entry as an explicit double
  sum, with ``E[x x^H] = R`` applied term by term.
* :func:`grid_search_transmit` / :func:`grid_search_compression` exhaustively
  scan one-parameter families for tiny instances.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import steering


@dataclass(frozen=True)
class FdConfig:
    angle_step: float = 1e-6
    gain_step: float = 1e-6

    def __post_init__(self):
        if self.angle_step <= 0 or self.gain_step <= 0:
            raise ValueError("finite-difference steps must be positive")


def _sqrtm_psd(R):
    w, U = np.linalg.eigh(R)
    return (U * np.sqrt(np.clip(w, 0, None))) @ U.conj().T


def echo_mean(theta, b, X, Mt, Mr):
    """Noiseless received signal at every BS.

    ``theta (N,K)``, ``b (N,N,K)`` complex, ``X (N,Mt,J)`` with one transmit
    snapshot per column. Returns ``(N, Mr, J)``.
    """
    N = theta.shape[0]
    out = np.zeros((N, Mr, X.shape[-1]), complex)
    for m in range(N):
        Am = steering(theta[m], Mr).T  # (Mr, K)
        for v in range(N):
            Vv = steering(theta[v], Mt, "transmit").T
            out[m] += Am @ (b[m, v][:, None] * (Vv.T @ X[v]))
    return out


def fim_finite_difference(samples, s, R, W, cfg: FdConfig = FdConfig()):
    """Real FIM of ``zeta`` for sample ``s`` by central differences.

    The transmit signal is realised at covariance level: ``x_v`` runs over
    the columns of ``R_v^{1/2}`` (other BSs silent), so summing the
    per-column quadratic forms reproduces ``E[x x^H] = R`` exactly.
    """
    N, K, Mt, Mr = samples.N, samples.K, samples.Mt, samples.Mr
    theta0 = samples.theta[s].copy()
    b0 = samples.gain.copy()
    cols = []
    for v in range(N):
        Rh = _sqrtm_psd(np.asarray(R[v], complex))
        X = np.zeros((N, Mt, Mt), complex)
        X[v] = Rh
        cols.append(X)
    X = np.concatenate(cols, axis=-1)  # (N, Mt, N*Mt)

    nb = N * N * K
    d = N * K + 2 * nb
    derivs = []
    for a in range(d):
        th_p, th_m, b_p, b_m = theta0.copy(), theta0.copy(), b0.copy(), b0.copy()
        if a < N * K:
            h = cfg.angle_step
            th_p.flat[a] += h
            th_m.flat[a] -= h
        else:
            h = cfg.gain_step
            j = (a - N * K) % nb
            step = h if a < N * K + nb else 1j * h
            b_p.flat[j] += step
            b_m.flat[j] -= step
        mu_p = echo_mean(th_p, b_p, X, Mt, Mr)
        mu_m = echo_mean(th_m, b_m, X, Mt, Mr)
        derivs.append((mu_p - mu_m) / (2 * h))
    D = np.stack(derivs)  # (d, N, Mr, J)
    F = np.zeros((d, d))
    for m in range(N):
        Dm = D[:, m]  # (d, Mr, J)
        F += 2 * np.real(np.einsum("aij,ik,bkj->ab", Dm.conj(), W[m], Dm))
    return 0.5 * (F + F.T)


def _mean_derivative_terms(samples, s, m, a):
    """Rank-one terms ``(r, c, p, v)`` of ``d mu_m / d zeta_a``.

    Each term stands for ``r * c * (p^T x_v)``.
    """
    N, K = samples.N, samples.K
    A, Ad = samples.A[s, m], samples.Adot[s, m]
    g = samples.gain
    nb = N * N * K
    terms = []
    if a < N * K:
        n, i = divmod(a, K)
        if m == n:
            for v in range(N):
                terms.append((Ad[:, i], g[n, v, i], samples.V[s, v][:, i], v))
            terms.append((A[:, i], g[n, n, i], samples.Vdot[s, n][:, i], n))
        else:
            terms.append((A[:, i], g[m, n, i], samples.Vdot[s, n][:, i], n))
    else:
        j = (a - N * K) % nb
        u, w, k = np.unravel_index(j, (N, N, K))
        coef = 1.0 if a < N * K + nb else 1j
        if m == u:
            terms.append((A[:, k], coef, samples.V[s, w][:, k], w))
    return terms


def fim_elementwise(samples, s, R, W):
    """Complex ``(F1, F2, F3)`` for sample ``s`` evaluated entry by entry."""
    N, K = samples.N, samples.K
    nb = N * N * K
    d = N * K + nb  # theta and b_R; b_I entries follow from the -j relation

    def entry(a, b):
        tot = 0.0 + 0.0j
        for m in range(N):
            for r1, c1, p1, v1 in _mean_derivative_terms(samples, s, m, a):
                for r2, c2, p2, v2 in _mean_derivative_terms(samples, s, m, b):
                    if v1 != v2:
                        continue
                    tot += np.conj(c1) * c2 * (r1.conj() @ W[m] @ r2) * (p2 @ R[v1] @ p1.conj())
        return tot

    full = np.array([[entry(a, b) for b in range(d)] for a in range(d)])
    nk = N * K
    return full[:nk, :nk], full[:nk, nk:], full[nk:, nk:]


def hadamard_rearrangement(W, a1, a2, R, p1, p2, c1=1.0, c2=1.0):
    """Check of the trace rearrangement used to reach Hadamard form.

    Returns both sides of
    ``E[(c1 a1 p1^T x)^H W (c2 a2 p2^T x)] = (a1^H W a2) * (c1^* c2 p1^H R^* p2)``
    for ``E[x x^H] = R``. The left side keeps the original trace order.
    """
    lhs = np.conj(c1) * c2 * (a1.conj() @ W @ a2) * (p2 @ R @ p1.conj())
    rhs = (a1.conj() @ W @ a2) * (np.conj(c1) * c2 * (p1.conj() @ R.conj() @ p2))
    return lhs, rhs


# ---------------------------------------------------------------- grid search


def grid_minimize(f, lo, hi, n=2001):
    """Exhaustive 1-D grid minimum of ``f`` on ``[lo, hi]``.

    Returns ``(x_best, f_best)``; the grid step is ``(hi - lo) / (n - 1)``.
    """
    xs = np.linspace(lo, hi, n)
    vals = np.array([f(x) for x in xs])
    j = int(np.nanargmin(vals))
    return float(xs[j]), float(vals[j])


def grid_search_transmit(samples, power, W=None, n=721):
    """Best rank-one transmit covariance ``R = P v(phi) v(phi)^H / Mt`` (N=1).

    Scans the beam direction ``phi`` over ``[-pi/2, pi/2]``. For ``Mt = 2``
    with a single target this family contains the optimum of the
    fronthaul-free problem up to a phase, which is what the tests rely on.
    """
    from .fim import pcrb_of

    if samples.N != 1:
        raise ValueError("grid search is for single-BS instances")
    Mt, Mr = samples.Mt, samples.Mr
    if W is None:
        W = np.eye(Mr)[None]

    def f(phi):
        v = steering(phi, Mt, "transmit")
        R = power * np.outer(v, v.conj())[None] / Mt
        return pcrb_of(samples, R, W=W)

    return grid_minimize(f, -np.pi / 2, np.pi / 2, n)


def grid_search_compression(samples, R, cap, n=2001, qmax=None):
    """Best scalar compression noise for ``Mr = 1`` (one BS) under rate ``cap``.

    With one receive antenna the compression noise is a scalar ``q`` (unit
    noise power). The PCRB decreases as ``q`` shrinks and the rate grows, so
    the scan keeps every feasible ``q`` on a log grid and returns the best.
    """
    from .fim import pcrb_of
    from .fronthaul import compression_rate

    if samples.Mr != 1 or samples.N != 1:
        raise ValueError("compression grid search is for N=1, Mr=1")
    if qmax is None:
        qmax = 1e6
    qs = np.geomspace(1e-6, qmax, n)
    best = (np.nan, np.inf)
    for q in qs:
        Q = np.full((1, 1, 1), q * samples.sigma2)
        if compression_rate(samples, R, Q)[0] > cap:
            continue
        val = pcrb_of(samples, R, Q=Q)
        if val < best[1]:
            best = (float(q), float(val))
    return best
