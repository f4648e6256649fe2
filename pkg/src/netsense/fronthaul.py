"""Fronthaul compression rates and their successive-convex surrogates.

Each BS forwards its received samples through a Gaussian test channel with
compression noise ``Q_n``. The rate per sample is

    D_n = E log2 |J_n + sigma2 I + Q_n| - log2 |Q_n|,

with ``J_n = sum_u G_nu R_u G_nu^H`` the echo covariance. In the inverse
parameterisation ``T_n = (sigma2 I + Q_n)^{-1}`` the same rate reads

    D_n = E log2 |I + J^{1/2} Tt J^{1/2}| - log2 |I - Tt|,    Tt = sigma2 T_n.

Internally everything is normalised to unit noise power. Public functions
take ``Q`` in W and ``T`` in 1/W.

An optional ``gram`` argument (``C_n^H C_n`` per BS) replaces the identity
that multiplies the thermal noise, which is what a receive beamformer ``C_n``
does to the noise covariance.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RateUnbounded, ShapeError

LN2 = np.log(2.0)
# eigenvalues of Q/sigma2 below this are treated as singular
Q_FLOOR = 1e-10


def _logdet2(X):
    sign, ld = np.linalg.slogdet(X)
    if np.any(sign.real <= 0):
        raise RateUnbounded("matrix in log-det is not positive definite")
    return ld / LN2


def psd_sqrt(X):
    """Hermitian square root with negative eigenvalues clamped to zero."""
    w, U = np.linalg.eigh(X)
    return (U * np.sqrt(np.clip(w, 0.0, None))[..., None, :]) @ np.swapaxes(U.conj(), -1, -2)


def _herm(X):
    return 0.5 * (X + np.swapaxes(X.conj(), -1, -2))


def channels(samples):
    """Normalised channels ``G[s, n, u] = A_n diag(g_nu) V_u^T`` (Mr x Mt)."""
    return np.einsum("snak,nuk,sutk->snuat", samples.A, samples.gain, samples.V, optimize=True)


def echo_covariance(samples, R, G=None):
    """``J[s, n] = sum_u G_nu R_u G_nu^H`` in units of the noise power."""
    R = np.asarray(R, complex)
    if R.shape != (samples.N, samples.Mt, samples.Mt):
        raise ShapeError(f"R must have shape {(samples.N, samples.Mt, samples.Mt)}")
    if G is None:
        G = channels(samples)
    return _herm(np.einsum("snuat,utv,snubv->snab", G, R, G.conj(), optimize=True))


def _gram(samples, gram):
    if gram is None:
        return np.broadcast_to(np.eye(samples.Mr), (samples.N, samples.Mr, samples.Mr))
    return np.asarray(gram, complex)


def _rate_normalised(J, Qn, gram, floor):
    w = np.linalg.eigvalsh(Qn)
    if floor:
        if np.any(w < Q_FLOOR):
            V = np.linalg.eigh(Qn)[1]
            Qn = (V * np.maximum(w, Q_FLOOR)[..., None, :]) @ np.swapaxes(V.conj(), -1, -2)
    elif np.any(w <= 0):
        raise RateUnbounded("compression noise covariance is singular")
    top = _logdet2(J + gram[None] + Qn[None]).mean(axis=0)
    return top - _logdet2(Qn)


def compression_rate(samples, R, Q, gram=None, floor=False):
    """Per-BS rate in bits/sample for compression noise ``Q`` (W).

    With ``floor=True`` the eigenvalues of ``Q`` are lifted to
    ``1e-10 * sigma2`` so the rate stays finite near ``Q = 0``.
    """
    Qn = np.asarray(Q, complex) / samples.sigma2
    return _rate_normalised(echo_covariance(samples, R), _herm(Qn), _gram(samples, gram), floor)


rate_D = compression_rate


def rate_from_W(samples, R, W):
    """Rate for the normalised inverse covariance ``W = sigma2 T`` (full dimension)."""
    W = _herm(np.asarray(W, complex))
    J = echo_covariance(samples, R)
    return _rate_T_normalised(J, W)


def _rate_T_normalised(J, Tt):
    M = Tt.shape[-1]
    w = np.linalg.eigvalsh(Tt)
    if np.any(w <= 0) or np.any(w >= 1.0):
        raise RateUnbounded("T must satisfy 0 < sigma2 T < I strictly")
    Th = psd_sqrt(Tt)
    inner = np.eye(M) + Th[None] @ J @ Th[None]
    return _logdet2(_herm(inner)).mean(axis=0) - _logdet2(np.eye(M) - Tt)


def compression_rate_T(samples, R, T):
    """Rate for ``T = (sigma2 I + Q)^{-1}`` given in 1/W."""
    Tt = _herm(np.asarray(T, complex)) * samples.sigma2
    return _rate_T_normalised(echo_covariance(samples, R), Tt)


rate_D_T = compression_rate_T


# ------------------------------------------------------------ R surrogate


@dataclass(frozen=True)
class TransmitSurrogate:
    """Affine upper bound of the rate in the transmit covariances.

    ``D_n(R) <= const[n] + sum_u Re tr(coef[n, u] R_u)`` with equality at the
    expansion point.
    """

    const: np.ndarray  # (N,)
    coef: np.ndarray  # (N, N, Mt, Mt) Hermitian

    def __call__(self, R):
        R = np.asarray(R, complex)
        return self.const + np.real(np.einsum("nuab,uba->n", self.coef, R))


def transmit_surrogate(samples, Rt, W):
    """Tangent majoriser of the rate around ``Rt`` for fixed ``W = sigma2 T``.

    ``log2|J + W^{-1}|`` is linearised in ``J``. The inverse of the expansion
    point is formed as ``W^{1/2} (I + W^{1/2} J W^{1/2})^{-1} W^{1/2}`` so that
    no explicit ``Q`` is needed.
    """
    G = channels(samples)
    J = echo_covariance(samples, Rt, G)
    W = _herm(np.asarray(W, complex))
    M = W.shape[-1]
    if np.any(np.linalg.eigvalsh(W) >= 1.0):
        raise RateUnbounded("zero compression noise: the rate is unbounded")
    Wh = psd_sqrt(W)
    inner = _herm(np.eye(M) + Wh[None] @ J @ Wh[None])
    Sinv = Wh[None] @ np.linalg.inv(inner) @ Wh[None]
    coef = np.einsum("snuat,snab,snubv->nutv", G.conj(), Sinv, G, optimize=True) / samples.S
    coef = _herm(coef) / LN2
    base = _logdet2(inner).mean(axis=0) - _logdet2(np.eye(M) - W)
    const = base - np.real(np.einsum("nuab,uba->n", coef, np.asarray(Rt, complex)))
    return TransmitSurrogate(const=const, coef=coef)


def surrogate_Dhat(samples, R, Rtilde, Q):
    """Affine-in-``R`` upper bound of the rate, expanded at ``Rtilde``."""
    W = np.linalg.inv(np.eye(samples.Mr) + np.asarray(Q, complex) / samples.sigma2)
    return transmit_surrogate(samples, Rtilde, W)(R)


# ------------------------------------------------------------ T surrogate


@dataclass(frozen=True)
class CompressionSurrogate:
    """``D_n(Tt) <= const[n] + Re tr(coef[n] Tt_n) - log2|I - Tt_n|``.

    ``Tt = sigma2 T``. Only the concave log-det is linearised; the convex
    barrier is kept exact.
    """

    const: np.ndarray  # (N,)
    coef: np.ndarray  # (N, M, M)

    def __call__(self, Tt):
        Tt = _herm(np.asarray(Tt, complex))
        M = Tt.shape[-1]
        w = np.linalg.eigvalsh(Tt)
        if np.any(w >= 1.0):
            raise RateUnbounded("T on the boundary")
        return (
            self.const
            + np.real(np.einsum("nab,nba->n", self.coef, Tt))
            - _logdet2(np.eye(M) - Tt)
        )


def compression_surrogate(samples, R, Tbar):
    """Tangent majoriser of the rate in ``Tt = sigma2 T`` around ``Tbar``."""
    J = echo_covariance(samples, R)
    Tbar = _herm(np.asarray(Tbar, complex))
    M = Tbar.shape[-1]
    Jh = psd_sqrt(J)
    Om = _herm(np.eye(M) + Jh @ Tbar[None] @ Jh)
    coef = _herm((Jh @ np.linalg.inv(Om) @ Jh).mean(axis=0)) / LN2
    const = _logdet2(Om).mean(axis=0) - np.real(np.einsum("nab,nba->n", coef, Tbar))
    return CompressionSurrogate(const=const, coef=coef)


def surrogate_Dtilde(samples, Rbar, Tbar, T):
    """Surrogate rate at ``T`` (1/W) expanded at ``Tbar`` (1/W)."""
    s2 = samples.sigma2
    return compression_surrogate(samples, Rbar, np.asarray(Tbar) * s2)(np.asarray(T) * s2)


# ------------------------------------------------------------ helpers


def bisect_scalar_noise(samples, R, target, gram=None, lo=1e-12, hi=1e12, iters=200):
    """Scalar ``q`` (units of sigma2) with rate of ``Q = q sigma2 I`` equal to ``target``.

    Returns one value per BS. The rate is strictly decreasing in ``q``; if even
    ``hi`` overshoots the target, ``hi`` is returned and flagged via the
    second output.
    """
    N, M = samples.N, samples.Mr
    J = echo_covariance(samples, R)
    g = _gram(samples, gram)
    target = np.broadcast_to(np.asarray(target, float), (N,))
    eye = np.eye(M)

    def rate(n, q):
        top = _logdet2(J[:, n] + g[n][None] + q * eye[None]).mean()
        return top - M * np.log2(q)

    out, ok = np.empty(N), np.ones(N, bool)
    for n in range(N):
        if rate(n, hi) > target[n]:
            out[n], ok[n] = hi, False
            continue
        a, b = np.log(lo), np.log(hi)
        if rate(n, lo) <= target[n]:
            out[n] = lo
            continue
        for _ in range(iters):
            m = 0.5 * (a + b)
            if rate(n, np.exp(m)) > target[n]:
                a = m
            else:
                b = m
            if b - a < 1e-13:
                break
        out[n] = np.exp(b)
    return out, ok
