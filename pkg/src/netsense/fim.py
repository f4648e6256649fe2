"""Posterior Fisher information for the networked localisation problem.

Parameter orderings used everywhere:

* ``zeta = [theta, b_R, b_I]`` with ``theta`` indexed ``n*K + k`` and the
  attenuation parts indexed ``(n*N + u)*K + k`` for ``b[n, u, k]``.
* ``xi = [q, b_R, b_I]`` with ``q = [q1x, q1y, q2x, q2y, ...]``.

Attenuation coordinates are expressed in units of the noise amplitude (see
:class:`~netsense.scenario.SampleSet`), which leaves the position block of the
inverse PFIM, and hence the PCRB, unchanged.

The receive side enters only through ``W_n``, the inverse of the noise-plus-
compression covariance at BS ``n`` normalised to unit noise power. For the
full-dimension model ``W_n = (I + Q_n / sigma2)^{-1}``; with receive
beamforming ``W_n = C_n (C_n^H C_n + Qdd_n / sigma2)^{-1} C_n^H``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import ShapeError, SingularFim

log = logging.getLogger(__name__)


def _quad(X, M, Y):
    # X^H M Y for every sample and BS; M may carry leading batch axes
    return np.einsum("snai,...nab,snbk->...snik", X.conj(), M, Y, optimize=True)


def _check(samples, R, W):
    N, Mt, Mr = samples.N, samples.Mt, samples.Mr
    if R.shape[-3:] != (N, Mt, Mt):
        raise ShapeError(f"R must end in {(N, Mt, Mt)}, got {R.shape}")
    if W.shape[-3:] != (N, Mr, Mr):
        raise ShapeError(f"W must end in {(N, Mr, Mr)}, got {W.shape}")


def zeta_blocks(samples, R, W):
    """Complex blocks ``F1, F2, F3`` for every sample.

    Returns arrays shaped ``(..., S, NK, NK)``, ``(..., S, NK, N*N*K)`` and
    ``(..., S, N*N*K, N*N*K)``; leading axes broadcast from ``R`` and ``W``.
    """
    R = np.asarray(R, dtype=complex)
    W = np.asarray(W, dtype=complex)
    _check(samples, R, W)
    A, Ad, V, Vd, g = samples.A, samples.Adot, samples.V, samples.Vdot, samples.gain
    N, K = samples.N, samples.K
    Rc = R.conj()

    KAA = _quad(A, W, A)
    KAD = _quad(A, W, Ad)
    KDA = np.swapaxes(KAD, -1, -2).conj()
    KDD = _quad(Ad, W, Ad)
    PVV = _quad(V, Rc, V)
    PVD = _quad(V, Rc, Vd)
    PDV = np.swapaxes(PVD, -1, -2).conj()
    PDD = _quad(Vd, Rc, Vd)
    gg = g.conj()[..., :, None] * g[..., None, :]  # gg[m, v, i, k] = b*_{mvi} b_{mvk}
    gc = g.conj()

    # F1[n, u]: cross terms present for every (n, u), plus the diagonal sums
    F1 = np.einsum("...snik,...suik,nuik->...snuik", KDA, PVD, gg, optimize=True)
    F1 = F1 + np.einsum("...suik,...snik,unik->...snuik", KAD, PDV, gg, optimize=True)
    diag = np.einsum("...suik,...snik,unik->...snik", KAA, PDD, gg, optimize=True)
    diag = diag + np.einsum("...snik,...suik,nuik->...snik", KDD, PVV, gg, optimize=True)
    idx = np.arange(N)
    F1[..., idx, idx, :, :] += diag
    F1 = np.swapaxes(F1, -3, -2)  # (..., s, n, i, u, k)

    # F2[n, (u, w)]: row BS n, attenuation b[u, w]
    batch = F1.shape[:-5]
    S = samples.S
    F2 = np.zeros(batch + (S, N, K, N, N, K), complex)
    t1 = np.einsum("...snik,nwi,...swik->...sniwk", KDA, gc, PVV, optimize=True)
    t2 = np.einsum("...suik,uni,...snik->...sniuk", KAA, gc, PDV, optimize=True)
    for n in range(N):
        F2[..., n, :, n, :, :] += t1[..., n, :, :, :]
        F2[..., n, :, :, n, :] += t2[..., n, :, :, :]

    # F3 is block diagonal over (n, v)
    D = np.einsum("...snik,...svik->...snvik", KAA, PVV, optimize=True)
    F3 = np.zeros(batch + (S, N, N, K, N, N, K), complex)
    for n in range(N):
        for v in range(N):
            F3[..., n, v, :, n, v, :] = D[..., n, v, :, :]

    NK, NNK = N * K, N * N * K
    return (
        F1.reshape(batch + (S, NK, NK)),
        F2.reshape(batch + (S, NK, NNK)),
        F3.reshape(batch + (S, NNK, NNK)),
    )


def block_F1(samples, R, W):
    return zeta_blocks(samples, R, W)[0]


def block_F2(samples, R, W):
    return zeta_blocks(samples, R, W)[1]


def block_F3(samples, R, W):
    return zeta_blocks(samples, R, W)[2]


def assemble_F0_zeta(F1, F2, F3):
    """Real FIM for ``zeta`` from the complex blocks (symmetrised)."""
    nk, nnk = F1.shape[-1], F3.shape[-1]
    if F1.shape[-2] != nk or F2.shape[-2:] != (nk, nnk) or F3.shape[-2] != nnk:
        raise ShapeError("inconsistent F1/F2/F3 block sizes")
    T = lambda X: np.swapaxes(X, -1, -2)
    F = 2.0 * np.block(
        [
            [F1.real, F2.real, -F2.imag],
            [T(F2.real), F3.real, -F3.imag],
            [-T(F2.imag), -T(F3.imag), F3.real],
        ]
    )
    return 0.5 * (F + T(F))


def chain_rule_U(jac):
    """Jacobian ``d zeta / d xi`` (rows indexed by ``xi``) for one sample.

    ``jac`` has shape ``(N, K, 2)`` holding ``d theta[n,k] / d q_k``.
    """
    jac = np.asarray(jac, dtype=float)
    N, K, _ = jac.shape
    nb = N * N * K
    U = np.zeros((2 * K + 2 * nb, N * K + 2 * nb))
    for n in range(N):
        for k in range(K):
            U[2 * k : 2 * k + 2, n * K + k] = jac[n, k]
    U[2 * K :, N * K :] = np.eye(2 * nb)
    return U


def _chain_rule_all(jac):
    # stacked chain_rule_U over samples, shape (S, dxi, dzeta)
    return np.stack([chain_rule_U(j) for j in jac])


def prior_fim(radii, N: int) -> np.ndarray:
    """Prior FIM of independent isotropic Gaussian locations.

    Only the position block is non-zero: ``diag(r_k**-2)`` per coordinate.
    """
    radii = np.asarray(radii, dtype=float)
    K = radii.size
    d = 2 * K + 2 * N * N * K
    Fp = np.zeros((d, d))
    Fp[np.arange(2 * K), np.arange(2 * K)] = np.repeat(radii**-2.0, 2)
    return Fp


def data_fim(samples, R, W):
    """Sample average of ``U F0zeta U^T`` times the frame length."""
    F0z = assemble_F0_zeta(*zeta_blocks(samples, R, W))
    U = _chain_rule_all(samples.jac)
    F = np.einsum("sab,...sbc,sdc->...ad", U, F0z, U, optimize=True) / samples.S
    F = samples.snapshots * F
    return 0.5 * (F + np.swapaxes(F, -1, -2))


def noise_inverse(Q, sigma2, Mr=None):
    """``(I + Q / sigma2)^{-1}`` per BS; ``Q=None`` means no compression noise."""
    if Q is None:
        return None
    Q = np.asarray(Q, dtype=complex)
    M = Q.shape[-1]
    return np.linalg.inv(np.eye(M) + Q / sigma2)


def pfim(samples, R, Q=None, W=None) -> np.ndarray:
    """Posterior FIM for transmit covariances ``R`` and compression noise ``Q``.

    ``Q`` is in W (same units as the noise power). Alternatively pass the
    normalised inverse covariance ``W`` directly.
    """
    R = np.asarray(R, dtype=complex)
    if W is None:
        if Q is None:
            W = np.broadcast_to(np.eye(samples.Mr), (samples.N, samples.Mr, samples.Mr))
        else:
            W = noise_inverse(Q, samples.sigma2)
    return data_fim(samples, R, W) + prior_fim(samples.radii, samples.N)


@dataclass
class PcrbResult:
    value: float
    fallback: bool = False


def pcrb(F, K: int, *, detail: bool = False):
    """Sum of the first ``2K`` diagonal entries of ``F^{-1}``.

    A Cholesky factorisation is tried first. If it fails the position block is
    reduced through the pseudo-inverse of the nuisance block (equal to the
    exact value whenever ``F`` is invertible) and the result is flagged.
    """
    F = np.asarray(F, dtype=float)
    F = 0.5 * (F + F.T)
    p = 2 * K
    if F.shape[0] < p or F.shape[0] != F.shape[1]:
        raise ShapeError(f"need a square FIM of size >= {p}")
    try:
        c = linalg.cho_factor(F, lower=True, check_finite=True)
        E = np.zeros((F.shape[0], p))
        E[:p, :p] = np.eye(p)
        val = float(np.trace(linalg.cho_solve(c, E)[:p]))
        out = PcrbResult(val)
    except linalg.LinAlgError:
        Fqq, Fqb, Fbb = F[:p, :p], F[:p, p:], F[p:, p:]
        efim = Fqq - Fqb @ np.linalg.pinv(Fbb, rcond=1e-12, hermitian=True) @ Fqb.T
        w = np.linalg.eigvalsh(efim)
        if w[0] <= 1e-12 * max(abs(w[-1]), 1e-300):
            raise SingularFim("position block carries no information")
        out = PcrbResult(float(np.trace(np.linalg.inv(efim))), fallback=True)
        log.debug("PCRB via pseudo-inverse fallback")
    return out if detail else out.value


def pcrb_of(samples, R, Q=None, W=None) -> float:
    return pcrb(pfim(samples, R, Q=Q, W=W), samples.K)


# ---------------------------------------------------------------- linear maps


def hermitian_basis(M: int) -> np.ndarray:
    """Real basis of M x M Hermitian matrices, shape ``(M*M, M, M)``.

    Coordinates are ``[diag, Re upper, Im upper]`` as returned by
    :func:`hermitian_coords`.
    """
    iu = np.triu_indices(M, 1)
    B = np.zeros((M * M, M, M), complex)
    B[np.arange(M), np.arange(M), np.arange(M)] = 1.0
    m = len(iu[0])
    j = np.arange(m)
    B[M + j, iu[0], iu[1]] = 1.0
    B[M + j, iu[1], iu[0]] = 1.0
    B[M + m + j, iu[0], iu[1]] = 1j
    B[M + m + j, iu[1], iu[0]] = -1j
    return B


def hermitian_coords(X) -> np.ndarray:
    X = np.asarray(X)
    M = X.shape[-1]
    iu = np.triu_indices(M, 1)
    return np.concatenate(
        [np.real(np.diagonal(X, axis1=-2, axis2=-1)), X[..., iu[0], iu[1]].real, X[..., iu[0], iu[1]].imag],
        axis=-1,
    )


def _chunked(fn, basis, chunk):
    out = [fn(basis[i : i + chunk]) for i in range(0, len(basis), chunk)]
    return np.concatenate(out, axis=0)


def pfim_map_R(samples, W, chunk: int = 32):
    """PFIM as an affine map of the transmit covariances for fixed ``W``.

    Returns ``(F_const, Phi)`` where ``Phi[n]`` has shape ``(P, d, d)`` and
    ``PFIM = F_const + sum_n sum_j hermitian_coords(R_n)[j] * Phi[n][j]``.
    """
    N, Mt = samples.N, samples.Mt
    W = np.asarray(W, complex)
    basis = hermitian_basis(Mt)
    Phi = []
    for n in range(N):
        def fn(Bc, n=n):
            R = np.zeros((len(Bc), N, Mt, Mt), complex)
            R[:, n] = Bc
            return data_fim(samples, R, np.broadcast_to(W, (len(Bc),) + W.shape))
        Phi.append(_chunked(fn, basis, chunk))
    return prior_fim(samples.radii, N), Phi


def pfim_map_W(samples, R, chunk: int = 32):
    """PFIM as an affine map of the normalised inverse noise covariances ``W``."""
    N, Mr = samples.N, samples.Mr
    R = np.asarray(R, complex)
    basis = hermitian_basis(Mr)
    Phi = []
    for n in range(N):
        def fn(Bc, n=n):
            W = np.zeros((len(Bc), N, Mr, Mr), complex)
            W[:, n] = Bc
            return data_fim(samples, np.broadcast_to(R, (len(Bc),) + R.shape), W)
        Phi.append(_chunked(fn, basis, chunk))
    return prior_fim(samples.radii, N), Phi


def fim_to_csv(F, path, K: int | None = None):
    """Dump a FIM (and optionally its PCRB) to CSV for debugging."""
    F = np.asarray(F)
    header = "" if K is None else f"pcrb={pcrb(F, K)!r}"
    np.savetxt(path, F, delimiter=",", header=header)
