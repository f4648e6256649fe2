"""Estimate, beamform, then compress.

Each BS estimates the target angles with MUSIC, projects its received vector
onto the span of ``Delta = [A, P_perp(A) Adot]`` evaluated at the estimates,
and compresses only that ``Lr``-dimensional signal. With orthonormal
beamformers the reduced model is the full model with ``A -> C^H A``,
``Adot -> C^H Adot`` and ``Mr -> Lr``, so the whole optimisation stack is
reused unchanged on a reduced :class:`~netsense.scenario.SampleSet`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.signal import find_peaks

from . import fronthaul as fh
from .errors import AoaFailure, DegenerateAngles, ShapeError
from .fim import pfim
from .optimizer import DesignProblem, OptimizerConfig, _evaluate, alternate
from .scenario import sample_set_from_positions, steering, steering_derivative

GRID_DEG = 0.1
MUSIC_SNAPSHOTS = 256
MUSIC_SNR_DB = 10.0


# ---------------------------------------------------------------- MUSIC


def music_spectrum(cov, K: int, grid):
    """MUSIC pseudo-spectrum of a sample covariance on an angle grid (rad)."""
    Mr = cov.shape[0]
    w, U = np.linalg.eigh(0.5 * (cov + cov.conj().T))
    En = U[:, : Mr - K]  # noise subspace (smallest eigenvalues)
    a = steering(grid, Mr)  # (G, Mr)
    proj = np.einsum("ga,ak->gk", a.conj(), En)
    return 1.0 / np.maximum(np.sum(np.abs(proj) ** 2, axis=1), 1e-300)


def music_peaks(cov, K: int, grid_deg: float = GRID_DEG):
    """The ``K`` largest MUSIC peaks with quadratic refinement, sorted (rad).

    Raises :class:`AoaFailure` (with the peaks found) when fewer than ``K``
    local maxima exist.
    """
    Mr = cov.shape[0]
    if Mr <= K:
        raise ShapeError("MUSIC needs more receive antennas than targets")
    step = np.deg2rad(grid_deg)
    grid = np.arange(-np.pi / 2 + step, np.pi / 2, step)
    spec = 10 * np.log10(music_spectrum(cov, K, grid))
    idx, _ = find_peaks(spec)
    idx = idx[np.argsort(spec[idx])[::-1]][:K]
    est = []
    for i in idx:
        y0, y1, y2 = spec[i - 1], spec[i], spec[i + 1]
        den = y0 - 2 * y1 + y2
        off = 0.5 * (y0 - y2) / den if den < 0 else 0.0
        est.append(grid[i] + np.clip(off, -0.5, 0.5) * step)
    est = np.sort(np.array(est))
    if len(est) < K:
        raise AoaFailure(f"found {len(est)} of {K} peaks", partial=est)
    return est


def sample_covariance(cov, L: int, rng):
    """Sample covariance of ``L`` i.i.d. ``CN(0, cov)`` snapshots.

    Drawn directly from the complex Wishart law (Bartlett construction), so
    the cost does not grow with ``L``.
    """
    M = cov.shape[0]
    if L < M:
        raise ValueError("need at least as many snapshots as antennas")
    B = np.zeros((M, M), complex)
    dof = 2 * (L - np.arange(M))
    B[np.diag_indices(M)] = np.sqrt(rng.chisquare(dof) / 2)
    il = np.tril_indices(M, -1)
    B[il] = (rng.standard_normal(len(il[0])) + 1j * rng.standard_normal(len(il[0]))) / np.sqrt(2)
    H = fh.psd_sqrt(cov) @ B
    return H @ H.conj().T / L


def estimate_aoa(samples, R=None, s: int = 0, snapshots: int = MUSIC_SNAPSHOTS, rng=None,
                 snr_db: float | None = MUSIC_SNR_DB, grid_deg: float = GRID_DEG, reference=None):
    """MUSIC angle estimates ``(N, K)`` for draw ``s`` of the sample set.

    With ``snr_db`` set, each BS observes ``K`` uncorrelated unit-power
    sources at the true angles with that per-element SNR. With
    ``snr_db=None`` the physical echo covariance under transmit covariances
    ``R`` (W) is used instead. Either way the sample covariance of
    ``snapshots`` snapshots feeds MUSIC. Peaks are associated with targets by
    a minimum-distance assignment to ``reference`` angles (default: the true
    angles of draw ``s``), so the output columns follow target order.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    N, K, Mr = samples.N, samples.K, samples.Mr
    ref = samples.theta[s] if reference is None else np.asarray(reference)
    if snr_db is None:
        if R is None:
            raise ValueError("physical-echo mode needs transmit covariances R")
        J = fh.echo_covariance(samples.subset(s), np.asarray(R, complex))[0]
    else:
        A = samples.A[s]  # (N, Mr, K)
        J = 10 ** (snr_db / 10) * np.einsum("nak,nbk->nab", A, A.conj())
    out = np.empty((N, K))
    for n in range(N):
        cov = sample_covariance(np.eye(Mr) + J[n], snapshots, rng)
        est = music_peaks(cov, K, grid_deg)
        cost = np.abs(est[:, None] - ref[n][None, :])
        r, c = linear_sum_assignment(cost)
        out[n, c] = est[r]
    return out


# ---------------------------------------------------------------- beamformers


def delta_matrix(theta, Mr: int):
    """``[A, P_perp(A) Adot]`` for the angles ``theta`` (K,)."""
    theta = np.atleast_1d(np.asarray(theta, float))
    A = steering(theta, Mr).T
    Ad = steering_derivative(theta, Mr).T
    if np.linalg.matrix_rank(A, tol=1e-9 * np.sqrt(Mr)) < len(theta):
        raise DegenerateAngles("steering matrix is rank deficient")
    P = np.eye(Mr) - A @ np.linalg.solve(A.conj().T @ A, A.conj().T)
    return np.concatenate([A, P @ Ad], axis=1)


def beamformers(theta_hat, Mr: int, Lr: int | None = None):
    """Orthonormal receive beamformers per BS, shape ``(N, Mr, Lr)``.

    Columns are the leading eigenvectors of ``Delta Delta^H`` in decreasing
    eigenvalue order. ``Lr`` defaults to ``2K``; larger values append
    eigenvectors of the null space.
    """
    theta_hat = np.atleast_2d(theta_hat)
    K = theta_hat.shape[1]
    Lr = 2 * K if Lr is None else Lr
    if not 1 <= Lr <= Mr:
        raise ShapeError(f"need 1 <= Lr <= Mr, got Lr={Lr}")
    out = []
    for th in theta_hat:
        D = delta_matrix(th, Mr)
        w, U = np.linalg.eigh(D @ D.conj().T)
        out.append(U[:, ::-1][:, :Lr])
    return np.stack(out)


def dft_beamformers(theta_hat, Mr: int, Lr: int | None = None):
    """``Lr`` unit-norm DFT columns whose spatial frequencies are nearest the estimates."""
    theta_hat = np.atleast_2d(theta_hat)
    K = theta_hat.shape[1]
    Lr = 2 * K if Lr is None else Lr
    freqs = (2.0 * np.arange(Mr) / Mr + 1.0) % 2.0 - 1.0  # sin(theta) of each column
    F = np.exp(1j * np.pi * np.outer(np.arange(Mr), freqs)) / np.sqrt(Mr)
    out = []
    for th in theta_hat:
        dist = np.abs((freqs[None, :] - np.sin(th)[:, None] + 1.0) % 2.0 - 1.0)  # (K, Mr)
        order = np.argsort(dist, axis=1, kind="stable")
        chosen = []
        for rank in range(Mr):
            for k in range(K):
                c = int(order[k, rank])
                if c not in chosen:
                    chosen.append(c)
            if len(chosen) >= Lr:
                break
        out.append(F[:, chosen[:Lr]])
    return np.stack(out)


# ---------------------------------------------------------------- reduced model


def reduce_samples(samples, C):
    """Sample set seen through receive beamformers ``C`` (N, Mr, Lr)."""
    C = np.asarray(C, complex)
    if C.shape[:2] != (samples.N, samples.Mr):
        raise ShapeError(f"C must have shape (N, Mr, Lr), got {C.shape}")
    A = np.einsum("nml,snmk->snlk", C.conj(), samples.A)
    Ad = np.einsum("nml,snmk->snlk", C.conj(), samples.Adot)
    return samples.with_receive(A, Ad)


def _receive_weight(C, Qdd, sigma2):
    # C (C^H C + Qdd / sigma2)^{-1} C^H, the full-dimension W seen by the FIM
    G = np.einsum("nml,nmk->nlk", C.conj(), C)
    inner = G + np.asarray(Qdd, complex) / sigma2
    return np.einsum("nml,nlk,npk->nmp", C, np.linalg.inv(inner), C.conj())


def fim_ebc(samples, R, C, Qdd):
    """PFIM when BS ``n`` forwards ``C_n^H y_n`` compressed with noise ``Qdd_n`` (W).

    ``C`` may be ``(N, Mr, Lr)`` or per draw ``(S, N, Mr, Lr)``; any full
    column rank beamformer is accepted. The prior FIM is used unrefined.
    """
    C = np.asarray(C, complex)
    if C.ndim == 3:
        return pfim(samples, R, W=_receive_weight(C, Qdd, samples.sigma2))
    if C.ndim != 4 or C.shape[0] != samples.S:
        raise ShapeError("per-draw beamformers must have shape (S, N, Mr, Lr)")
    Fs = [pfim(samples.subset(s), R, W=_receive_weight(C[s], Qdd, samples.sigma2)) for s in range(samples.S)]
    return np.mean(Fs, axis=0)


def rate_ebc(samples, R, C, Qdd):
    """Per-BS rate of the beamformed signal: ``E log2|C^H J C + sigma2 C^H C + Qdd| - log2|Qdd|``."""
    C = np.asarray(C, complex)
    gram = np.einsum("nml,nmk->nlk", C.conj(), C)
    return fh.compression_rate(reduce_samples(samples, C), R, Qdd, gram=gram)


# ---------------------------------------------------------------- plan + optimisation


@dataclass
class EbcPlan:
    """Estimated angles ``(N, K)`` and the beamformers ``(N, Mr, Lr)`` built from them."""

    angles: np.ndarray
    C: np.ndarray
    kind: str = "eigen"

    @property
    def Lr(self) -> int:
        return self.C.shape[-1]

    def to_text(self) -> str:
        obj = {
            "kind": self.kind,
            "angles": np.asarray(self.angles).tolist(),
            "C_real": self.C.real.tolist(),
            "C_imag": self.C.imag.tolist(),
        }
        return json.dumps(obj, indent=1)

    @classmethod
    def from_text(cls, text: str) -> "EbcPlan":
        obj = json.loads(text)
        C = np.asarray(obj["C_real"]) + 1j * np.asarray(obj["C_imag"])
        return cls(np.asarray(obj["angles"]), C, obj.get("kind", "eigen"))


BEAMFORMER_KINDS = ("eigen", "minus_one", "plus_one", "dft", "identity")


def make_plan(scenario, samples, kind: str = "eigen", rng=None, snapshots: int = MUSIC_SNAPSHOTS,
              snr_db: float | None = MUSIC_SNR_DB) -> EbcPlan:
    """Estimate angles at the prior centres and build beamformers of ``kind``.

    ``eigen`` uses ``Lr = 2K`` eigen-beamformers, ``minus_one`` keeps the
    first ``2K - 1`` of them, ``plus_one`` appends one orthogonal direction,
    ``dft`` picks ``2K`` DFT columns and ``identity`` skips the reduction.
    """
    if kind not in BEAMFORMER_KINDS:
        raise ValueError(f"unknown beamformer kind {kind!r}")
    K, Mr = samples.K, samples.Mr
    if kind == "identity":
        C = np.broadcast_to(np.eye(Mr, dtype=complex), (samples.N, Mr, Mr)).copy()
        return EbcPlan(np.full((samples.N, K), np.nan), C, kind)
    centre = sample_set_from_positions(scenario, scenario.centers[None])
    R = np.stack([p / samples.Mt * np.eye(samples.Mt) for p in scenario.power_budget])
    ang = estimate_aoa(centre, R, 0, snapshots=snapshots, rng=rng, snr_db=snr_db)
    if kind == "dft":
        C = dft_beamformers(ang, Mr)
    else:
        Lr = {"eigen": 2 * K, "minus_one": 2 * K - 1, "plus_one": 2 * K + 1}[kind]
        C = beamformers(ang, Mr, min(Lr, Mr))
    return EbcPlan(ang, C, kind)


def optimize_ebc(scenario, samples, plan: EbcPlan | None = None, cfg: OptimizerConfig | None = None,
                 rng=None):
    """Alternating design on the beamformed signals; returns ``(report, plan)``.

    Beamformers are orthonormalised first (the PFIM and the rate depend on
    ``C`` only through its column space once ``Qdd`` is re-parameterised),
    so the reduced problem is the full one with ``Mr = Lr``.
    """
    plan = plan or make_plan(scenario, samples, rng=rng)
    Qo, _ = np.linalg.qr(plan.C)
    reduced = reduce_samples(samples, Qo)
    prob = DesignProblem(reduced, np.asarray(scenario.power_budget, float), np.asarray(scenario.fronthaul_cap, float))
    rep = alternate(prob, cfg)
    return rep, EbcPlan(plan.angles, Qo, plan.kind)


# floor on the lifted W outside the beam space; the rate check needs W > 0
LIFT_EPS = 1e-12


def lift_design(prob: DesignProblem, point, C, eps: float = LIFT_EPS):
    """Full-dimension design equivalent to a beamformed one with orthonormal ``C``.

    ``W = C Wr C^H`` plus ``eps`` on the orthogonal complement, i.e. all but
    infinite quantisation noise outside the beams.
    """
    Mr = C.shape[1]
    P = C @ np.swapaxes(C.conj(), -1, -2)
    Tt = C @ point.Tt @ np.swapaxes(C.conj(), -1, -2) + eps * (np.eye(Mr) - P)
    return _evaluate(prob, point.R, Tt)


def optimize_unreduced(scenario, samples, cfg: OptimizerConfig | None = None, rng=None, **plan_kw):
    """Design without receive beamforming, seeded from the EBC solution when one exists.

    Every EBC design is reachable at full dimension, so starting there keeps
    this scheme at or below EBC despite SCA being a local method. Returns
    ``(report, plan)`` with an identity plan.
    """
    K, Mr, N = samples.K, samples.Mr, samples.N
    prob = DesignProblem.from_scenario(scenario, samples)
    start = None
    if Mr > 2 * K:
        eig, eplan = optimize_ebc(scenario, samples, make_plan(scenario, samples, rng=rng, **plan_kw), cfg)
        start = lift_design(prob, eig.design, eplan.C)
        angles = eplan.angles
    else:
        angles = np.full((N, K), np.nan)
    rep = alternate(prob, cfg, start=start)
    return rep, EbcPlan(angles, np.broadcast_to(np.eye(Mr, dtype=complex), (N, Mr, Mr)).copy(), "identity")

