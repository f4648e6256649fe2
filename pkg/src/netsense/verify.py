"""Self-check suites behind ``netsense verify``.

Each suite returns a :class:`SuiteResult`. They run at desk-scale sizes and
are meant as a smoke test of a fresh install; the test-suite covers the same
ground at full strength.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from . import fronthaul as fh
from .ebc import beamformers, fim_ebc
from .fim import assemble_F0_zeta, pcrb, pfim, zeta_blocks
from .optimizer import DesignProblem, OptimizerConfig, alternate, init_feasible, sca_compress, sca_transmit
from .oracle import fim_elementwise, fim_finite_difference
from .scenario import draw_samples, make_scenario


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag}  {self.name:<22} {self.detail}  ({self.seconds:.1f} s)"


def _rel(a, b):
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def random_psd(rng, M, scale=1.0, n=None):
    shape = (M, M) if n is None else (n, M, M)
    X = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return scale * X @ np.swapaxes(X.conj(), -1, -2) / M


def oracle_instance(seed: int, Mt=3, Mr=3):
    """Small random instance with O(1) gains so finite differences are well scaled."""
    rng = np.random.default_rng(seed)
    sc = make_scenario(Mt=Mt, Mr=Mr, mc_samples=1, seed=seed, snapshots=1)
    ss = draw_samples(sc)
    N, K = ss.N, ss.K
    gain = rng.standard_normal((N, N, K)) + 1j * rng.standard_normal((N, N, K))
    ss = replace(ss, gain=gain)
    R = random_psd(rng, Mt, n=N)
    W = np.linalg.inv(np.eye(Mr) + random_psd(rng, Mr, n=N))
    return ss, R, W


def fim_disagreement(ss, R, W):
    """Pairwise relative Frobenius errors (block vs FD, block vs element-wise, element-wise vs FD)."""
    F1, F2, F3 = (x[0] for x in zeta_blocks(ss, R, W))
    Fb = assemble_F0_zeta(F1, F2, F3)
    Fe = assemble_F0_zeta(*fim_elementwise(ss, 0, R, W))
    Ffd = fim_finite_difference(ss, 0, R, W)
    return _rel(Fb, Ffd), _rel(Fb, Fe), _rel(Fe, Ffd)


def suite_oracle(n=5, tol=1e-4) -> SuiteResult:
    t0 = time.perf_counter()
    worst = max(max(fim_disagreement(*oracle_instance(s))) for s in range(n))
    return SuiteResult("oracle agreement", worst < tol, f"worst rel err {worst:.2e} (tol {tol:g})",
                       time.perf_counter() - t0)


def surrogate_gaps(seed=0, trials=100, mc_samples=5):
    """Tangency gaps and the smallest majorisation margins of both rate surrogates."""
    rng = np.random.default_rng(seed)
    sc = make_scenario(mc_samples=mc_samples, seed=seed)
    ss = draw_samples(sc)
    s2, N, Mt, Mr = sc.sigma2, ss.N, ss.Mt, ss.Mr
    R = random_psd(rng, Mt, sc.power_budget[0] / Mt, n=N)
    Q = random_psd(rng, Mr, s2, n=N)
    T = np.linalg.inv(s2 * np.eye(Mr) + Q)
    tan_R = float(np.max(np.abs(fh.surrogate_Dhat(ss, R, R, Q) - fh.rate_D(ss, R, Q))))
    tan_T = float(np.max(np.abs(fh.surrogate_Dtilde(ss, R, T, T) - fh.rate_D_T(ss, R, T))))
    maj_R = maj_T = np.inf
    for _ in range(trials):
        R2 = random_psd(rng, Mt, sc.power_budget[0] * rng.uniform(0.01, 2.0) / Mt, n=N)
        maj_R = min(maj_R, float(np.min(fh.surrogate_Dhat(ss, R2, R, Q) - fh.rate_D(ss, R2, Q))))
        Q2 = random_psd(rng, Mr, s2 * rng.uniform(0.01, 10.0), n=N)
        T2 = np.linalg.inv(s2 * np.eye(Mr) + Q2)
        maj_T = min(maj_T, float(np.min(fh.surrogate_Dtilde(ss, R, T, T2) - fh.rate_D_T(ss, R, T2))))
    return tan_R, tan_T, maj_R, maj_T


def suite_surrogates(trials=20) -> SuiteResult:
    t0 = time.perf_counter()
    tan_R, tan_T, maj_R, maj_T = surrogate_gaps(trials=trials)
    ok = max(tan_R, tan_T) <= 1e-9 and min(maj_R, maj_T) >= -1e-9
    detail = f"tangency {max(tan_R, tan_T):.1e}, min margin {min(maj_R, maj_T):.2e}"
    return SuiteResult("surrogate contracts", ok, detail, time.perf_counter() - t0)


def invariance_gaps(seed=0, Mr=8, mc_samples=5):
    """Relative PCRB gaps for ``C = E_r(true angles)`` vs ``C = I`` and for ``C -> C L``."""
    rng = np.random.default_rng(seed)
    sc = make_scenario(Mr=Mr, mc_samples=mc_samples, seed=seed)
    ss = draw_samples(sc)
    R = np.stack([p / ss.Mt * np.eye(ss.Mt) for p in sc.power_budget])
    K, N = ss.K, ss.N
    base = pcrb(pfim(ss, R, W=np.broadcast_to(np.eye(Mr), (N, Mr, Mr))), K)
    C = np.stack([beamformers(ss.theta[s], Mr) for s in range(ss.S)])
    Lr = C.shape[-1]
    zero = np.zeros((N, Lr, Lr))
    eig = pcrb(fim_ebc(ss, R, C, zero), K)
    L = rng.standard_normal((N, Lr, Lr)) + 1j * rng.standard_normal((N, Lr, Lr))
    mixed = pcrb(fim_ebc(ss, R, C @ L[None], zero), K)
    return abs(eig - base) / base, abs(mixed - eig) / eig


def suite_invariance(tol=1e-6) -> SuiteResult:
    t0 = time.perf_counter()
    g1, g2 = invariance_gaps()
    return SuiteResult("beamformer invariance", max(g1, g2) < tol, f"gaps {g1:.1e}, {g2:.1e}",
                       time.perf_counter() - t0)


def is_nonincreasing(trace, rel=1e-6) -> bool:
    trace = np.asarray(trace, float)
    return bool(np.all(trace[1:] <= trace[:-1] * (1 + rel)))


def suite_descent(seeds=(0, 1)) -> SuiteResult:
    t0 = time.perf_counter()
    cfg = OptimizerConfig(max_outer=5, max_inner=10)
    bad = []
    for seed in seeds:
        sc = make_scenario(mc_samples=5, seed=seed)
        prob = DesignProblem.from_scenario(sc, draw_samples(sc))
        start, _ = init_feasible(prob)
        runs = {
            "I": sca_transmit(prob, start.Tt, start.R, cfg),
            "II": sca_compress(prob, start.R, start.Tt, cfg),
            "III": alternate(prob, cfg),
        }
        for name, rep in runs.items():
            trace = np.r_[start.objective, rep.objective_trace] if name != "III" else rep.objective_trace
            if not is_nonincreasing(trace) or rep.design.max_violation(prob) > 1e-6:
                bad.append(f"{name}@{seed}")
    detail = "all traces monotone" if not bad else "violations: " + ", ".join(bad)
    return SuiteResult("descent", not bad, detail, time.perf_counter() - t0)


SUITES = {
    "oracle": suite_oracle,
    "surrogates": suite_surrogates,
    "invariance": suite_invariance,
    "descent": suite_descent,
}


def run_all(names=None, echo=print) -> list[SuiteResult]:
    out = []
    for name in names or SUITES:
        res = SUITES[name]()
        if echo:
            echo(res.line())
        out.append(res)
    return out
