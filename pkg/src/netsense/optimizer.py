"""Joint transmit/compression design by alternating successive convex approximation.

Variables are kept in normalised form: ``R[n]`` in W and ``Tt[n] = sigma2 T_n =
(I + Q_n / sigma2)^{-1}``, which is exactly the ``W`` consumed by
:mod:`netsense.fim`. The PFIM is linear in ``R`` for fixed ``Tt`` and linear
in ``Tt`` for fixed ``R``, so each SCA step is one SDP.

Every candidate returned by the solver is re-evaluated with the exact PCRB
and exact rate. A candidate that would increase the PCRB (possible only
through solver inaccuracy) is rejected and the loop stops with a flag, so
reported traces are monotone by construction.
"""
from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field, replace

import cvxpy as cp
import numpy as np

from . import fronthaul as fh
from .convex import SdpProblem, SolverConfig, fim_expression, preconditioner, schur_pcrb_lmis
from .errors import RateUnbounded
from .fim import pcrb, pfim, pfim_map_R, pfim_map_W

log = logging.getLogger(__name__)

# tolerances on accepted iterates
POWER_SLACK = 1e-8
RATE_SLACK = 1e-6
T_MARGIN = 1e-9
# relative PCRB increase attributed to solver accuracy rather than divergence
ASCENT_TOL = 1e-6


@dataclass(frozen=True)
class OptimizerConfig:
    eps_sca: float = 1e-4
    eps_ao: float = 1e-4
    max_inner: int = 30
    max_outer: int = 20
    solver: SolverConfig = field(default_factory=SolverConfig.from_env)


@dataclass(frozen=True)
class DesignProblem:
    """Sample set plus per-BS power budgets (W) and fronthaul caps (bits/sample).

    ``cap = inf`` removes the fronthaul constraint.
    """

    samples: object
    power: np.ndarray
    cap: np.ndarray

    @classmethod
    def from_scenario(cls, scenario, samples):
        return cls(samples, np.asarray(scenario.power_budget, float), np.asarray(scenario.fronthaul_cap, float))

    @property
    def N(self):
        return self.samples.N

    @property
    def K(self):
        return self.samples.K

    def with_cap(self, cap):
        return replace(self, cap=np.broadcast_to(np.asarray(cap, float), (self.N,)).copy())


@dataclass
class DesignPoint:
    """Transmit covariances ``R`` (W) and normalised inverse noise ``Tt``."""

    R: np.ndarray
    Tt: np.ndarray
    sigma2: float
    objective: float = np.nan
    power_slack: np.ndarray | None = None
    rate_slack: np.ndarray | None = None

    @property
    def T(self):
        return self.Tt / self.sigma2

    @property
    def Q(self):
        """Compression noise in W; ``inf`` eigen-directions map to huge values."""
        M = self.Tt.shape[-1]
        w, U = np.linalg.eigh(self.Tt)
        q = self.sigma2 * (1.0 / np.maximum(w, 1e-300) - 1.0)
        q = np.maximum(q, 0.0)
        return (U * q[..., None, :]) @ np.swapaxes(U.conj(), -1, -2)

    def max_violation(self, prob: DesignProblem) -> float:
        p = np.real(np.trace(self.R, axis1=-2, axis2=-1)) - prob.power
        v = [float(np.max(p / prob.power))]
        if np.all(np.isfinite(prob.cap)):
            try:
                v.append(float(np.max(rate(prob, self) - prob.cap)))
            except RateUnbounded:
                v.append(np.inf)
        return max(0.0, *v)


@dataclass
class IterRecord:
    iter: int
    phase: str
    objective: float
    max_constraint_violation: float
    solver_status: str


@dataclass
class OptimizerReport:
    design: DesignPoint
    trace: list = field(default_factory=list)
    inner_iterations: list = field(default_factory=list)
    termination: str = ""
    flags: list = field(default_factory=list)
    wall_ms: float = 0.0

    @property
    def objective(self) -> float:
        return self.design.objective

    @property
    def objective_trace(self) -> np.ndarray:
        return np.array([r.objective for r in self.trace])

    @property
    def outer_iterations(self) -> int:
        return max((r.iter for r in self.trace), default=0)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iter", "phase", "objective", "max_constraint_violation", "solver_status"])
        for r in self.trace:
            w.writerow([r.iter, r.phase, repr(r.objective), repr(r.max_constraint_violation), r.solver_status])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as f:
                f.write(text)
        return text


# ------------------------------------------------------------- evaluation


def objective(prob: DesignProblem, R, Tt) -> float:
    return pcrb(pfim(prob.samples, R, W=Tt), prob.K)


def rate(prob: DesignProblem, point: DesignPoint):
    return fh.rate_from_W(prob.samples, point.R, point.Tt)


def _evaluate(prob, R, Tt) -> DesignPoint:
    pt = DesignPoint(R, Tt, prob.samples.sigma2, objective(prob, R, Tt))
    pt.power_slack = prob.power - np.real(np.trace(R, axis1=-2, axis2=-1))
    if np.all(np.isfinite(prob.cap)):
        try:
            pt.rate_slack = prob.cap - rate(prob, pt)
        except RateUnbounded:
            pt.rate_slack = np.full(prob.N, -np.inf)
    return pt


def _clean_psd(X, upper=None):
    X = 0.5 * (X + np.swapaxes(X.conj(), -1, -2))
    w, U = np.linalg.eigh(X)
    clipped = np.clip(w, 0.0, upper)
    changed = bool(np.any(clipped != w))
    return (U * clipped[..., None, :]) @ np.swapaxes(U.conj(), -1, -2), changed


def _isotropic(prob):
    Mt = prob.samples.Mt
    return np.stack([p / Mt * np.eye(Mt, dtype=complex) for p in prob.power])


def _scalar_T(q, M):
    return np.stack([np.eye(M, dtype=complex) / (1.0 + qi) for qi in q])


def init_feasible(prob: DesignProblem, fraction: float = 0.95):
    """Isotropic transmission and scalar compression noise at ``fraction`` of the cap.

    Returns ``(DesignPoint, flags)``. If the cap cannot be met with any finite
    noise level the largest level tried is used and a flag is raised.
    """
    R = _isotropic(prob)
    M = prob.samples.Mr
    flags = []
    if np.all(np.isfinite(prob.cap)):
        q, ok = fh.bisect_scalar_noise(prob.samples, R, fraction * prob.cap)
        if not np.all(ok):
            flags.append("init_bisection_failed")
    else:
        q = np.zeros(prob.N)
    return _evaluate(prob, R, _scalar_T(q, M)), flags


def restore_feasibility(prob: DesignProblem, point: DesignPoint):
    """Scale transmit power down until every rate fits.

    Returns ``(point, status)`` with status ``""`` (already feasible),
    ``"restored"`` or ``"unrestorable"`` (the compression noise alone breaks
    the cap; the zero-power point is returned).
    """
    if not np.all(np.isfinite(prob.cap)):
        return point, ""
    if np.all(rate(prob, point) <= prob.cap + RATE_SLACK):
        return point, ""
    if np.any(fh.rate_from_W(prob.samples, 0.0 * point.R, point.Tt) > prob.cap + RATE_SLACK):
        return _evaluate(prob, 0.0 * point.R, point.Tt), "unrestorable"
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if np.all(fh.rate_from_W(prob.samples, mid * point.R, point.Tt) <= prob.cap):
            lo = mid
        else:
            hi = mid
    return _evaluate(prob, lo * point.R, point.Tt), "restored"


# ------------------------------------------------------------- Algorithm I


def _transmit_step(prob, Fc, Phi, point, cfg, rate_constrained):
    s = prob.samples
    N, K, Mt = prob.N, prob.K, s.Mt
    Fref = pfim(s, point.R, W=point.Tt)
    C, ts = preconditioner(Fref, 2 * K)
    sdp = SdpProblem("transmit")
    X = [sdp.hermitian(f"R{n}", Mt) for n in range(N)]  # R_n / P_n
    t = sdp.scalars("t", 2 * K)
    Phi_s = [Ph * p for Ph, p in zip(Phi, prob.power)]
    F = fim_expression(Fc, Phi_s, X, scale=C)
    sdp.add(schur_pcrb_lmis(F, t, 2 * K, scale=C, tscale=ts))
    sdp.add([cp.real(cp.trace(X[n])) <= 1.0 for n in range(N)])
    if rate_constrained:
        sur = fh.transmit_surrogate(s, point.R, point.Tt)
        for n in range(N):
            lin = sum(
                cp.real(cp.trace(sur.coef[n, u] * prob.power[u] @ X[u])) for u in range(N)
            )
            sdp.add(sur.const[n] + lin <= prob.cap[n])
    sdp.minimize((ts / ts.sum()) @ t)
    rep = sdp.solve(cfg.solver)
    if not rep.usable:
        return None, rep
    R = np.stack([rep.solution[f"R{n}"] * prob.power[n] for n in range(N)])
    R, _ = _clean_psd(R)
    tr = np.real(np.trace(R, axis1=-2, axis2=-1))
    R = R * np.minimum(1.0, prob.power / tr)[:, None, None]
    return R, rep


def sca_transmit(prob: DesignProblem, Tt, R0, cfg: OptimizerConfig | None = None,
                 rate_constrained: bool = True, iter_offset: int = 0, report=None):
    """Algorithm I: SCA over the transmit covariances for fixed compression.

    Returns an :class:`OptimizerReport` (or extends ``report``).
    """
    cfg = cfg or OptimizerConfig()
    rate_constrained = rate_constrained and bool(np.all(np.isfinite(prob.cap)))
    t0 = time.perf_counter()
    point = _evaluate(prob, np.asarray(R0, complex), np.asarray(Tt, complex))
    rep_out = report or OptimizerReport(point)
    Fc, Phi = pfim_map_R(prob.samples, point.Tt)
    inner = 0
    reason = "max_iter"
    for m in range(1, cfg.max_inner + 1):
        R, srep = _transmit_step(prob, Fc, Phi, point, cfg, rate_constrained)
        inner = m
        if R is None:
            rep_out.flags.append(f"transmit_subproblem_{srep.status}")
            reason = f"subproblem_{srep.status}"
            break
        cand = _evaluate(prob, R, point.Tt)
        viol = cand.max_violation(prob) if rate_constrained else max(
            0.0, float(np.max(-cand.power_slack / prob.power)))
        if cand.objective > point.objective or viol > RATE_SLACK:
            if viol <= RATE_SLACK and cand.objective <= point.objective * (1 + ASCENT_TOL):
                reason = "converged"  # no progress beyond solver accuracy
            else:
                rep_out.flags.append("transmit_step_rejected")
                reason = "rejected"
            break
        gain = (point.objective - cand.objective) / point.objective
        point = cand
        rep_out.trace.append(IterRecord(iter_offset + m, "R", point.objective, viol, srep.status))
        if gain < cfg.eps_sca:
            reason = "converged"
            break
    rep_out.design = point
    rep_out.inner_iterations.append(inner)
    rep_out.termination = reason
    rep_out.wall_ms += 1e3 * (time.perf_counter() - t0)
    return rep_out


# ------------------------------------------------------------- Algorithm II


def _compress_step(prob, Fc, Phi, point, cfg):
    s = prob.samples
    N, K, M = prob.N, prob.K, s.Mr
    Fref = pfim(s, point.R, W=point.Tt)
    C, ts = preconditioner(Fref, 2 * K)
    sur = fh.compression_surrogate(s, point.R, point.Tt)
    sdp = SdpProblem("compress")
    Y = [sdp.hermitian(f"T{n}", M) for n in range(N)]
    t = sdp.scalars("t", 2 * K)
    F = fim_expression(Fc, Phi, Y, scale=C)
    sdp.add(schur_pcrb_lmis(F, t, 2 * K, scale=C, tscale=ts))
    eye = np.eye(M)
    for n in range(N):
        sdp.add(eye - Y[n] >> 0)
        lin = cp.real(cp.trace(sur.coef[n] @ Y[n]))
        sdp.add(sur.const[n] + lin - cp.log_det(eye - Y[n]) / fh.LN2 <= prob.cap[n])
    sdp.minimize((ts / ts.sum()) @ t)
    rep = sdp.solve(cfg.solver)
    if not rep.usable:
        return None, rep, False
    Tt = np.stack([rep.solution[f"T{n}"] for n in range(N)])
    Tt, clamped = _clean_psd(Tt, upper=1.0 - T_MARGIN)
    return Tt, rep, clamped


def sca_compress(prob: DesignProblem, R, Tt0, cfg: OptimizerConfig | None = None,
                 iter_offset: int = 0, report=None):
    """Algorithm II: SCA over ``Tt = sigma2 T`` for fixed transmit covariances."""
    cfg = cfg or OptimizerConfig()
    t0 = time.perf_counter()
    point = _evaluate(prob, np.asarray(R, complex), np.asarray(Tt0, complex))
    rep_out = report or OptimizerReport(point)
    if not np.all(np.isfinite(prob.cap)):
        # no fronthaul limit: zero compression noise is optimal
        M = prob.samples.Mr
        point = _evaluate(prob, point.R, np.broadcast_to(np.eye(M, dtype=complex), point.Tt.shape).copy())
        rep_out.design = point
        rep_out.trace.append(IterRecord(iter_offset + 1, "Q", point.objective, 0.0, "closed_form"))
        rep_out.inner_iterations.append(0)
        return rep_out
    Fc, Phi = pfim_map_W(prob.samples, point.R)
    inner = 0
    reason = "max_iter"
    for m in range(1, cfg.max_inner + 1):
        Tt, srep, clamped = _compress_step(prob, Fc, Phi, point, cfg)
        inner = m
        if Tt is None:
            rep_out.flags.append(f"compress_subproblem_{srep.status}")
            reason = f"subproblem_{srep.status}"
            break
        if clamped:
            rep_out.flags.append("T_clamped")
        cand = _evaluate(prob, point.R, Tt)
        viol = cand.max_violation(prob)
        if cand.objective > point.objective or viol > RATE_SLACK:
            if viol <= RATE_SLACK and cand.objective <= point.objective * (1 + ASCENT_TOL):
                reason = "converged"  # no progress beyond solver accuracy
            else:
                rep_out.flags.append("compress_step_rejected")
                reason = "rejected"
            break
        gain = (point.objective - cand.objective) / point.objective
        point = cand
        rep_out.trace.append(IterRecord(iter_offset + m, "Q", point.objective, viol, srep.status))
        if gain < cfg.eps_sca:
            reason = "converged"
            break
    rep_out.design = point
    rep_out.inner_iterations.append(inner)
    rep_out.termination = reason
    rep_out.wall_ms += 1e3 * (time.perf_counter() - t0)
    return rep_out


# ------------------------------------------------------------- Algorithm III


def alternate(prob: DesignProblem, cfg: OptimizerConfig | None = None, start: DesignPoint | None = None):
    """Algorithm III: alternate Algorithm I and Algorithm II until the PCRB settles."""
    cfg = cfg or OptimizerConfig()
    t0 = time.perf_counter()
    if start is None:
        start, flags = init_feasible(prob)
    else:
        flags = []
    rep = OptimizerReport(start, flags=list(flags))
    rep.trace.append(IterRecord(0, "init", start.objective, start.max_violation(prob), "init"))
    point = start
    reason = "max_iter"
    for k in range(1, cfg.max_outer + 1):
        before = point.objective
        point, status = restore_feasibility(prob, point)
        if status:
            rep.flags.append(f"feasibility_{status}")
        mark = len(rep.trace)
        sca_transmit(prob, point.Tt, point.R, cfg, report=rep)
        sca_compress(prob, rep.design.R, rep.design.Tt, cfg, report=rep)
        for r in rep.trace[mark:]:
            r.iter = k
        point = rep.design
        if (before - point.objective) < cfg.eps_ao * before:
            reason = "converged"
            break
    rep.design = point
    rep.termination = reason
    rep.wall_ms = 1e3 * (time.perf_counter() - t0)
    return rep


# ------------------------------------------------------------- benchmarks


def bench_uniform(prob: DesignProblem, cfg: OptimizerConfig | None = None):
    """Benchmark I: per-antenna uniform compression meeting the cap, then Algorithm I."""
    cfg = cfg or OptimizerConfig()
    R0 = _isotropic(prob)
    q, ok = fh.bisect_scalar_noise(prob.samples, R0, prob.cap)
    Tt = _scalar_T(q, prob.samples.Mr)
    rep = sca_transmit(prob, Tt, R0, cfg)
    if not np.all(ok):
        rep.flags.append("bisection_failed")
    return rep


def bench_fixed_transmit(prob: DesignProblem, cfg: OptimizerConfig | None = None):
    """Benchmark II: isotropic transmission, compression by Algorithm II."""
    cfg = cfg or OptimizerConfig()
    start, flags = init_feasible(prob)
    rep = sca_compress(prob, start.R, start.Tt, cfg)
    rep.flags = flags + rep.flags
    return rep


def bench_unlimited(prob: DesignProblem, cfg: OptimizerConfig | None = None):
    """Benchmark III: no fronthaul limit (``Q = 0``); a single convex SDP in ``R``."""
    cfg = cfg or OptimizerConfig()
    M = prob.samples.Mr
    Tt = np.broadcast_to(np.eye(M, dtype=complex), (prob.N, M, M)).copy()
    return sca_transmit(prob, Tt, _isotropic(prob), cfg, rate_constrained=False)
