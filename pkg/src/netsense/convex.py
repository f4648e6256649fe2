"""Semidefinite subproblem builder and solver contract.

The PFIM enters every subproblem as an affine matrix function of one
Hermitian variable block per BS. :func:`fim_expression` turns the numeric
linear map produced by :mod:`netsense.fim` into a cvxpy expression and
:func:`schur_pcrb_lmis` turns it into the ``2K`` Schur-complement LMIs whose
auxiliary scalars bound the diagonal of the inverse.

cvxpy handles the complex-to-real embedding of Hermitian variables, so
callers work with complex semantics throughout. Clarabel is the default
backend; any conic solver with PSD support can be selected by name.
"""
from __future__ import annotations

import os
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import cvxpy as cp
import numpy as np
from scipy import sparse

from .errors import BuilderError

TOL_ENV = "NETSENSE_SOLVER_TOL"


@dataclass(frozen=True)
class SolverConfig:
    """Interior-point tolerances and backend.

    ``NETSENSE_SOLVER_TOL`` overrides the defaults; it holds either one
    number (relative gap) or ``gap,feasibility``.
    """

    gap: float = 1e-7
    feas: float = 1e-8
    max_iter: int = 500
    solver: str = "CLARABEL"

    @classmethod
    def from_env(cls, **kw) -> "SolverConfig":
        raw = os.environ.get(TOL_ENV, "").strip()
        if raw:
            parts = [float(p) for p in raw.split(",")]
            kw.setdefault("gap", parts[0])
            if len(parts) > 1:
                kw.setdefault("feas", parts[1])
        return cls(**kw)

    def options(self) -> dict:
        if self.solver.upper() == "CLARABEL":
            return dict(
                tol_gap_rel=self.gap,
                tol_gap_abs=self.gap,
                tol_feas=self.feas,
                max_iter=self.max_iter,
            )
        if self.solver.upper() == "SCS":
            return dict(eps_rel=self.gap, eps_abs=self.feas, max_iters=100 * self.max_iter)
        return {}


_STATUS = {
    cp.OPTIMAL: "optimal",
    cp.OPTIMAL_INACCURATE: "numerical",
    cp.INFEASIBLE: "infeasible",
    cp.INFEASIBLE_INACCURATE: "infeasible",
    cp.UNBOUNDED: "unbounded",
    cp.UNBOUNDED_INACCURATE: "unbounded",
    cp.USER_LIMIT: "max_iter",
}


@dataclass
class SolverReport:
    status: str
    objective: float
    solution: dict = field(default_factory=dict)
    residual: float = np.nan
    wall_ms: float = 0.0
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "optimal"

    @property
    def usable(self) -> bool:
        # inaccurate solutions are still handed back; callers re-evaluate them
        return self.status in ("optimal", "numerical") and bool(self.solution)


def _herm(X):
    return 0.5 * (X + X.conj().T)


class SdpProblem:
    """A linear objective over Hermitian/scalar variables with conic constraints.

    The object is a thin declarative layer over cvxpy: variables are created
    through :meth:`hermitian` and :meth:`scalars`, constraints appended with
    :meth:`add`, and :meth:`solve` returns a :class:`SolverReport` with every
    Hermitian variable symmetrised.
    """

    def __init__(self, name: str = "sdp"):
        self.name = name
        self.variables: dict[str, cp.Variable] = {}
        self.constraints: list = []
        self.objective = None
        self._problem = None

    def hermitian(self, name: str, M: int, psd: bool = True) -> cp.Variable:
        X = cp.Variable((M, M), hermitian=True, name=name)
        self.variables[name] = X
        if psd:
            self.constraints.append(X >> 0)
        return X

    def scalars(self, name: str, n: int, nonneg: bool = True) -> cp.Variable:
        t = cp.Variable(n, nonneg=nonneg, name=name)
        self.variables[name] = t
        return t

    def add(self, *cons):
        for c in cons:
            if isinstance(c, (list, tuple)):
                self.constraints.extend(c)
            else:
                self.constraints.append(c)

    def minimize(self, expr):
        if not expr.is_affine():
            raise BuilderError("objective must be affine")
        self.objective = expr

    @property
    def problem(self) -> cp.Problem:
        if self.objective is None:
            raise BuilderError("no objective set")
        if self._problem is None:
            self._problem = cp.Problem(cp.Minimize(self.objective), self.constraints)
        return self._problem

    def solve(self, config: SolverConfig | None = None) -> SolverReport:
        config = config or SolverConfig.from_env()
        prob = self.problem
        t0 = time.perf_counter()
        try:
            with warnings.catch_warnings():
                # inaccuracy is reported through the status instead
                warnings.simplefilter("ignore", UserWarning)
                prob.solve(solver=config.solver, **config.options())
            status = _STATUS.get(prob.status, "numerical")
            msg = prob.status
        except cp.SolverError as exc:
            status, msg = "numerical", str(exc)
        wall = 1e3 * (time.perf_counter() - t0)
        sol = {}
        if status in ("optimal", "numerical"):
            for name, v in self.variables.items():
                if v.value is None:
                    sol = {}
                    status = "numerical"
                    break
                val = np.array(v.value)
                sol[name] = _herm(val) if v.is_hermitian() and val.ndim == 2 else val
        residual = np.nan
        if sol:
            viol = [c.violation() for c in self.constraints]
            residual = float(max((np.max(np.atleast_1d(v)) for v in viol), default=0.0))
        value = float(prob.value) if prob.value is not None else np.nan
        return SolverReport(status, value, sol, residual, wall, msg)

    def dump(self, path, config: SolverConfig | None = None) -> None:
        """Write the conic standard form ``min c'x s.t. b - Ax in K`` as text."""
        config = config or SolverConfig.from_env()
        data = self.problem.get_problem_data(config.solver)[0]
        A = sparse.coo_matrix(data["A"])
        lines = [f"# {self.name}: min c'x  s.t.  b - A x in K", f"n {A.shape[1]}", f"m {A.shape[0]}"]
        dims = data["dims"]
        lines.append(f"cone zero {dims.zero}")
        lines.append(f"cone nonneg {dims.nonneg}")
        lines.append("cone soc " + " ".join(map(str, dims.soc)))
        lines.append("cone psd " + " ".join(map(str, dims.psd)))
        lines.append("cone exp " + str(dims.exp))
        lines.append("c " + " ".join(repr(float(x)) for x in data["c"]))
        lines.append("b " + " ".join(repr(float(x)) for x in data["b"]))
        lines.append(f"A {A.nnz}")
        lines += [f"{i} {j} {v!r}" for i, j, v in zip(A.row, A.col, A.data)]
        Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------- builders


def coord_selectors(M: int):
    """Sparse maps ``S_re, S_im`` with ``coords(X) = S_re vec(Re X) + S_im vec(Im X)``.

    ``vec`` is column-major and ``coords`` follows
    :func:`netsense.fim.hermitian_coords`.
    """
    iu = np.triu_indices(M, 1)
    m = len(iu[0])
    P = M * M
    S_re = np.zeros((P, P))
    S_im = np.zeros((P, P))
    vec = lambda i, j: i + M * j
    for i in range(M):
        S_re[i, vec(i, i)] = 1.0
    for k, (i, j) in enumerate(zip(*iu)):
        S_re[M + k, vec(i, j)] = 1.0
        S_im[M + m + k, vec(i, j)] = 1.0
    return S_re, S_im


def _as_congruence(scale, d):
    if scale is None:
        return np.eye(d)
    scale = np.asarray(scale, float)
    return np.diag(scale) if scale.ndim == 1 else scale


def fim_expression(F_const, Phi, variables, scale=None):
    """Affine cvxpy expression ``P (F_const + sum_n Phi_n[coords(X_n)]) P^T``.

    ``Phi[n]`` has shape ``(P, d, d)`` as returned by ``pfim_map_*`` and
    ``variables[n]`` is the matching Hermitian variable (or ``None`` to skip a
    block). ``scale`` is the congruence ``P`` (a vector means ``diag``).
    """
    d = F_const.shape[0]
    C = _as_congruence(scale, d)
    expr = cp.Constant((C @ F_const @ C.T).reshape(-1, order="F"))
    for Ph, X in zip(Phi, variables):
        if X is None:
            continue
        if not X.is_affine():
            raise BuilderError("FIM map must be driven by affine expressions")
        M = X.shape[0]
        S_re, S_im = coord_selectors(M)
        Pc = np.einsum("ab,jbc,dc->jad", C, Ph, C, optimize=True)
        Pm = Pc.reshape(Ph.shape[0], -1, order="F").T  # (d*d, P)
        expr = expr + (Pm @ S_re) @ cp.vec(cp.real(X), order="F") + (Pm @ S_im) @ cp.vec(cp.imag(X), order="F")
    out = cp.reshape(expr, (d, d), order="F")
    if not out.is_affine():
        raise BuilderError("FIM expression is not affine")
    return out


def schur_pcrb_lmis(F, t, p: int | None = None, scale=None, tscale=1.0):
    """``[[F, e_i], [e_i^T, t_i]] >= 0`` for the first ``p`` coordinates.

    ``F`` is an affine expression, possibly preconditioned as
    ``P F_true P^T`` with the same ``scale = P`` passed here; then
    ``tscale[i] * t_i >= [F_true^{-1}]_ii`` at optimality. ``p`` defaults to
    the length of ``t``.
    """
    if isinstance(F, np.ndarray):
        F = cp.Constant(F)
    if not F.is_affine():
        raise BuilderError("PFIM map is not affine in the design variables")
    d = F.shape[0]
    p = t.shape[0] if p is None else p
    C = _as_congruence(scale, d)
    ts = np.broadcast_to(np.asarray(tscale, float), (p,))
    cons = []
    for i in range(p):
        e = C[:, [i]] / np.sqrt(ts[i])
        cons.append(cp.bmat([[F, e], [e.T, cp.reshape(t[i], (1, 1), order="F")]]) >> 0)
    return cons


def min_trace_inverse(F, p: int, config: SolverConfig | None = None) -> SolverReport:
    """Solve ``min sum t`` under the Schur LMIs for a fixed numeric ``F``."""
    F = np.asarray(F, float)
    C, ts = preconditioner(F, p)
    sdp = SdpProblem("schur")
    t = sdp.scalars("t", p)
    sdp.add(schur_pcrb_lmis(C @ F @ C.T, t, p, scale=C, tscale=ts))
    sdp.minimize(ts @ t)
    rep = sdp.solve(config)
    if rep.solution:
        rep.solution["t"] = rep.solution["t"] * ts
        rep.objective = float(np.sum(rep.solution["t"]))
    return rep


def preconditioner(F_ref, p: int, floor: float = 1e-10):
    """Congruence ``P`` and per-coordinate scales for the Schur LMIs.

    ``P`` whitens a reference FIM (``P F_ref P^T = I`` when it is well
    conditioned) so the LMIs are solved near the identity. Eigenvalues below
    ``floor`` times the largest are lifted, which keeps ``P`` finite when the
    reference is singular. The scales are the reference values of
    ``[F^{-1}]_ii`` so every auxiliary scalar is O(1).
    """
    F_ref = 0.5 * (F_ref + F_ref.T)
    D = 1.0 / np.sqrt(np.maximum(np.abs(np.diag(F_ref)), 1e-300))
    w, U = np.linalg.eigh(F_ref * np.outer(D, D))
    w = np.maximum(w, floor * max(w[-1], 1e-300))
    P = (U / np.sqrt(w)).T * D[None, :]
    inv_diag = np.einsum("ia,ia->i", P.T[:p], P.T[:p])  # diag(P^T P) = diag(F_ref^{-1})
    ts = np.where(np.isfinite(inv_diag) & (inv_diag > 0), inv_diag, 1.0)
    return P, ts
