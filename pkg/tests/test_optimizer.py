import numpy as np
import pytest

from conftest import iso
from netsense import fronthaul as fh
from netsense.optimizer import (
    DesignPoint,
    DesignProblem,
    OptimizerConfig,
    alternate,
    bench_fixed_transmit,
    bench_uniform,
    bench_unlimited,
    init_feasible,
    rate,
    restore_feasibility,
    sca_compress,
    sca_transmit,
)
from netsense.scenario import draw_samples, make_scenario

CFG = OptimizerConfig(max_outer=6, max_inner=10)


def nonincreasing(x, rel=1e-6):
    x = np.asarray(x)
    return bool(np.all(x[1:] <= x[:-1] * (1 + rel)))


@pytest.fixture(scope="module")
def prob():
    sc = make_scenario(mc_samples=5)
    return DesignProblem.from_scenario(sc, draw_samples(sc))


@pytest.fixture(scope="module")
def runs(prob):
    return {
        "alg3": alternate(prob, CFG),
        "bench1": bench_uniform(prob, CFG),
        "bench2": bench_fixed_transmit(prob, CFG),
        "bench3": bench_unlimited(prob, CFG),
    }


def test_init_feasible(prob):
    pt, flags = init_feasible(prob)
    assert not flags
    np.testing.assert_allclose(rate(prob, pt), 0.95 * prob.cap, rtol=1e-9)
    np.testing.assert_allclose(np.trace(pt.R, axis1=1, axis2=2).real, prob.power)
    assert pt.max_violation(prob) == 0.0
    again, _ = init_feasible(prob)
    assert again.objective == pt.objective


def test_init_with_zero_power_meets_target(prob):
    zero = DesignProblem(prob.samples, prob.power * 1e-30, prob.cap)
    pt, flags = init_feasible(zero)
    assert not flags
    np.testing.assert_allclose(rate(zero, pt), 0.95 * prob.cap, rtol=1e-9)


def test_init_flags_unreachable_cap(prob):
    tight = prob.with_cap(1e-16)
    _, flags = init_feasible(tight)
    assert "init_bisection_failed" in flags


def test_transmit_descent_and_feasibility(prob):
    start, _ = init_feasible(prob)
    rep = sca_transmit(prob, start.Tt, start.R, CFG)
    assert nonincreasing(np.r_[start.objective, rep.objective_trace])
    assert rep.design.max_violation(prob) <= 1e-6
    assert all(r.phase == "R" for r in rep.trace)


def test_transmit_without_cap_is_one_sdp(prob):
    free = prob.with_cap(np.inf)
    start, _ = init_feasible(free)
    rep = sca_transmit(free, start.Tt, start.R, OptimizerConfig(max_inner=1))
    rep_many = sca_transmit(free, start.Tt, start.R, CFG)
    assert rep_many.objective == pytest.approx(rep.objective, rel=1e-5)


def test_compress_descent_and_psd_noise(prob):
    start, _ = init_feasible(prob)
    rep = sca_compress(prob, start.R, start.Tt, CFG)
    assert nonincreasing(np.r_[start.objective, rep.objective_trace])
    Q = rep.design.Q
    for q in Q:
        assert np.linalg.eigvalsh(q)[0] >= -1e-8 * np.trace(q).real
    assert np.all(rate(prob, rep.design) <= prob.cap + 1e-6)


def test_compress_without_cap_is_closed_form(prob):
    free = prob.with_cap(np.inf)
    start, _ = init_feasible(free)
    rep = sca_compress(free, start.R, start.Tt)
    np.testing.assert_allclose(rep.design.Tt, np.broadcast_to(np.eye(prob.samples.Mr), start.Tt.shape))


def test_alternate_descent(runs, prob):
    rep = runs["alg3"]
    assert rep.trace[0].phase == "init"
    assert nonincreasing(rep.objective_trace)
    outer = [min(r.objective for r in rep.trace if r.iter == k) for k in range(rep.outer_iterations + 1)]
    assert nonincreasing(outer)
    assert rep.design.max_violation(prob) <= 1e-6


def test_benchmark_ordering(runs):
    o = {k: v.objective for k, v in runs.items()}
    assert o["bench3"] <= o["alg3"] * (1 + 1e-6)
    assert o["alg3"] <= min(o["bench1"], o["bench2"]) * (1 + 1e-6)


def test_bench1_uses_full_cap(runs, prob):
    rep = runs["bench1"]
    # uniform compression is fixed at the cap; transmit design only moves R
    q = np.linalg.eigvalsh(rep.design.Tt)
    np.testing.assert_allclose(q, q[:, :1] * np.ones_like(q), rtol=1e-9)


def test_report_csv(runs, tmp_path):
    rep = runs["alg3"]
    text = rep.to_csv(tmp_path / "trace.csv")
    lines = text.splitlines()
    assert lines[0] == "iter,phase,objective,max_constraint_violation,solver_status"
    assert len(lines) == len(rep.trace) + 1
    assert (tmp_path / "trace.csv").read_text() == text
    assert {l.split(",")[1] for l in lines[1:]} <= {"init", "R", "Q"}


def test_deterministic(prob):
    cfg = OptimizerConfig(max_outer=2, max_inner=3)
    a = alternate(prob, cfg).objective_trace
    b = alternate(prob, cfg).objective_trace
    np.testing.assert_allclose(a, b, rtol=1e-9)


def test_restore_feasibility(prob):
    start, _ = init_feasible(prob)
    # Tt = I/2 costs exactly Mr bits at zero power; echoes push it above the cap
    Tt = np.stack([np.eye(prob.samples.Mr) * 0.5] * prob.N).astype(complex)
    Mr = prob.samples.Mr
    tight = prob.with_cap(Mr + 1e-3)
    bad = DesignPoint(start.R, Tt, start.sigma2)
    assert np.all(rate(tight, bad) > tight.cap)
    fixed, status = restore_feasibility(tight, bad)
    assert status == "restored"
    assert np.all(rate(tight, fixed) <= tight.cap)
    assert np.all(np.trace(fixed.R, axis1=1, axis2=2).real < prob.power)
    ok, status = restore_feasibility(prob, start)
    assert status == "" and ok is start
    _, status = restore_feasibility(prob.with_cap(Mr - 1e-3), bad)
    assert status == "unrestorable"


def test_design_point_units(prob):
    start, _ = init_feasible(prob)
    s2 = prob.samples.sigma2
    np.testing.assert_allclose(np.linalg.inv(s2 * np.eye(prob.samples.Mr) + start.Q), start.T, rtol=1e-8)
    np.testing.assert_allclose(
        fh.rate_D(prob.samples, start.R, start.Q), rate(prob, start), rtol=1e-9
    )
