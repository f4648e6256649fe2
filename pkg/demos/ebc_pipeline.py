"""Estimate angles with MUSIC, beamform onto 2K dimensions, then compress.

With eight receive antennas and two targets each BS forwards four streams
instead of eight. The identity beamformer row is the same design problem
solved at full dimension.
"""
import numpy as np

from netsense.ebc import make_plan, optimize_ebc
from netsense.optimizer import OptimizerConfig
from netsense.scenario import draw_samples, make_scenario

sc = make_scenario(Mr=8, mc_samples=10)
ss = draw_samples(sc)
cfg = OptimizerConfig(max_outer=6, max_inner=15)

plan = make_plan(sc, ss, rng=np.random.default_rng(7))
print("estimated angles (deg) per BS:", np.round(np.degrees(plan.angles), 2).tolist())
print("true angles of the prior means:", np.round(np.degrees(ss.theta.mean(axis=0)), 2).tolist())

for kind in ("eigen", "dft", "identity"):
    p = make_plan(sc, ss, kind=kind, rng=np.random.default_rng(7))
    rep, p = optimize_ebc(sc, ss, p, cfg)
    print(f"{kind:9s} Lr={p.Lr}  PCRB {rep.objective:.4e} km^2  {rep.wall_ms / 1e3:.1f} s")
