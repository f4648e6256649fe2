"""Joint transmit and compression design against the three benchmarks.

Bench I keeps isotropic transmission and optimises only the quantisers,
Bench II fixes uniform quantisation noise and shapes the transmit side, and
Bench III ignores the fronthaul entirely (a lower bound for the others).
"""
from netsense.optimizer import (
    DesignProblem,
    OptimizerConfig,
    alternate,
    bench_fixed_transmit,
    bench_uniform,
    bench_unlimited,
)
from netsense.scenario import draw_samples, make_scenario

cfg = OptimizerConfig(max_outer=8, max_inner=15)
print("bits   unlimited    joint        bench I      bench II")
for D in (4, 8, 16):
    sc = make_scenario(mc_samples=10, fronthaul_bits=D)
    prob = DesignProblem.from_scenario(sc, draw_samples(sc))
    vals = [fn(prob, cfg).objective for fn in (bench_unlimited, alternate, bench_uniform, bench_fixed_transmit)]
    print(f"{D:4d}   " + "   ".join(f"{v:.4e}" for v in vals))
