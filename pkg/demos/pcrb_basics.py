"""How the posterior bound responds to power and fronthaul with a fixed design.

Transmit covariance is isotropic at full power and every BS quantises with
the same white noise, sized so the link uses exactly its capacity.
"""
import numpy as np

from netsense.fim import pcrb, pfim, prior_fim
from netsense.optimizer import DesignProblem, init_feasible
from netsense.scenario import draw_samples, make_scenario

sc = make_scenario(mc_samples=10)
print(f"{sc.N} BSs, {sc.K} targets, Mt={sc.Mt}, Mr={sc.Mr}")
print(f"prior-only bound: {pcrb(prior_fim(sc.radii, sc.N), sc.K):.4e} km^2\n")

print("power  bits   PCRB [km^2]")
for P in (21, 29, 37):
    for D in (2, 8, 64):
        s = make_scenario(mc_samples=10, power_dbm=P, fronthaul_bits=D)
        ss = draw_samples(s)
        point, _ = init_feasible(DesignProblem.from_scenario(s, ss))
        print(f"{P:5d} {D:5d}   {pcrb(pfim(ss, point.R, W=point.Tt), s.K):.4e}")
